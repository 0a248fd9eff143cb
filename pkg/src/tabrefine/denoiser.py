"""Diamond-shaped denoising network built on selective state-space blocks.

Each scalar feature of a row becomes one token; tokens are embedded, tagged
with positional, mask, and noise-level information, then passed through two
widening and two narrowing residual SSM blocks (hidden 32 -> 64 -> 128 ->
64 -> 32) with skip connections between matching widths, and finally
projected back to one scalar per feature. The output is read as a score
estimate for the noisy input row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class NonPositiveSigma(ValueError):
    """Noise levels must be strictly positive."""


class ShapeMismatch(ValueError):
    pass


@dataclass
class DenoiserConfig:
    d: int
    hd: int = 32
    dims: tuple = (32, 64, 128, 64, 32)
    ssm_state: int = 16
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.dims[0] != self.hd:
            raise ValueError("dims[0] must equal hd")
        n = len(self.dims)
        if any(self.dims[i] != self.dims[n - 1 - i] for i in range(n)):
            raise ValueError("dims must double then halve symmetrically")


def log_sigma_features(sigma: np.ndarray, width: int) -> np.ndarray:
    """Sinusoidal features of log(sigma): width/2 geometric frequencies,
    sin and cos interleaved into a (len(sigma), width) matrix."""
    half = width // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    u = np.log(np.asarray(sigma, dtype=np.float64)).reshape(-1, 1)
    ang = u * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SsmBlock:
    """Pre-norm residual block: width projection, selective scan, gate, FC,
    dropout.

    The input-dependent step size, input and output selections (delta, B, C)
    are projected from the normalized token, making the recurrence
    content-selective. A multiplicative SiLU gate modulates the scan output
    and a negative state matrix A keeps the recurrence stable.
    """

    def __init__(self, w_in: int, w_out: int, state: int, drop: float,
                 rng: np.random.Generator):
        self.w_in, self.w_out, self.state, self.drop = w_in, w_out, state, drop
        sc_in = 1.0 / np.sqrt(w_in)
        sc = 1.0 / np.sqrt(w_out)
        rank = max(4, w_out // 16)
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=(1, w_out)))
        self.proj = Tensor(rng.standard_normal((w_in, w_out)) * sc_in, True)
        self.ln_g = Tensor(np.ones((1, w_out)), True)
        self.ln_b = Tensor(np.zeros((1, w_out)), True)
        self.a_log = Tensor(np.tile(np.log(np.arange(1, state + 1)), (w_out, 1)), True)
        self.conv_k = Tensor(np.concatenate([np.ones((1, w_out)),
                                             np.zeros((3, w_out))]) , True)
        self.w_dt_lo = Tensor(rng.standard_normal((w_out, rank)) * sc, True)
        self.w_dt_hi = Tensor(rng.standard_normal((rank, w_out)) / np.sqrt(rank), True)
        self.b_delta = Tensor(_inv_softplus(dt), True)
        self.w_bsel = Tensor(rng.standard_normal((w_out, state)) * sc, True)
        self.w_csel = Tensor(rng.standard_normal((w_out, state)) * sc, True)
        self.w_gate = Tensor(rng.standard_normal((w_out, w_out)) * sc, True)
        self.b_gate = Tensor(np.full((1, w_out), 1.0), True)
        self.w_out_proj = Tensor(rng.standard_normal((w_out, w_out)) * sc, True)
        self.b_out_proj = Tensor(np.zeros((1, w_out)), True)

    def params(self):
        return [self.proj, self.ln_g, self.ln_b, self.a_log, self.conv_k,
                self.w_dt_lo, self.w_dt_hi, self.b_delta, self.w_bsel,
                self.w_csel, self.w_gate, self.b_gate, self.w_out_proj,
                self.b_out_proj]

    def __call__(self, x: Tensor, batch: int, length: int, train: bool,
                 rng: np.random.Generator | None) -> Tensor:
        t = ad.matmul(x, self.proj)
        h = ad.layer_norm(t, self.ln_g, self.ln_b)
        h = ad.silu(ad.causal_conv1d(h, self.conv_k, batch, length))
        dt = ad.matmul(ad.matmul(h, self.w_dt_lo), self.w_dt_hi)
        delta = ad.softplus(ad.add(dt, self.b_delta))
        b_sel = ad.matmul(h, self.w_bsel)
        c_sel = ad.matmul(h, self.w_csel)
        a_neg = ad.neg(ad.softplus(self.a_log))  # smooth, strictly negative
        y = ad.selective_scan(h, delta, b_sel, c_sel, a_neg, batch, length)
        y = ad.mul(y, ad.silu(ad.add(ad.matmul(h, self.w_gate), self.b_gate)))
        z = ad.add(ad.matmul(y, self.w_out_proj), self.b_out_proj)
        z = ad.dropout(z, self.drop, rng, train)
        return ad.add(t, z)


class DenoiserNet:
    """Score-estimating network over length-d token sequences."""

    def __init__(self, cfg: DenoiserConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        hd, d = cfg.hd, cfg.d
        self.w_val = Tensor(rng.standard_normal((1, hd)), True)
        self.b_val = Tensor(np.zeros((1, hd)), True)
        self.pos = Tensor(rng.standard_normal((d, hd)) * 0.1, True)
        self.mask_emb = Tensor(rng.standard_normal((2, hd)) * 0.1, True)
        self.t_w1 = Tensor(rng.standard_normal((hd, hd)) / np.sqrt(hd), True)
        self.t_b1 = Tensor(np.zeros((1, hd)), True)
        self.t_w2 = Tensor(rng.standard_normal((hd, hd)) / np.sqrt(hd), True)
        self.t_b2 = Tensor(np.zeros((1, hd)), True)
        self.blocks = [SsmBlock(cfg.dims[i], cfg.dims[i + 1], cfg.ssm_state,
                                cfg.dropout, rng)
                       for i in range(len(cfg.dims) - 1)]
        self.head_w = Tensor(rng.standard_normal((hd, 1)) * 0.01, True)
        self.head_b = Tensor(np.zeros((1, 1)), True)

    # -- parameter bookkeeping ------------------------------------------------

    def params(self):
        out = [self.w_val, self.b_val, self.pos, self.mask_emb,
               self.t_w1, self.t_b1, self.t_w2, self.t_b2]
        for blk in self.blocks:
            out.extend(blk.params())
        out.extend([self.head_w, self.head_b])
        return out

    def param_groups(self):
        groups = {"embedding": [self.w_val, self.b_val, self.pos, self.mask_emb],
                  "time_mlp": [self.t_w1, self.t_b1, self.t_w2, self.t_b2],
                  "head": [self.head_w, self.head_b]}
        for i, blk in enumerate(self.blocks):
            groups[f"block{i}"] = blk.params()
        return groups

    @property
    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def get_state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params()]

    def set_state(self, state) -> None:
        for p, arr in zip(self.params(), state):
            if p.data.shape != arr.shape:
                raise ShapeMismatch("checkpoint shape mismatch")
            p.data = arr.copy()

    # -- forward --------------------------------------------------------------

    def time_embed(self, sigma: np.ndarray) -> Tensor:
        """Noise-level embedding: sinusoids of log(sigma) through a 2-layer MLP."""
        sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
        if np.any(sigma <= 0):
            raise NonPositiveSigma("sigma must be > 0")
        feats = Tensor(log_sigma_features(sigma, self.cfg.hd))
        h = ad.silu(ad.add(ad.matmul(feats, self.t_w1), self.t_b1))
        return ad.add(ad.matmul(h, self.t_w2), self.t_b2)

    def embed_tokens(self, x: np.ndarray, sigma, mask: np.ndarray) -> Tensor:
        """Per-feature scalar tokens with positional, mask, and noise-level
        embeddings added; rows are (batch*d) tokens."""
        x = np.asarray(x, dtype=np.float64)
        mask = np.asarray(mask)
        d = self.cfg.d
        if x.ndim != 2 or x.shape[1] != d or mask.shape != x.shape:
            raise ShapeMismatch(f"expected (batch, {d}) inputs, got {x.shape}")
        batch = x.shape[0]
        tokens = ad.matmul(Tensor(x.reshape(-1, 1)), self.w_val)
        tokens = ad.add(tokens, self.b_val)
        tokens = ad.add(tokens, ad.gather_rows(self.pos, np.tile(np.arange(d), batch)))
        tokens = ad.add(tokens, ad.gather_rows(self.mask_emb,
                                               mask.reshape(-1).astype(np.intp)))
        sigma = np.broadcast_to(sigma, (batch,)) if np.ndim(sigma) == 0 else sigma
        temb = self.time_embed(sigma)
        return ad.add(tokens, ad.gather_rows(temb, np.repeat(np.arange(batch), d)))

    def forward(self, x: np.ndarray, sigma: np.ndarray, mask: np.ndarray,
                train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Score estimate for a batch of noisy rows; returns a (batch, d) tensor."""
        batch = np.asarray(x).shape[0]
        d = self.cfg.d
        tokens = self.embed_tokens(x, sigma, mask)

        skips = {self.cfg.dims[0]: tokens}
        h = tokens
        for i, blk in enumerate(self.blocks):
            h = blk(h, batch, d, train, rng)
            width = blk.w_out
            if i < len(self.blocks) // 2:
                skips[width] = h
            elif width in skips:
                h = ad.add(h, skips[width])
        out = ad.add(ad.matmul(h, self.head_w), self.head_b)
        return ad.reshape(out, batch, d)

    def predict(self, x: np.ndarray, sigma: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Eval-mode forward outside any tape (dropout off, plain arrays out)."""
        return self.forward(x, sigma, mask, train=False).data
