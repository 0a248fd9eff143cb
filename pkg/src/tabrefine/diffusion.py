"""Variance-exploding diffusion over completed matrices.

Forward process x_t = x_0 + sigma * eps; the denoiser regresses the score of
the clamped forward process (observed coordinates held at their known values,
so the learned score is conditional on them). Sampling discretizes the
reverse SDE on a Karras-style sigma grid and averages several stochastic
trajectories on the missing coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .denoiser import DenoiserConfig, DenoiserNet, NonPositiveSigma
from .util import derive_seed

_PREDICT_CHUNK = 2048


class EmptyBatch(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = 0.01
    sigma_max: float = 20.0
    rho: float = 7.0
    steps: int = 50
    train_lognormal_mean: float = -1.2
    train_lognormal_std: float = 1.2

    def __post_init__(self):
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def discretize(self) -> np.ndarray:
        """Strictly decreasing sigma grid with exact endpoints."""
        if self.steps == 1:
            return np.array([self.sigma_max])
        inv = 1.0 / self.rho
        i = np.arange(self.steps)
        sig = (self.sigma_max ** inv
               + i / (self.steps - 1) * (self.sigma_min ** inv - self.sigma_max ** inv)
               ) ** self.rho
        sig[0] = self.sigma_max
        sig[-1] = self.sigma_min
        return sig

    def sample_train_sigma(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.exp(self.train_lognormal_mean
                      + self.train_lognormal_std * rng.standard_normal(n))


@dataclass(frozen=True)
class DiffusionConfig:
    schedule: NoiseSchedule = NoiseSchedule()
    n_trajectories: int = 10
    train_steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    denoiser: DenoiserConfig | None = None   # d filled in at train time

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")


@dataclass
class TrainedDenoiser:
    net: DenoiserNet
    schedule: NoiseSchedule
    loss_trace: list = field(default_factory=list)

    def predict(self, x: np.ndarray, sigma, mask: np.ndarray) -> np.ndarray:
        """Chunked eval-mode score estimate for arbitrarily many rows."""
        x = np.asarray(x, dtype=np.float64)
        sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x.shape[0],))
        out = np.empty_like(x)
        for i in range(0, x.shape[0], _PREDICT_CHUNK):
            sl = slice(i, i + _PREDICT_CHUNK)
            out[sl] = self.net.predict(x[sl], sig[sl], mask[sl])
        return out

    def save(self, path) -> None:
        cfg = self.net.cfg
        ad.save_checkpoint(path, self.net.get_state(), header={
            "d": cfg.d, "hd": cfg.hd, "dims": ",".join(map(str, cfg.dims)),
            "ssm_state": cfg.ssm_state, "dropout": cfg.dropout, "seed": cfg.seed,
            "sigma_min": self.schedule.sigma_min, "sigma_max": self.schedule.sigma_max,
            "rho": self.schedule.rho, "steps": self.schedule.steps,
        })

    @classmethod
    def load(cls, path) -> "TrainedDenoiser":
        arrays, h = ad.load_checkpoint(path)
        cfg = DenoiserConfig(d=int(h["d"]), hd=int(h["hd"]),
                             dims=tuple(int(v) for v in h["dims"].split(",")),
                             ssm_state=int(h["ssm_state"]),
                             dropout=float(h["dropout"]), seed=int(h["seed"]))
        net = DenoiserNet(cfg)
        net.set_state(arrays)
        schedule = NoiseSchedule(float(h["sigma_min"]), float(h["sigma_max"]),
                                 float(h["rho"]), int(h["steps"]))
        return cls(net, schedule)

    def save_loss_trace(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("step,loss\n")
            for i, v in enumerate(self.loss_trace):
                f.write(f"{i},{v}\n")


def _check_sigma(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise NonPositiveSigma("sigma must be > 0")
    return sigma


def forward_perturb(x0: np.ndarray, sigma, rng: np.random.Generator):
    """x_t = x0 + sigma * eps with eps ~ N(0, I); returns (x_t, eps)."""
    x0 = np.asarray(x0, dtype=np.float64)
    sigma = _check_sigma(sigma).reshape(-1, 1)
    eps = rng.standard_normal(x0.shape)
    return x0 + sigma * eps, eps


def true_score(x_t: np.ndarray, x0: np.ndarray, sigma) -> np.ndarray:
    """Closed-form conditional score -(x_t - x0) / sigma^2."""
    sigma = _check_sigma(sigma).reshape(-1, 1)
    return -(np.asarray(x_t) - np.asarray(x0)) / (sigma * sigma)


def edm_loss(model, x0: np.ndarray, mask: np.ndarray, schedule: NoiseSchedule,
             rng: np.random.Generator):
    """One noise-level-weighted denoising score-matching step.

    Per row: sigma ~ exp(N(mean, std^2)); the noisy input has its observed
    coordinates clamped back to x0, so the regression target
    -(x_in - x0)/sigma^2 is the clamped-process score (-eps/sigma on missing
    coordinates, 0 on observed ones). Squared error is weighted by sigma^2
    and averaged over all coordinates.

    Returns (loss value, gradient list aligned with model.params()); the
    gradients are also left on the parameters.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[0] == 0:
        raise EmptyBatch("empty training batch")
    mask = np.asarray(mask)
    sigma = schedule.sample_train_sigma(x0.shape[0], rng)
    x_t, _ = forward_perturb(x0, sigma, rng)
    x_in = np.where(mask == 1, x_t, x0)
    target = true_score(x_in, x0, sigma)
    weight = (sigma * sigma).reshape(-1, 1)

    params = model.params()
    with ad.Tape() as tape:
        out = model.forward(x_in, sigma, mask, train=True, rng=rng)
        diff = ad.add_const(out, -target)
        loss = ad.mean_all(ad.scale(ad.mul(diff, diff), weight))
    tape.backward(loss, params=params)
    return loss.item(), [p.grad for p in params]


def train(xa, mask: np.ndarray, cfg: DiffusionConfig) -> TrainedDenoiser:
    """Seeded mini-batch Adam on the denoising loss over a completed matrix."""
    values = np.asarray(getattr(xa, "values", xa), dtype=np.float64)
    mask = np.asarray(mask)
    m, d = values.shape
    dn_cfg = cfg.denoiser or DenoiserConfig(d=d, seed=derive_seed(cfg.seed, "init"))
    if dn_cfg.d != d:
        dn_cfg = replace(dn_cfg, d=d)
    net = DenoiserNet(dn_cfg)
    opt = ad.Adam(net.params(), lr=cfg.lr)
    rng = np.random.default_rng(derive_seed(cfg.seed, "train"))
    trace = []
    for _ in range(cfg.train_steps):
        rows = rng.integers(0, m, size=min(cfg.batch_size, m))
        loss, _ = edm_loss(net, values[rows], mask[rows], cfg.schedule, rng)
        opt.step()
        opt.zero_grad()
        trace.append(loss)
    return TrainedDenoiser(net, cfg.schedule, trace)


def reverse_sample(xa, mask: np.ndarray, model, rng: np.random.Generator) -> np.ndarray:
    """One stochastic reverse-SDE trajectory.

    Missing coordinates start at sigma_max * z and follow Euler-Maruyama
    updates with coefficients sigma_i^2 - sigma_{i+1}^2 derived from the
    consecutive grid levels (sigma after the last level is 0, and that final
    step adds no noise). Observed coordinates stay clamped throughout.
    """
    values = np.asarray(getattr(xa, "values", xa), dtype=np.float64)
    mask = np.asarray(mask)
    missing = mask == 1
    schedule = model.schedule
    sig = schedule.discretize()

    x = values.copy()
    x[missing] = (schedule.sigma_max * rng.standard_normal(values.shape))[missing]
    for i in range(len(sig)):
        s_next = sig[i + 1] if i + 1 < len(sig) else 0.0
        alpha = sig[i] ** 2 - s_next ** 2
        score = model.predict(x, sig[i], mask)
        x[missing] += alpha * score[missing]
        if i + 1 < len(sig):
            x[missing] += np.sqrt(alpha) * rng.standard_normal(values.shape)[missing]
        x[~missing] = values[~missing]
    return x


def impute(xa, mask: np.ndarray, model, n_trajectories: int = 10,
           seed: int = 0) -> np.ndarray:
    """Average of independent reverse trajectories on missing coordinates;
    observed coordinates are passed through untouched."""
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    values = np.asarray(getattr(xa, "values", xa), dtype=np.float64)
    mask = np.asarray(mask)
    acc = np.zeros_like(values)
    for k in range(n_trajectories):
        rng = np.random.default_rng(derive_seed(seed, "trajectory", k))
        acc += reverse_sample(values, mask, model, rng)
    out = values.copy()
    miss = mask == 1
    out[miss] = acc[miss] / n_trajectories
    return out
