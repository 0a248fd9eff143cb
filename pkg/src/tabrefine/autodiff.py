"""Minimal reverse-mode automatic differentiation on dense 2-D float64 matrices.

Ops record onto an explicit :class:`Tape` (used as a context manager, one tape
per training step). Calling an op with no active tape just computes values,
which is how inference-time code paths stay allocation-light.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import _scan_kernels as _kernels

__all__ = [
    "Tensor", "Tape", "Adam", "NonScalarLoss", "ShapeMismatch",
    "add", "sub", "neg", "mul", "scale", "add_const", "matmul",
    "sum_all", "mean_all", "sigmoid", "softplus", "silu",
    "layer_norm", "dropout", "gather_rows", "reshape",
    "selective_scan", "causal_conv1d", "softmax_cross_entropy",
    "save_checkpoint", "load_checkpoint",
]


class NonScalarLoss(ValueError):
    """backward() was handed a loss that is not 1x1."""


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


_ACTIVE_TAPE: "Tape | None" = None


def _as2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D array, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2-D float64 matrix that can carry a gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as2d(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise NonScalarLoss(f"item() on tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive ops; replayed in reverse by backward()."""

    def __init__(self):
        self._ops = []        # (out, inputs, vjp) in execution order
        self._tensors = []    # every tensor touched, for grad zeroing

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _record(self, out: Tensor, inputs, vjp):
        self._ops.append((out, inputs, vjp))
        self._tensors.append(out)
        self._tensors.extend(inputs)

    def backward(self, loss: Tensor, params=None):
        """Accumulate d(loss)/d(t) into t.grad for every recorded tensor.

        Parameters listed in `params` that never contributed to `loss` get a
        zero gradient and trigger a DisconnectedGraph warning.
        """
        if loss.data.shape != (1, 1):
            raise NonScalarLoss(f"loss must be 1x1, got {loss.shape}")
        for t in self._tensors:
            if t.requires_grad:
                t.grad = None
        loss.grad = np.ones((1, 1))
        touched = {id(loss)}
        for out, inputs, vjp in reversed(self._ops):
            if out.grad is None:
                continue
            grads = vjp(out.grad)
            for inp, g in zip(inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += g
                touched.add(id(inp))
        if params is not None:
            orphans = [p for p in params if p.grad is None]
            for p in orphans:
                p.grad = np.zeros_like(p.data)
            if orphans and len(orphans) == len(list(params)):
                warnings.warn("DisconnectedGraph: loss does not depend on any "
                              "of the given parameters; gradients set to zero")


def _make(data: np.ndarray, inputs, vjp) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE._record(out, inputs, vjp)
    return out


# ---------------------------------------------------------------------------
# elementwise / linear algebra primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b; b may be a 1-row bias broadcast over a's rows."""
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _make(a.data + b.data, (a, b),
                     lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    return _make(a.data * b.data, (a, b),
                 lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or ndarray (no gradient through c)."""
    c = np.asarray(c, dtype=np.float64)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    """Add a constant scalar or ndarray (no gradient through c)."""
    c = np.asarray(c, dtype=np.float64)
    return _make(a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def sum_all(a: Tensor) -> Tensor:
    return _make(np.array([[a.data.sum()]]), (a,),
                 lambda g: (np.full_like(a.data, g[0, 0]),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.array([[a.data.mean()]]), (a,),
                 lambda g: (np.full_like(a.data, g[0, 0] / n),))


# ---------------------------------------------------------------------------
# nonlinearities (overflow-safe)
# ---------------------------------------------------------------------------

def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    # tanh formulation: one transcendental pass, stable for any finite x
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _softplus_raw(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_raw(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a: Tensor) -> Tensor:
    if _ACTIVE_TAPE is None or not a.requires_grad:
        return Tensor(_softplus_raw(a.data))
    s = _sigmoid_raw(a.data)  # derivative, cached for the backward pass
    return _make(_softplus_raw(a.data), (a,), lambda g: (g * s,))


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_raw(a.data)
    return _make(a.data * s, (a,),
                 lambda g: (g * (s + a.data * s * (1.0 - s)),))


# ---------------------------------------------------------------------------
# structured primitives
# ---------------------------------------------------------------------------

def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization with per-column gain and bias (both 1 x cols)."""
    if gain.shape != (1, a.shape[1]) or bias.shape != (1, a.shape[1]):
        raise ShapeMismatch("layer_norm: gain/bias must be (1, cols)")
    mu = a.data.mean(axis=1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        dxhat = g * gain.data
        m = a.shape[1]
        t1 = dxhat.sum(axis=1, keepdims=True) / m
        t2 = (dxhat * xhat).sum(axis=1, keepdims=True) / m
        da = inv * (dxhat - t1 - xhat * t2)
        dg = (g * xhat).sum(axis=0, keepdims=True)
        db = g.sum(axis=0, keepdims=True)
        return da, dg, db

    return _make(xhat * gain.data + bias.data, (a, gain, bias), vjp)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) at train time,
    identity at eval time."""
    if not train or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return scale(a, keep)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows a[idx]; backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return (da,)

    return _make(a.data[idx], (a,), vjp)


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.data.size:
        raise ShapeMismatch(f"reshape: {a.shape} -> ({rows}, {cols})")
    return _make(a.data.reshape(rows, cols), (a,),
                 lambda g: (g.reshape(a.shape),))


def causal_conv1d(x: Tensor, kernel: Tensor, batch: int, length: int) -> Tensor:
    """Depthwise causal convolution along the position axis.

    x rows are (batch*length) tokens; kernel is (taps, channels). Output
    position l mixes positions l, l-1, ..., l-taps+1 (zero-padded start), so
    causality is preserved.
    """
    taps, nch = kernel.shape
    if x.shape != (batch * length, nch):
        raise ShapeMismatch("causal_conv1d: rows != batch*length or channel mismatch")
    X = x.data.reshape(batch, length, nch)
    y = np.zeros_like(X)
    for k in range(taps):
        if k == 0:
            y += kernel.data[0] * X
        elif k < length:
            y[:, k:] += kernel.data[k] * X[:, :-k]

    def vjp(g):
        G = g.reshape(batch, length, nch)
        dx = np.zeros_like(X)
        dw = np.zeros_like(kernel.data)
        for k in range(taps):
            if k == 0:
                dx += kernel.data[0] * G
                dw[0] = (G * X).sum(axis=(0, 1))
            elif k < length:
                dx[:, :-k] += kernel.data[k] * G[:, k:]
                dw[k] = (G[:, k:] * X[:, :-k]).sum(axis=(0, 1))
        return dx.reshape(batch * length, nch), dw

    return _make(y.reshape(batch * length, nch), (x, kernel), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(n), labels] - np.log(ez.sum(axis=1)))

    def vjp(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (g[0, 0] / n),)

    return _make(np.array([[nll.mean()]]), (logits,), vjp)


USE_JIT_SCAN = _kernels.HAVE_NUMBA


def _scan_fwd_np(U, D, B, C, A):
    decay = np.exp(D[..., None] * A[None, None])            # (b, l, ch, st)
    drive = D[..., None] * B[:, :, None, :] * U[..., None]  # (b, l, ch, st)
    hs = np.empty_like(decay)
    h = np.zeros((U.shape[0], U.shape[2], A.shape[1]))
    for k in range(U.shape[1]):
        h = decay[:, k] * h + drive[:, k]
        hs[:, k] = h
    return np.einsum("blcs,bls->blc", hs, C), hs, decay


def _scan_bwd_np(dy, U, D, B, C, A, hs, decay):
    dU = np.zeros_like(U)
    dD = np.zeros_like(D)
    dB = np.zeros_like(B)
    dC = np.einsum("blc,blcs->bls", dy, hs)
    dA = np.zeros_like(A)
    dh = np.zeros((U.shape[0], U.shape[2], A.shape[1]))
    for k in range(U.shape[1] - 1, -1, -1):
        dh = dh + dy[:, k, :, None] * C[:, k, None, :]
        h_prev = hs[:, k - 1] if k > 0 else 0.0
        ddecay = dh * h_prev
        dD[:, k] = (ddecay * A[None] * decay[:, k]).sum(axis=-1) \
            + (dh * B[:, k, None, :]).sum(axis=-1) * U[:, k]
        dA += (ddecay * decay[:, k] * D[:, k, :, None]).sum(axis=0)
        dB[:, k] = (dh * (D[:, k] * U[:, k])[:, :, None]).sum(axis=1)
        dU[:, k] = (dh * B[:, k, None, :]).sum(axis=-1) * D[:, k]
        dh = dh * decay[:, k]
    return dU, dD, dB, dC, dA


def selective_scan(u: Tensor, delta: Tensor, b_sel: Tensor, c_sel: Tensor,
                   a_mat: Tensor, batch: int, length: int) -> Tensor:
    """Left-to-right selective state-space recurrence over `length` positions.

    Rows of u/delta/b_sel/c_sel are (batch*length) tokens grouped by batch
    then position. Per position k and channel c with state vector h:

        h = exp(delta_k * A) * h + delta_k * B_k * u_k
        y_k = C_k . h

    u, delta: (batch*length, channels); b_sel, c_sel: (batch*length, state);
    a_mat: (channels, state), expected negative for a decaying state.
    delta must already be positive (apply softplus upstream).
    """
    nch = u.shape[1]
    nst = a_mat.shape[1]
    if a_mat.shape[0] != nch or delta.shape != u.shape:
        raise ShapeMismatch("selective_scan: inconsistent channel/state shapes")
    if u.shape[0] != batch * length:
        raise ShapeMismatch("selective_scan: rows != batch*length")

    U = np.ascontiguousarray(u.data.reshape(batch, length, nch))
    D = np.ascontiguousarray(delta.data.reshape(batch, length, nch))
    B = np.ascontiguousarray(b_sel.data.reshape(batch, length, nst))
    C = np.ascontiguousarray(c_sel.data.reshape(batch, length, nst))
    A = np.ascontiguousarray(a_mat.data)

    recording = _ACTIVE_TAPE is not None and any(
        t.requires_grad for t in (u, delta, b_sel, c_sel, a_mat))
    if not recording:
        if USE_JIT_SCAN:
            y = _kernels.scan_fwd_eval(U, D, B, C, A)
        else:
            y = _scan_fwd_np(U, D, B, C, A)[0]
        return Tensor(y.reshape(batch * length, nch))

    fwd = _kernels.scan_fwd if USE_JIT_SCAN else _scan_fwd_np
    bwd = _kernels.scan_bwd if USE_JIT_SCAN else _scan_bwd_np
    y, hs, decay = fwd(U, D, B, C, A)

    def vjp(g):
        dy = np.ascontiguousarray(g.reshape(batch, length, nch))
        dU, dD, dB, dC, dA = bwd(dy, U, D, B, C, A, hs, decay)
        flat = u.shape[0]
        return (dU.reshape(flat, nch), dD.reshape(flat, nch),
                dB.reshape(flat, nst), dC.reshape(flat, nst), dA)

    return _make(y.reshape(batch * length, nch),
                 (u, delta, b_sel, c_sel, a_mat), vjp)


# ---------------------------------------------------------------------------
# checkpoints: versioned flat binary (header, shape table, row-major payload)
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"TRCKPT01"


def save_checkpoint(path, arrays, header: dict | None = None) -> None:
    import struct

    head = "".join(f"{k} = {v}\n" for k, v in (header or {}).items()).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", len(head), len(arrays)))
        f.write(head)
        for arr in arrays:
            arr = _as2d(arr)
            f.write(struct.pack("<II", *arr.shape))
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_checkpoint(path):
    import struct

    with open(path, "rb") as f:
        if f.read(8) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        head_len, count = struct.unpack("<II", f.read(8))
        head_raw = f.read(head_len).decode()
        shapes = [struct.unpack("<II", f.read(8)) for _ in range(count)]
        arrays = [np.frombuffer(f.read(r * c * 8), dtype=np.float64).reshape(r, c).copy()
                  for r, c in shapes]
    header = {}
    for line in head_raw.splitlines():
        k, _, v = line.partition("=")
        header[k.strip()] = v.strip()
    return arrays, header


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeMismatch("adam: gradient shape mismatch")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
