"""Self-checks: gradient oracles, schedule invariants, the Gaussian
conditional-recovery test, and the selective-copying task. Shared by the test
suite and the `validate` CLI subcommand."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .copytask import CopyTaskConfig, selective_copy_eval
from .denoiser import DenoiserConfig, DenoiserNet
from .diffusion import NoiseSchedule, impute, reverse_sample


# -- finite differences --------------------------------------------------------

def directional_fd_error(f, tensors, h: float = 1e-5,
                         rng: np.random.Generator | None = None) -> float:
    """Worst relative error between tape gradients and central finite
    differences along one random direction per input tensor."""
    rng = rng or np.random.default_rng(0)
    with ad.Tape() as tape:
        loss = f(*tensors)
    tape.backward(loss, params=tensors)
    worst = 0.0
    for t in tensors:
        direction = rng.standard_normal(t.data.shape)
        analytic = float((t.grad * direction).sum())
        t.data += h * direction
        lp = f(*tensors).item()
        t.data -= 2 * h * direction
        lm = f(*tensors).item()
        t.data += h * direction
        numeric = (lp - lm) / (2 * h)
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def primitive_gradient_checks(tol: float = 1e-4, seed: int = 0):
    """Run the finite-difference oracle over every autodiff primitive.

    Returns (all_passed, {name: worst_rel_err}).
    """
    rng = np.random.default_rng(seed)

    def T(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    ones45 = Tensor(np.ones((4, 5)))
    B, L, C, S = 2, 5, 3, 4

    def scan_case(u, dpre, bs, cs, am):
        y = ad.selective_scan(u, ad.softplus(dpre), bs, cs, am, B, L)
        return ad.mean_all(ad.mul(y, y))

    def conv_case(x, k):
        y = ad.causal_conv1d(x, k, 2, 6)
        return ad.mean_all(ad.mul(y, y))

    cases = {
        "add": (lambda a, b: ad.mean_all(ad.add(a, b)), [T(4, 5), T(4, 5)]),
        "add_bias": (lambda a, b: ad.mean_all(ad.add(a, b)), [T(4, 5), T(1, 5)]),
        "sub": (lambda a, b: ad.mean_all(ad.sub(a, b)), [T(4, 5), T(4, 5)]),
        "neg": (lambda a: ad.mean_all(ad.neg(a)), [T(4, 5)]),
        "mul": (lambda a, b: ad.mean_all(ad.mul(a, b)), [T(4, 5), T(4, 5)]),
        "scale": (lambda a: ad.mean_all(ad.scale(a, 0.37)), [T(4, 5)]),
        "add_const": (lambda a: ad.mean_all(ad.add_const(a, 1.5)), [T(4, 5)]),
        "matmul": (lambda a, b: ad.mean_all(ad.matmul(a, b)), [T(4, 6), T(6, 3)]),
        "sum_all": (lambda a: ad.sum_all(a), [T(4, 5)]),
        "mean_all": (lambda a: ad.mean_all(a), [T(4, 5)]),
        "sigmoid": (lambda a: ad.mean_all(ad.mul(ad.sigmoid(a), a)), [T(4, 5)]),
        "softplus": (lambda a: ad.mean_all(ad.mul(ad.softplus(a), a)), [T(4, 5)]),
        "silu": (lambda a: ad.mean_all(ad.mul(ad.silu(a), a)), [T(4, 5)]),
        "layer_norm": (lambda a, g, b: ad.mean_all(
            ad.mul(ad.layer_norm(a, g, b), a)), [T(6, 8), T(1, 8), T(1, 8)]),
        "dropout": (lambda a: ad.mean_all(ad.dropout(
            a, 0.5, np.random.default_rng(7), True)), [T(4, 5)]),
        "gather_rows": (lambda a: ad.mean_all(ad.mul(
            ad.gather_rows(a, [0, 2, 2, 1]), ones45)), [T(3, 5)]),
        "reshape": (lambda a: ad.mean_all(ad.mul(
            ad.reshape(a, 2, 10), ad.reshape(a, 2, 10))), [T(4, 5)]),
        "selective_scan": (scan_case, [T(B * L, C), T(B * L, C), T(B * L, S),
                                       T(B * L, S),
                                       Tensor(-np.abs(rng.standard_normal((C, S))) - 0.1,
                                              requires_grad=True)]),
        "causal_conv1d": (conv_case, [T(12, 3), T(4, 3)]),
        "softmax_cross_entropy": (lambda a: ad.softmax_cross_entropy(
            a, [0, 2, 1, 2]), [T(4, 3)]),
    }
    results = {}
    for name, (f, tensors) in cases.items():
        results[name] = directional_fd_error(f, tensors, rng=rng)
    return all(v < tol for v in results.values()), results


def denoiser_gradient_check(d: int = 6, batch: int = 4, tol: float = 1e-3,
                            seed: int = 0):
    """End-to-end directional finite-difference check through the full net."""
    net = DenoiserNet(DenoiserConfig(d=d, dropout=0.0, seed=seed))
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((batch, d))
    sigma = np.exp(rng.uniform(-1.5, 1.0, batch))
    mask = (rng.random((batch, d)) < 0.4).astype(np.uint8)
    params = net.params()

    def loss_fn():
        out = net.forward(x, sigma, mask, train=False)
        return ad.mean_all(ad.mul(out, out))

    with ad.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss, params=params)
    grads = [p.grad.copy() for p in params]
    worst = 0.0
    h = 1e-5
    for p, g in zip(params, grads):
        direction = rng.standard_normal(p.data.shape)
        analytic = float((g * direction).sum())
        p.data += h * direction
        lp = loss_fn().item()
        p.data -= 2 * h * direction
        lm = loss_fn().item()
        p.data += h * direction
        numeric = (lp - lm) / (2 * h)
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst < tol, worst


def schedule_endpoint_check(schedule: NoiseSchedule = NoiseSchedule()):
    sig = schedule.discretize()
    ok = (sig[0] == schedule.sigma_max and sig[-1] == schedule.sigma_min
          and bool(np.all(np.diff(sig) < 0)))
    return ok, {"first": float(sig[0]), "last": float(sig[-1])}


# -- Gaussian conditional recovery ----------------------------------------------

class GaussianConditionalOracle:
    """Ideal mask-conditional score for a standard bivariate Gaussian with
    column 0 observed (clamped) and column 1 missing: the noisy conditional
    of x1 given x0 is N(rho*x0, (1 - rho^2) + sigma^2)."""

    def __init__(self, rho: float = 0.8,
                 schedule: NoiseSchedule = NoiseSchedule()):
        self.rho = rho
        self.schedule = schedule

    def predict(self, x: np.ndarray, sigma, mask: np.ndarray) -> np.ndarray:
        sigma = float(np.asarray(sigma).reshape(-1)[0]) if np.ndim(sigma) \
            else float(sigma)
        cond_var = 1.0 - self.rho ** 2
        out = np.zeros_like(x)
        out[:, 1] = (self.rho * x[:, 0] - x[:, 1]) / (cond_var + sigma ** 2)
        return out


@dataclass
class GaussianOracleStats:
    bias: float
    max_bin_error: float
    residual_std: float
    target_std: float

    def passes(self, mean_tol: float = 0.05, std_rel_tol: float = 0.25) -> bool:
        return (abs(self.bias) <= mean_tol
                and self.max_bin_error <= mean_tol
                and abs(self.residual_std / self.target_std - 1.0) <= std_rel_tol)


def _binned_max_error(x1, imputed, target_slope, n_bins=8):
    qs = np.quantile(x1, np.linspace(0, 1, n_bins + 1))
    worst = 0.0
    for a, b in zip(qs[:-1], qs[1:]):
        sel = (x1 >= a) & (x1 <= b)
        if sel.any():
            worst = max(worst, abs(imputed[sel].mean()
                                   - target_slope * x1[sel].mean()))
    return worst


def gaussian_conditional_recovery(model=None, rho: float = 0.8,
                                  n_rows: int = 2000, n_traj: int = 10,
                                  seed: int = 0) -> GaussianOracleStats:
    """Impute the masked second coordinate of a bivariate Gaussian and
    compare against the analytic conditional mean/std.

    `model` defaults to the analytic-score oracle; pass a TrainedDenoiser to
    score a learned model instead. The conditional mean uses the N-averaged
    imputation; the residual std uses single trajectories, whose spread
    should match the full conditional std.
    """
    model = model or GaussianConditionalOracle(rho)
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n_rows)
    xa = np.column_stack([x1, np.zeros(n_rows)])
    mask = np.zeros((n_rows, 2), dtype=np.uint8)
    mask[:, 1] = 1

    avg = impute(xa, mask, model, n_trajectories=n_traj, seed=seed)
    single = reverse_sample(xa, mask, model,
                            np.random.default_rng(seed + 12345))
    bias = float(np.mean(avg[:, 1] - rho * x1))
    max_bin = _binned_max_error(x1, avg[:, 1], rho)
    resid_std = float(np.std(single[:, 1] - rho * x1))
    return GaussianOracleStats(bias, max_bin, resid_std,
                               float(np.sqrt(1.0 - rho ** 2)))


# -- top-level runner ------------------------------------------------------------

def run_validation(include_copy_task: bool = True,
                   copy_cfg: CopyTaskConfig = CopyTaskConfig()):
    """Run every self-check; returns a list of (name, passed, detail)."""
    report = []

    ok, results = primitive_gradient_checks()
    worst = max(results.values())
    report.append(("primitive_gradients", ok, f"worst rel err {worst:.2e}"))

    ok, worst = denoiser_gradient_check()
    report.append(("denoiser_gradient", ok, f"worst rel err {worst:.2e}"))

    ok, info = schedule_endpoint_check()
    report.append(("schedule_endpoints", ok,
                   f"first={info['first']} last={info['last']}"))

    stats = gaussian_conditional_recovery()
    report.append(("gaussian_conditional_recovery", stats.passes(),
                   f"bias={stats.bias:.4f} max_bin={stats.max_bin_error:.4f} "
                   f"resid_std={stats.residual_std:.4f}"))

    if include_copy_task:
        res = selective_copy_eval(copy_cfg)
        ok = (res.accuracy >= 0.90
              and abs(res.untrained_accuracy - 1.0 / 16) <= 0.03)
        report.append(("selective_copying", ok,
                       f"accuracy={res.accuracy:.4f} "
                       f"untrained={res.untrained_accuracy:.4f} "
                       f"steps={res.steps_run}"))
    return report
