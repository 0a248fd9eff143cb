"""Seeded missingness-mask generators for MCAR, MAR, and MNAR mechanisms.

All three target an exact expected missing rate; MAR and MNAR use logistic
models whose intercept is calibrated by bisection. Every generated mask is
repaired so that no row is fully missing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import NUMERICAL, RawTable

MCAR, MAR, MNAR = "mcar", "mar", "mnar"


class SingleColumn(ValueError):
    pass


class NoNumericalColumns(ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    mechanism: str
    rate: float
    seed: int
    mar_observed_fraction: float = 0.3

    def __post_init__(self):
        if self.mechanism not in (MCAR, MAR, MNAR):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("rate must lie in [0, 1)")
        if not 0.0 < self.mar_observed_fraction < 1.0:
            raise ValueError("mar_observed_fraction must lie in (0, 1)")


@dataclass
class Mask:
    bits: np.ndarray  # uint8, 1 = missing

    @property
    def shape(self):
        return self.bits.shape

    @property
    def missing_rate(self) -> float:
        return float(self.bits.mean())


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _numeric_proxy(table: RawTable) -> np.ndarray:
    """Numeric stand-in matrix: numerical values as-is, category indices for
    categorical columns; absent cells fall at the column mean."""
    m, n = table.n_rows, table.n_cols
    out = np.empty((m, n))
    for j in range(n):
        col = np.asarray(table.columns[j], dtype=np.float64)
        if table.schema.columns[j].kind != NUMERICAL:
            col = np.where(col < 0, np.nan, col)
        mean = np.nanmean(col) if np.any(~np.isnan(col)) else 0.0
        out[:, j] = np.where(np.isnan(col), mean, col)
    return out


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.maximum(sd, 1e-8)


def calibrate_intercept(scores: np.ndarray, target: float, tol: float = 1e-4) -> float:
    """Bisection for b such that mean(sigmoid(scores + b)) == target."""
    if not 0.0 < target < 1.0:
        raise ValueError(f"target rate {target} is not attainable")
    lo, hi = -60.0, 60.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        err = _sigmoid(scores + mid).mean() - target
        if abs(err) <= tol:
            return mid
        if err < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def self_masking_probabilities(z: np.ndarray, w: float, rate: float) -> np.ndarray:
    """Per-cell missing probabilities sigmoid(w*z + b) with b calibrated so
    the expected missing fraction equals `rate`."""
    b = calibrate_intercept(w * z, rate)
    return _sigmoid(w * z + b)


def _repair_full_rows(bits: np.ndarray, rng: np.random.Generator) -> None:
    full = bits.all(axis=1)
    for i in np.flatnonzero(full):
        bits[i, rng.integers(bits.shape[1])] = 0


def gen_mcar(table: RawTable, spec: MaskSpec) -> Mask:
    """Uniform independent missingness at the target rate."""
    rng = np.random.default_rng(spec.seed)
    bits = (rng.random((table.n_rows, table.n_cols)) < spec.rate).astype(np.uint8)
    _repair_full_rows(bits, rng)
    return Mask(bits)


def gen_mar(table: RawTable, spec: MaskSpec) -> Mask:
    """Missingness driven by a seeded logistic model over a designated
    always-observed column subset."""
    m, n = table.n_rows, table.n_cols
    if n < 2:
        raise SingleColumn("MAR requires at least 2 columns")
    rng = np.random.default_rng(spec.seed)
    k = min(max(int(np.ceil(spec.mar_observed_fraction * n)), 1), n - 1)
    obs_cols = np.sort(rng.choice(n, size=k, replace=False))
    maskable = np.setdiff1d(np.arange(n), obs_cols)

    z = _zscore(_numeric_proxy(table)[:, obs_cols])
    weights = rng.standard_normal(k)
    scores = z @ weights
    target = spec.rate * n / len(maskable)
    if target >= 1.0:
        raise ValueError(f"rate {spec.rate} infeasible with "
                         f"{len(maskable)}/{n} maskable columns")
    probs = _sigmoid(scores + calibrate_intercept(scores, target))

    bits = np.zeros((m, n), dtype=np.uint8)
    bits[:, maskable] = rng.random((m, len(maskable))) < probs[:, None]
    _repair_full_rows(bits, rng)
    return Mask(bits)


def gen_mnar(table: RawTable, spec: MaskSpec) -> Mask:
    """Self-masking: each numerical cell's missing probability is a logistic
    function of its own standardized value; categorical columns fall back to
    MCAR at the same rate."""
    m, n = table.n_rows, table.n_cols
    num_cols = table.numeric_col_indices()
    if not num_cols:
        raise NoNumericalColumns("MNAR self-masking needs a numerical column")
    rng = np.random.default_rng(spec.seed)
    proxy = _numeric_proxy(table)
    bits = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        if j in num_cols:
            z = _zscore(proxy[:, [j]])[:, 0]
            w = rng.standard_normal()
            probs = self_masking_probabilities(z, w, spec.rate)
            bits[:, j] = rng.random(m) < probs
        else:
            bits[:, j] = rng.random(m) < spec.rate
    _repair_full_rows(bits, rng)
    return Mask(bits)


def generate(table: RawTable, spec: MaskSpec) -> Mask:
    return {MCAR: gen_mcar, MAR: gen_mar, MNAR: gen_mnar}[spec.mechanism](table, spec)


# -- serialization ------------------------------------------------------------

def mask_filename(dataset: str, mechanism: str, seed: int) -> str:
    return f"{dataset}.{mechanism}.{seed}.mask.csv"


def write_mask_csv(mask: Mask, path) -> None:
    np.savetxt(path, mask.bits, fmt="%d", delimiter=",")


def read_mask_csv(path) -> Mask:
    bits = np.loadtxt(path, dtype=np.uint8, delimiter=",", ndmin=2)
    return Mask(bits)
