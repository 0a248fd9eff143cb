"""One-pass column sweep: per column, fit a predictor on rows where that
column is observed, fill its missing entries, discard the model.

The same routine serves as warm-up (before diffusion) and polish (after).
Later columns see earlier columns' fresh imputations within the sweep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .encode import CodeBook, EncodedMatrix
from .gbt import GbtParams, fit_regressor, predict

SCHEMA_ORDER = "schema"
PERMUTED_ORDER = "permuted"


@dataclass(frozen=True)
class SweepConfig:
    regressor_params: GbtParams = GbtParams()
    classifier_params: GbtParams = GbtParams()
    column_order: str = SCHEMA_ORDER
    order_seed: int = 0

    def __post_init__(self):
        if self.column_order not in (SCHEMA_ORDER, PERMUTED_ORDER):
            raise ValueError(f"unknown column order {self.column_order!r}")


@dataclass
class SweepStats:
    fits: int = 0
    writes: int = 0
    zero_filled_columns: list = field(default_factory=list)


@dataclass
class CompletedMatrix:
    values: np.ndarray       # (m, d), no sentinel entries
    provenance: np.ndarray   # (m, d) uint8: 0 = observed, 1 = imputed
    stats: SweepStats | None = None


def column_sweep(encoded: EncodedMatrix, book: CodeBook | None,
                 cfg: SweepConfig = SweepConfig()) -> CompletedMatrix:
    """Sweep every encoded column once, in order, overwriting only masked
    cells. Columns with no observed entries are zero-filled with a warning
    instead of fitted. Observed cells pass through bit-identical."""
    values = encoded.values.copy()
    mask = encoded.mask
    m, d = values.shape
    if cfg.column_order == PERMUTED_ORDER:
        order = np.random.default_rng(cfg.order_seed).permutation(d)
    else:
        order = np.arange(d)

    stats = SweepStats()
    all_cols = np.arange(d)
    for j in order:
        obs = mask[:, j] == 0
        if not obs.any():
            warnings.warn(f"column {j} has no observed entries; zero-filled")
            values[:, j] = 0.0
            stats.zero_filled_columns.append(int(j))
            continue
        others = all_cols != j
        model = fit_regressor(values[obs][:, others], values[obs, j],
                              cfg.regressor_params)
        stats.fits += 1
        miss = ~obs
        if miss.any():
            values[miss, j] = predict(model, values[miss][:, others])
            stats.writes += int(miss.sum())
        # model discarded here; the sweep never revisits a column
    return CompletedMatrix(values, mask.copy(), stats)
