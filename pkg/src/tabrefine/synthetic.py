"""Synthetic mixed-type benchmark data with shared latent structure.

Columns are nonlinear functions of a few latent factors plus noise, so the
joint distribution carries real cross-column signal for both the predictive
sweeps and the generative refinement stage.
"""

from __future__ import annotations

import numpy as np

from .ingest import CATEGORICAL, NUMERICAL, Column, RawTable, Schema


def make_synthetic_mixed(m: int = 5000, seed: int = 0,
                         with_categoricals: bool = True) -> RawTable:
    rng = np.random.default_rng(seed)
    z1 = rng.standard_normal(m)
    z2 = rng.standard_normal(m)
    z3 = rng.standard_normal(m)

    def noise(scale):
        return scale * rng.standard_normal(m)

    num = {
        "lin_a": z1 + noise(0.15),
        "lin_b": 0.8 * z1 - 0.6 * z2 + noise(0.15),
        "square": z1 * z1 + noise(0.2),
        "wave": np.sin(2.0 * z2) + 0.5 * z1 + noise(0.2),
        "cross": np.abs(z1) * z2 + noise(0.2),
        "mix": z2 + z3 + noise(0.15),
        "expo": np.exp(0.5 * z2) + noise(0.2),
        "deep": z3 + 0.4 * z1 * z2 + noise(0.15),
    }
    cols = [Column(name, NUMERICAL) for name in num]
    data = [np.asarray(v, dtype=np.float64) for v in num.values()]

    if with_categoricals:
        # quartile labels of a latent, with a small label-flip rate
        q = np.quantile(z1, [0.25, 0.5, 0.75])
        band = np.digitize(z1, q)
        flip = rng.random(m) < 0.05
        band[flip] = rng.integers(0, 4, flip.sum())
        cols.append(Column("band", CATEGORICAL, ("b0", "b1", "b2", "b3")))
        data.append(band.astype(np.int64))

        # six sectors of the (z2, z3) plane
        ang = np.arctan2(z3, z2)
        sector = ((ang + np.pi) / (2 * np.pi) * 6).astype(np.int64) % 6
        flip = rng.random(m) < 0.05
        sector[flip] = rng.integers(0, 6, flip.sum())
        labels = tuple(f"s{k}" for k in range(6))
        cols.append(Column("sector", CATEGORICAL, labels))
        data.append(sector)

    return RawTable(Schema(tuple(cols)), data)
