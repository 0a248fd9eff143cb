"""Imputation metrics over missing entries only, plus seed/mechanism
aggregation into paper-style tables (values displayed scaled by 100)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import RawTable

DISPLAY_SCALE = 100.0

IN_SAMPLE = "in_sample"
OUT_OF_SAMPLE = "out_of_sample"


class NoMaskedNumericCells(ValueError):
    pass


class NoMaskedCategoricalCells(ValueError):
    pass


@dataclass(frozen=True)
class MetricRecord:
    dataset: str
    mechanism: str
    sample_kind: str
    seed: int
    mae: float
    rmse: float
    accuracy: float | None = None
    method: str = "ours"

    def __post_init__(self):
        if self.mae > self.rmse + 1e-12:
            raise ValueError(f"mae {self.mae} exceeds rmse {self.rmse}")
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


def mae_rmse(truth: np.ndarray, imputed: np.ndarray, mask: np.ndarray,
             numeric_cols) -> tuple:
    """MAE and RMSE over masked cells of the given (standardized) numeric
    columns; values at observed cells never enter."""
    truth = np.asarray(truth, dtype=np.float64)
    imputed = np.asarray(imputed, dtype=np.float64)
    if truth.shape != imputed.shape or truth.shape != mask.shape:
        raise ValueError("truth/imputed/mask shapes differ")
    cols = np.asarray(list(numeric_cols), dtype=np.intp)
    sel = np.asarray(mask)[:, cols] == 1
    if not sel.any():
        raise NoMaskedNumericCells("no masked numeric cells to score")
    err = (imputed[:, cols] - truth[:, cols])[sel]
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


def cat_accuracy(truth: RawTable, decoded: RawTable, source_mask: np.ndarray,
                 categorical_cols) -> float:
    """Fraction of masked categorical source cells decoded to the true label."""
    hits = 0
    total = 0
    for j in categorical_cols:
        sel = np.asarray(source_mask)[:, j] == 1
        if not sel.any():
            continue
        t = np.asarray(truth.columns[j])[sel]
        p = np.asarray(decoded.columns[j])[sel]
        hits += int((t == p).sum())
        total += int(sel.sum())
    if total == 0:
        raise NoMaskedCategoricalCells("no masked categorical cells to score")
    return hits / total


def zero_fill_mae_rmse(truth: np.ndarray, mask: np.ndarray, numeric_cols) -> tuple:
    """Baseline scores for the all-zeros imputer on standardized data."""
    return mae_rmse(truth, np.zeros_like(np.asarray(truth)), mask, numeric_cols)


def write_records_csv(records, path) -> None:
    """Raw per-seed metric records, one row each."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("method,dataset,mechanism,sample_kind,seed,mae,rmse,accuracy\n")
        for r in records:
            acc = "" if r.accuracy is None else repr(r.accuracy)
            f.write(f"{r.method},{r.dataset},{r.mechanism},{r.sample_kind},"
                    f"{r.seed},{r.mae!r},{r.rmse!r},{acc}\n")


def read_records_csv(path) -> list:
    import csv

    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out.append(MetricRecord(
                dataset=row["dataset"], mechanism=row["mechanism"],
                sample_kind=row["sample_kind"], seed=int(row["seed"]),
                mae=float(row["mae"]), rmse=float(row["rmse"]),
                accuracy=float(row["accuracy"]) if row["accuracy"] else None,
                method=row["method"]))
    return out


# -- aggregation ---------------------------------------------------------------

@dataclass
class AggregateRow:
    method: str
    dataset: str
    mechanism: str
    sample_kind: str
    n_seeds: int
    mae_mean: float
    mae_std: float
    rmse_mean: float
    rmse_std: float
    accuracy_mean: float | None
    accuracy_std: float | None


@dataclass
class ReportTable:
    rows: list
    ranks: dict  # method -> average rank across settings (ties get mean rank)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("method,dataset,mechanism,sample_kind,n_seeds,"
                    "mae_mean,mae_std,rmse_mean,rmse_std,"
                    "accuracy_mean,accuracy_std\n")
            for r in self.rows:
                acc_m = "" if r.accuracy_mean is None else repr(r.accuracy_mean)
                acc_s = "" if r.accuracy_std is None else repr(r.accuracy_std)
                f.write(f"{r.method},{r.dataset},{r.mechanism},{r.sample_kind},"
                        f"{r.n_seeds},{r.mae_mean!r},{r.mae_std!r},"
                        f"{r.rmse_mean!r},{r.rmse_std!r},{acc_m},{acc_s}\n")

    def to_markdown(self) -> str:
        """Wide layout: one row per method, mechanism x sample-kind columns,
        MAE/RMSE displayed x100 (and accuracy x100 when present)."""
        settings = sorted({(r.mechanism, r.sample_kind) for r in self.rows})
        lines = []
        header = ["Method"] + [f"{m.upper()} {'IS' if k == IN_SAMPLE else 'OOS'} "
                               f"MAE/RMSE" for m, k in settings]
        if len(self.ranks) > 1:
            header.append("Rank")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for method in sorted({r.method for r in self.rows}):
            cells = [method]
            for mech, kind in settings:
                sub = [r for r in self.rows
                       if r.method == method and r.mechanism == mech
                       and r.sample_kind == kind]
                if not sub:
                    cells.append("-")
                    continue
                mae = np.mean([r.mae_mean for r in sub]) * DISPLAY_SCALE
                rmse = np.mean([r.rmse_mean for r in sub]) * DISPLAY_SCALE
                cells.append(f"{mae:.2f}/{rmse:.2f}")
            if len(self.ranks) > 1:
                cells.append(f"{self.ranks[method]:.2f}")
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines)


def _mean_ranks(values: np.ndarray) -> np.ndarray:
    """Competition ranks starting at 1; tied values share their mean rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def aggregate(records) -> ReportTable:
    """Mean/std over seeds per (method, dataset, mechanism, sample kind),
    plus average ranks across settings when several methods are present."""
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    keys = sorted({(r.method, r.dataset, r.mechanism, r.sample_kind)
                   for r in records})
    rows = []
    for method, dataset, mech, kind in keys:
        sub = [r for r in records if (r.method, r.dataset, r.mechanism,
                                      r.sample_kind) == (method, dataset, mech, kind)]
        maes = np.array([r.mae for r in sub])
        rmses = np.array([r.rmse for r in sub])
        accs = [r.accuracy for r in sub if r.accuracy is not None]
        rows.append(AggregateRow(
            method, dataset, mech, kind, len(sub),
            float(maes.mean()), float(maes.std()),
            float(rmses.mean()), float(rmses.std()),
            float(np.mean(accs)) if accs else None,
            float(np.std(accs)) if accs else None))

    methods = sorted({r.method for r in rows})
    ranks = {m: 0.0 for m in methods}
    if len(methods) > 1:
        settings = sorted({(r.dataset, r.mechanism, r.sample_kind) for r in rows})
        per_method = {m: [] for m in methods}
        for setting in settings:
            sub = {r.method: r for r in rows
                   if (r.dataset, r.mechanism, r.sample_kind) == setting}
            if len(sub) != len(methods):
                continue
            for metric, sign in (("mae_mean", 1.0), ("rmse_mean", 1.0),
                                 ("accuracy_mean", -1.0)):
                vals = [getattr(sub[m], metric) for m in methods]
                if any(v is None for v in vals):
                    continue
                rk = _mean_ranks(sign * np.array(vals))
                for m, r in zip(methods, rk):
                    per_method[m].append(r)
        ranks = {m: float(np.mean(v)) if v else 0.0 for m, v in per_method.items()}
    return ReportTable(rows, ranks)
