"""End-to-end orchestration: split, mask, encode, warm-up, diffusion,
polish, decode, metrics. One seed = one independent benchmark run; failures
in one seed never poison the others."""

from __future__ import annotations

import os
import time
import traceback
from dataclasses import dataclass, field, replace

import numpy as np

from .diffusion import DiffusionConfig, impute, train
from .encode import (EncodedMatrix, binary_encode, destandardize_and_decode,
                     fit_standardizer, standardize)
from .ingest import RawTable, SplitSpec, load_csv, read_schema, split_in_out, write_csv
from .masks import Mask, MaskSpec, generate, write_mask_csv, mask_filename
from .metrics import (IN_SAMPLE, OUT_OF_SAMPLE, MetricRecord, aggregate,
                      cat_accuracy, mae_rmse, write_records_csv,
                      zero_fill_mae_rmse)
from .sweep import SweepConfig, column_sweep
from .util import derive_seed, matrix_checksum, write_kv

from . import __version__


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    schema: str | None = None
    mechanism: str = "mcar"
    rate: float = 0.3
    seeds: tuple = tuple(range(10))
    split_fraction: float = 0.7
    mar_observed_fraction: float = 0.3
    sweep: SweepConfig = SweepConfig()
    diffusion: DiffusionConfig = DiffusionConfig()
    skip_diffusion: bool = False
    skip_polish: bool = False
    regressor_variant: str = "gbt"
    out_dir: str | None = None
    master_seed: int = 0
    dataset_name: str = "dataset"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.regressor_variant not in ("gbt",):
            raise ValueError(f"unknown regressor variant {self.regressor_variant!r}")

    def method_name(self) -> str:
        if self.skip_diffusion and self.skip_polish:
            return "ours-warmup_only"
        if self.skip_diffusion:
            return "ours-no_diffusion"
        if self.skip_polish:
            return "ours-no_polish"
        return "ours"


@dataclass
class StageInfo:
    name: str
    seconds: float
    checksum: str


@dataclass
class RunManifest:
    config_echo: dict
    versions: dict
    stages: list = field(default_factory=list)

    def add_stage(self, name: str, seconds: float, checksum: str) -> None:
        if any(s.name == name for s in self.stages):
            raise ValueError(f"stage {name!r} recorded twice")
        self.stages.append(StageInfo(name, seconds, checksum))

    def checksums(self) -> dict:
        return {s.name: s.checksum for s in self.stages}

    def write(self, path) -> None:
        kv = {f"config.{k}": v for k, v in self.config_echo.items()}
        kv.update({f"version.{k}": v for k, v in self.versions.items()})
        for s in self.stages:
            kv[f"stage.{s.name}.seconds"] = f"{s.seconds:.3f}"
            kv[f"stage.{s.name}.checksum"] = s.checksum
        write_kv(path, kv)


@dataclass
class SeedRun:
    seed: int
    records: list
    manifest: RunManifest
    imputed_in: RawTable
    imputed_oos: RawTable


@dataclass
class PipelineResult:
    runs: list
    failures: list

    @property
    def records(self) -> list:
        return [r for run in self.runs for r in run.records]


class _Timer:
    def __init__(self):
        self.t0 = time.time()

    def lap(self) -> float:
        now = time.time()
        dt = now - self.t0
        self.t0 = now
        return dt


def _load_table(cfg: RunConfig) -> RawTable:
    schema = read_schema(cfg.schema) if cfg.schema else None
    return load_csv(cfg.dataset, schema)


def _config_echo(cfg: RunConfig, seed: int) -> dict:
    return {
        "dataset": cfg.dataset_name, "mechanism": cfg.mechanism,
        "rate": cfg.rate, "seed": seed, "split_fraction": cfg.split_fraction,
        "skip_diffusion": cfg.skip_diffusion, "skip_polish": cfg.skip_polish,
        "regressor_variant": cfg.regressor_variant,
        "master_seed": cfg.master_seed,
        "n_trajectories": cfg.diffusion.n_trajectories,
        "train_steps": cfg.diffusion.train_steps,
    }


def _refine(warm_values: np.ndarray, z: EncodedMatrix, book, cfg: RunConfig,
            model, impute_seed: int, manifest: RunManifest, tag: str):
    """Optional diffusion refinement then optional polish on a warm matrix."""
    timer = _Timer()
    cur = warm_values
    if model is not None:
        cur = impute(cur, z.mask, model, cfg.diffusion.n_trajectories, impute_seed)
        manifest.add_stage(f"impute_{tag}", timer.lap(), matrix_checksum(cur))
    if not cfg.skip_polish:
        cur = column_sweep(EncodedMatrix(cur, z.mask), book, cfg.sweep).values
        manifest.add_stage(f"polish_{tag}", timer.lap(), matrix_checksum(cur))
    return cur


def _score(truth_table: RawTable, truth_z: np.ndarray, final: np.ndarray,
           enc_mask: np.ndarray, source_mask: Mask, book, std, dataset: str,
           mechanism: str, kind: str, seed: int, method: str):
    numeric_cols = book.numeric_encoded_cols
    cat_cols = truth_table.categorical_col_indices()
    records = []
    mae = rmse = None
    if numeric_cols and (np.asarray(enc_mask)[:, numeric_cols] == 1).any():
        mae, rmse = mae_rmse(truth_z, final, enc_mask, numeric_cols)
        mae0, rmse0 = zero_fill_mae_rmse(truth_z, enc_mask, numeric_cols)
    acc = None
    decoded = destandardize_and_decode(final, std, book)
    if cat_cols and (source_mask.bits[:, cat_cols] == 1).any():
        acc = cat_accuracy(truth_table, decoded, source_mask.bits, cat_cols)
    if mae is not None:
        records.append(MetricRecord(dataset, mechanism, kind, seed, mae, rmse,
                                    acc, method))
        records.append(MetricRecord(dataset, mechanism, kind, seed, mae0, rmse0,
                                    None, "zero_fill"))
    return records, decoded


def _run_seed(cfg: RunConfig, in_table: RawTable, oos_table: RawTable,
              seed: int) -> SeedRun:
    ms = cfg.master_seed
    manifest = RunManifest(_config_echo(cfg, seed), {"tabrefine": __version__,
                                                     "numpy": np.__version__})
    timer = _Timer()

    mask_in = generate(in_table, MaskSpec(cfg.mechanism, cfg.rate,
                                          derive_seed(ms, "mask_in", seed),
                                          cfg.mar_observed_fraction))
    manifest.add_stage("mask_in", timer.lap(), matrix_checksum(mask_in.bits))
    mask_oos = generate(oos_table, MaskSpec(cfg.mechanism, cfg.rate,
                                            derive_seed(ms, "mask_oos", seed),
                                            cfg.mar_observed_fraction))
    manifest.add_stage("mask_oos", timer.lap(), matrix_checksum(mask_oos.bits))

    enc_in, book = binary_encode(in_table, mask_in)
    std = fit_standardizer(enc_in)
    z_in = standardize(enc_in, std)
    manifest.add_stage("encode_in", timer.lap(), matrix_checksum(z_in.values))

    warm_in = column_sweep(z_in, book, cfg.sweep)
    manifest.add_stage("warmup_in", timer.lap(), matrix_checksum(warm_in.values))

    model = None
    if not cfg.skip_diffusion:
        dcfg = replace(cfg.diffusion, seed=derive_seed(ms, "diffusion", seed))
        model = train(warm_in.values, z_in.mask, dcfg)
        state = np.concatenate([a.reshape(1, -1) for a in model.net.get_state()],
                               axis=1)
        manifest.add_stage("train_denoiser", timer.lap(), matrix_checksum(state))

    final_in = _refine(warm_in.values, z_in, book, cfg, model,
                       derive_seed(ms, "impute_in", seed), manifest, "in")

    zero = Mask(np.zeros((in_table.n_rows, in_table.n_cols), dtype=np.uint8))
    truth_in = standardize(binary_encode(in_table, zero)[0], std)
    rec_in, dec_in = _score(in_table, truth_in.values, final_in, z_in.mask,
                            mask_in, book, std, cfg.dataset_name,
                            cfg.mechanism, IN_SAMPLE, seed, cfg.method_name())
    manifest.add_stage("decode_in", timer.lap(), matrix_checksum(final_in))

    enc_oos, _ = binary_encode(oos_table, mask_oos)
    z_oos = standardize(enc_oos, std)
    manifest.add_stage("encode_oos", timer.lap(), matrix_checksum(z_oos.values))
    warm_oos = column_sweep(z_oos, book, cfg.sweep)
    manifest.add_stage("warmup_oos", timer.lap(), matrix_checksum(warm_oos.values))
    final_oos = _refine(warm_oos.values, z_oos, book, cfg, model,
                        derive_seed(ms, "impute_oos", seed), manifest, "oos")
    zero_oos = Mask(np.zeros((oos_table.n_rows, oos_table.n_cols), dtype=np.uint8))
    truth_oos = standardize(binary_encode(oos_table, zero_oos)[0], std)
    rec_oos, dec_oos = _score(oos_table, truth_oos.values, final_oos, z_oos.mask,
                              mask_oos, book, std, cfg.dataset_name,
                              cfg.mechanism, OUT_OF_SAMPLE, seed,
                              cfg.method_name())
    manifest.add_stage("decode_oos", timer.lap(), matrix_checksum(final_oos))

    run = SeedRun(seed, rec_in + rec_oos, manifest, dec_in, dec_oos)
    if cfg.out_dir:
        _write_seed_outputs(cfg, run, mask_in, mask_oos, model)
    return run


def _write_seed_outputs(cfg: RunConfig, run: SeedRun, mask_in: Mask,
                        mask_oos: Mask, model) -> None:
    sdir = os.path.join(cfg.out_dir, f"seed_{run.seed}")
    os.makedirs(sdir, exist_ok=True)
    run.manifest.write(os.path.join(sdir, "manifest.txt"))
    write_csv(run.imputed_in, os.path.join(sdir, "imputed_in.csv"))
    write_csv(run.imputed_oos, os.path.join(sdir, "imputed_oos.csv"))
    write_mask_csv(mask_in, os.path.join(
        sdir, mask_filename(cfg.dataset_name, cfg.mechanism, run.seed)))
    write_mask_csv(mask_oos, os.path.join(
        sdir, mask_filename(cfg.dataset_name + ".oos", cfg.mechanism, run.seed)))
    if model is not None:
        model.save(os.path.join(sdir, "denoiser.ckpt"))
        model.save_loss_trace(os.path.join(sdir, "loss_trace.csv"))


def run_pipeline(cfg: RunConfig, table: RawTable | None = None) -> PipelineResult:
    """Execute the full benchmark over all configured seeds.

    A stage error aborts only its own seed; the failure is recorded and the
    remaining seeds proceed.
    """
    if table is None:
        table = _load_table(cfg)
    in_table, oos_table = split_in_out(
        table, SplitSpec(cfg.split_fraction, derive_seed(cfg.master_seed, "split")))

    runs, failures = [], []
    for seed in cfg.seeds:
        try:
            runs.append(_run_seed(cfg, in_table, oos_table, seed))
        except Exception as e:  # noqa: BLE001 - seed isolation is the contract
            failures.append((seed, f"{type(e).__name__}: {e}",
                             traceback.format_exc()))
    result = PipelineResult(runs, failures)
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        if failures:
            with open(os.path.join(cfg.out_dir, "failures.txt"), "w",
                      encoding="utf-8") as f:
                for seed, msg, tb in failures:
                    f.write(f"seed {seed}: {msg}\n{tb}\n")
        if result.records:
            write_records_csv(result.records,
                              os.path.join(cfg.out_dir, "records.csv"))
            report = aggregate(result.records)
            report.to_csv(os.path.join(cfg.out_dir, "aggregate.csv"))
            with open(os.path.join(cfg.out_dir, "report.md"), "w",
                      encoding="utf-8") as f:
                f.write(report.to_markdown() + "\n")
    return result


def complete_table(table: RawTable, sweep_cfg: SweepConfig = SweepConfig(),
                   diffusion_cfg: DiffusionConfig = DiffusionConfig(),
                   skip_diffusion: bool = False, skip_polish: bool = False,
                   master_seed: int = 0) -> RawTable:
    """Impute a table whose absent cells are the mask (the production path:
    no split, no ground truth, returns a complete table)."""
    m, n = table.n_rows, table.n_cols
    bits = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        col = table.columns[j]
        if table.schema.columns[j].kind == "numerical":
            bits[:, j] = np.isnan(col)
        else:
            bits[:, j] = col < 0
    mask = Mask(bits)

    enc, book = binary_encode(table, mask)
    std = fit_standardizer(enc)
    z = standardize(enc, std)
    warm = column_sweep(z, book, sweep_cfg)
    cur = warm.values
    if not skip_diffusion and bits.any():
        dcfg = replace(diffusion_cfg, seed=derive_seed(master_seed, "diffusion"))
        model = train(cur, z.mask, dcfg)
        cur = impute(cur, z.mask, model, dcfg.n_trajectories,
                     derive_seed(master_seed, "impute"))
    if not skip_polish:
        cur = column_sweep(EncodedMatrix(cur, z.mask), book, sweep_cfg).values
    return destandardize_and_decode(cur, std, book)
