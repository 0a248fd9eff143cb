"""tabrefine: mixed-type tabular missing-value imputation.

Pipeline: leakage-free preprocessing -> one-pass predictive warm-up ->
masked variance-exploding diffusion refinement with a selective state-space
denoiser -> polishing sweep -> inverse transforms, plus a seeded benchmark
harness for MCAR/MAR/MNAR evaluation.
"""

__version__ = "0.1.0"

from .ingest import (Schema, Column, RawTable, SplitSpec, load_csv, write_csv,
                     split_in_out, read_schema, write_schema)
from .masks import (Mask, MaskSpec, gen_mcar, gen_mar, gen_mnar, generate,
                    write_mask_csv, read_mask_csv)
from .encode import (CodeBook, EncodedMatrix, Standardizer, binary_encode,
                     fit_standardizer, standardize, destandardize,
                     destandardize_and_decode)
from .gbt import (GbtParams, GbtModel, fit_regressor, fit_classifier, predict,
                  predict_proba)
from .sweep import SweepConfig, CompletedMatrix, column_sweep
from .denoiser import DenoiserConfig, DenoiserNet
from .copytask import CopyTaskConfig, selective_copy_eval
from .diffusion import (NoiseSchedule, DiffusionConfig, TrainedDenoiser,
                        forward_perturb, true_score, edm_loss, train,
                        reverse_sample, impute)
from .metrics import (MetricRecord, ReportTable, mae_rmse, cat_accuracy,
                      aggregate, write_records_csv, read_records_csv)
from .pipeline import RunConfig, RunManifest, PipelineResult, run_pipeline, complete_table
from .synthetic import make_synthetic_mixed
