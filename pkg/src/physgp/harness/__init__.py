"""Experiment plumbing: configs, CSV I/O, synthetic generators, runners, tables, CLI."""

from .config import ConfigError, ExperimentConfig, config_hash, from_mapping, load_config
from .experiments import (
    AGAPE,
    EMULATION_METHODS,
    GP_R,
    GP_RS,
    GP_S,
    JGP,
    MEAN,
    MODEL_KINDS,
    STRATEGIES,
    KFoldResult,
    SearchSpec,
    emulator_config,
    fit_strategy,
    fold_assignment,
    gap_fill_once,
    kfold_rmse,
    run_crosssite,
    run_emulation_bench,
    run_gapfill,
    run_kfold,
    run_samesite,
    truth_grid,
)
from .io import (
    DataFormatError,
    load_matrix_csv,
    load_series_csv,
    load_tagged_csv,
    write_series_csv,
    write_tagged_csv,
)
from .synthetic import CampaignSpec, GapFillSpec, Mixture
from .tables import RunRecord, emit_tables, summarize
