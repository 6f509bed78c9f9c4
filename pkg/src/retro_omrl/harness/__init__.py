"""Configuration, the meta-training loop, evaluation protocols and the CLI."""
from .config import PAPER_VALUES, TrainingConfig, load_config, preset, save_config
from .data import MissingDatasetError, TaskStore, generate_datasets, load_datasets, write_datasets
from .experiments import (
    MismatchedBudgetError,
    Table,
    ablation_summary,
    emit_plot_data,
    final_return,
    report_walltime,
    run_ablation_frequency,
    run_meta_test,
)
from .training import RunArtifacts, expected_encoder_updates, read_metric_csv, run_training

__all__ = [
    "PAPER_VALUES",
    "MismatchedBudgetError",
    "MissingDatasetError",
    "RunArtifacts",
    "Table",
    "TaskStore",
    "TrainingConfig",
    "ablation_summary",
    "emit_plot_data",
    "expected_encoder_updates",
    "final_return",
    "generate_datasets",
    "load_config",
    "load_datasets",
    "preset",
    "read_metric_csv",
    "report_walltime",
    "run_ablation_frequency",
    "run_meta_test",
    "run_training",
    "save_config",
    "write_datasets",
]
