"""Post-training protocols: meta-test, frequency ablation, timing and plot data."""
from __future__ import annotations

import csv
import math
import os
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import offlinerl as rl
from .data import MissingDatasetError, TaskStore, generate_datasets, load_datasets
from .training import RunArtifacts, load_policy, read_metric_csv, run_training

ABLATION_FREQUENCIES = (1, 2, 4, 8)
THREADS_ENV = "RETRO_OMRL_THREADS"


@dataclass
class Table:
    columns: tuple
    rows: list

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def where(self, **match):
        idx = {self.columns.index(k): v for k, v in match.items()}
        return [r for r in self.rows if all(r[i] == v for i, v in idx.items())]

    def write_csv(self, path, digest=None):
        with open(path, "w", newline="") as fh:
            if digest:
                fh.write(f"# config_digest={digest}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])

    def format(self):
        cells = [[_cell(v) for v in r] for r in self.rows]
        widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c)
                  for i, c in enumerate(self.columns)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(self.columns, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
        return "\n".join(lines)

    def all_finite(self):
        return all(math.isfinite(v) for r in self.rows for v in r if isinstance(v, float))


def _cell(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


# -- meta-test --------------------------------------------------------------------
@dataclass
class MetaTestResult:
    per_task: Table
    mean: float
    std: float

    def summary(self):
        return f"meta-test return {self.mean:.4f} +- {self.std:.4f} over {len(self.per_task.rows)} tasks"


def run_meta_test(artifacts: RunArtifacts, test_tasks, n_episodes, seed, datasets=None, actor=None):
    """Few-shot offline evaluation: one dataset trajectory per test task, encoded once.

    ``actor`` overrides the checkpointed policy with a callable ``(state, z) -> action``.
    """
    encoder, trained_actor, _ = load_policy(artifacts.latest_checkpoint())
    policy = trained_actor if actor is None else actor
    cfg = artifacts.config
    if datasets is None:
        if not cfg.data_dir:
            raise MissingDatasetError("no datasets given and the run has no data_dir")
        _, datasets = load_datasets(cfg, cfg.data_dir)
    rows = []
    for task in test_tasks:
        if task.task_id not in datasets:
            raise MissingDatasetError(f"no dataset for test task {task.task_id}")
        store = TaskStore.from_dataset(datasets[task.task_id])
        rng = np.random.default_rng([seed, task.task_id])
        ctx_id = int(rng.integers(store.n_trajectories))
        mean, std = rl.evaluate_policy(task, encoder, policy, store.context(ctx_id), n_episodes,
                                       [seed, task.task_id, 1], cfg.brac_config())
        rows.append((task.task_id, ctx_id, mean, std))
    table = Table(("task_id", "context_id", "mean_return", "std_return"), rows)
    means = np.array(table.column("mean_return"))
    return MetaTestResult(table, float(means.mean()), float(means.std()))


def final_return(artifacts: RunArtifacts):
    """Mean over test tasks of the last logged evaluation."""
    rows = read_metric_csv(artifacts.returns_csv)
    if not rows:
        return float("nan")
    last = max(int(r["train_step"]) for r in rows)
    return float(np.mean([float(r["mean_return"]) for r in rows if int(r["train_step"]) == last]))


def shift_stats(artifacts: RunArtifacts):
    values = [float(r["shift_value"]) for r in read_metric_csv(artifacts.shift_csv)
              if r["encoder_updated"] == "1"]
    if not values:
        return 0.0, 0.0
    return float(np.mean(values)), float(np.max(values))


# -- ablation ---------------------------------------------------------------------
def thread_cap():
    """Worker count for parallel sweeps, capped by the environment variable."""
    cap = os.environ.get(THREADS_ENV)
    return max(1, int(cap)) if cap else 1


def _train_one(args):
    config, datasets, tasks = args
    return run_training(config, datasets, tasks)


def run_ablation_frequency(config, frequencies, seeds=(0,), datasets=None, tasks=None,
                           workers=None):
    """One run per (frequency, seed) under ``config.out_dir``; returns (table, artifacts)."""
    frequencies = list(frequencies)
    bad = [f for f in frequencies if f not in ABLATION_FREQUENCIES]
    if bad or not frequencies:
        raise ValueError(f"frequencies must be a non-empty subset of {ABLATION_FREQUENCIES}, got {frequencies}")
    if datasets is None:
        if config.data_dir:
            tasks, datasets = load_datasets(config, config.data_dir)
        else:
            tasks, datasets = generate_datasets(config)
    root = Path(config.out_dir)
    jobs = [
        (config.with_overrides(update_frequency=f, seed=s, out_dir=str(root / f"freq{f}" / f"seed{s}")),
         datasets, tasks)
        for f in frequencies
        for s in seeds
    ]
    workers = workers or thread_cap()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            runs = list(pool.map(_train_one, jobs))
    else:
        runs = [_train_one(j) for j in jobs]
    rows = []
    for a in runs:
        mean_shift, max_shift = shift_stats(a)
        rows.append((a.config.update_frequency, a.seed, final_return(a), mean_shift, max_shift,
                     a.encoder_updates, a.walltime, int(a.ok)))
    table = Table(("frequency", "seed", "final_return", "mean_shift", "max_shift",
                   "encoder_updates", "walltime", "checks_ok"), rows)
    root.mkdir(parents=True, exist_ok=True)
    table.write_csv(root / "ablation.csv", config.with_overrides(update_frequency=1, seed=0).digest())
    return table, runs


def ablation_summary(table: Table):
    """Per-frequency mean of final return and wall-clock across seeds."""
    by_f = defaultdict(list)
    for r in table.rows:
        by_f[r[0]].append(r)
    rows = []
    for f in sorted(by_f):
        rs = by_f[f]
        rows.append((f, len(rs), float(np.mean([r[2] for r in rs])), float(np.std([r[2] for r in rs])),
                     float(np.mean([r[3] for r in rs])), rs[0][5], float(np.mean([r[6] for r in rs]))))
    return Table(("frequency", "n_seeds", "mean_return", "std_return", "mean_shift",
                  "encoder_updates", "mean_walltime"), rows)


# -- timing -----------------------------------------------------------------------
class MismatchedBudgetError(ValueError):
    pass


def report_walltime(runs):
    """Wall-clock and encoder-update counts per run, with ratios to the first run."""
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("need at least two runs to compare")
    budgets = {a.config.total_steps for a in runs}
    if len(budgets) != 1:
        raise MismatchedBudgetError(f"runs have different step budgets: {sorted(budgets)}")
    ref = runs[0].walltime
    rows = [
        (a.label, a.seed, a.config.total_steps, a.encoder_updates, a.walltime,
         a.walltime / ref if ref > 0 else float("nan"))
        for a in runs
    ]
    return Table(("run_label", "seed", "total_steps", "encoder_updates", "walltime", "ratio"), rows)


# -- plot data --------------------------------------------------------------------
def _series(artifacts: RunArtifacts):
    """{metric: (steps, values)} for one run."""
    out = {}
    returns = read_metric_csv(artifacts.returns_csv)
    by_step = defaultdict(list)
    for r in returns:
        by_step[int(r["train_step"])].append(float(r["mean_return"]))
    if by_step:
        steps = sorted(by_step)
        out["return"] = (np.array(steps), np.array([np.mean(by_step[s]) for s in steps]))
    acc = read_metric_csv(artifacts.accuracy_csv)
    if acc:
        out["accuracy"] = (np.array([int(r["step_index"]) for r in acc]),
                           np.array([float(r["accuracy"]) for r in acc]))
    shift = [r for r in read_metric_csv(artifacts.shift_csv) if r["encoder_updated"] == "1"]
    if shift:
        out["shift"] = (np.array([int(r["step_index"]) for r in shift]),
                        np.array([float(r["shift_value"]) for r in shift]))
    return out


@dataclass
class PlotData:
    long: Table
    summary: Table


def emit_plot_data(runs, out_path=None):
    """Long-format (step, metric, value, seed, run_label) plus per-step mean/std over seeds.

    Runs sharing a label but logged on different step grids are resampled
    (linear interpolation) onto the coarsest grid among them.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to aggregate")
    long_rows = []
    groups = defaultdict(list)
    for a in runs:
        for metric, (steps, values) in _series(a).items():
            groups[(a.label, metric)].append((a.seed, steps, values))
            long_rows.extend((int(s), metric, float(v), a.seed, a.label) for s, v in zip(steps, values))
    summary_rows = []
    for (label, metric), series in sorted(groups.items()):
        grids = [tuple(s) for _, s, _ in series]
        grid = np.array(min(grids, key=len))
        if len(set(grids)) > 1:
            warnings.warn(f"{label}/{metric}: step grids differ across seeds; "
                          f"resampling to the coarsest grid ({len(grid)} points)", stacklevel=2)
        stacked = np.array([np.interp(grid, s, v) for _, s, v in series])
        for i, step in enumerate(grid):
            summary_rows.append((int(step), metric, label, float(stacked[:, i].mean()),
                                 float(stacked[:, i].std()), len(series)))
    long = Table(("step", "metric", "value", "seed", "run_label"), long_rows)
    summary = Table(("step", "metric", "run_label", "mean", "std", "n_seeds"), summary_rows)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.mkdir(parents=True, exist_ok=True)
        long.write_csv(out_path / "plot_long.csv")
        summary.write_csv(out_path / "plot_summary.csv")
    return PlotData(long, summary)
