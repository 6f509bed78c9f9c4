"""Offline data generation, loading, and per-task trajectory stores for training."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import envlab
from .config import SECTIONS, load_config, save_config
from ..core import (
    Context,
    OfflineTaskDataset,
    read_dataset,
    read_metadata,
    validate_dataset,
    write_dataset,
)


DATA_CONFIG = "data.ini"


class MissingDatasetError(FileNotFoundError):
    pass


def dataset_path(data_dir, task_id):
    return Path(data_dir) / f"task_{task_id:03d}.bin"


def generate_datasets(config):
    """Tasks and datasets for every training and test task (deterministic)."""
    tasks = envlab.make_task_family(
        config.family, config.n_train_tasks, config.n_test_tasks, config.data_seed
    )
    policy = config.behavior_policy()
    datasets = {
        t.task_id: envlab.rollout_behavior(t, policy, config.transitions_per_task, config.data_seed)
        for t in tasks
    }
    return tasks, datasets


def write_datasets(config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks, datasets = generate_datasets(config)
    for t in tasks:
        meta = {
            "family": config.family,
            "seed": config.data_seed,
            "task_id": t.task_id,
            "goal_or_direction": ",".join(repr(float(v)) for v in t.goal_or_direction),
            "split": "train" if t.task_id < config.n_train_tasks else "test",
            "behavior_kind": config.behavior_kind,
            "noise_scale": config.noise_scale,
            "mixture_weight": config.mixture_weight,
            "transitions": config.transitions_per_task,
        }
        write_dataset(dataset_path(out, t.task_id), datasets[t.task_id], meta)
    save_config(config, out / DATA_CONFIG)
    return tasks, datasets


def data_settings(data_dir):
    """Data-section fields recorded by ``write_datasets`` (empty if absent)."""
    path = Path(data_dir) / DATA_CONFIG
    if not path.exists():
        return {}
    cfg = load_config(path)
    return {name: getattr(cfg, name) for name in SECTIONS["data"]} | {"family": cfg.family}


def load_datasets(config, data_dir):
    tasks = envlab.make_task_family(
        config.family, config.n_train_tasks, config.n_test_tasks, config.data_seed
    )
    datasets = {}
    for t in tasks:
        path = dataset_path(data_dir, t.task_id)
        if not path.exists():
            raise MissingDatasetError(f"no dataset for task {t.task_id} at {path}")
        meta_path = path.with_suffix(".meta")
        if meta_path.exists():
            meta = read_metadata(meta_path)
            if meta.get("family") != config.family:
                raise ValueError(f"{path} holds {meta.get('family')} data, config wants {config.family}")
        datasets[t.task_id] = read_dataset(path)
    return tasks, datasets


@dataclass
class TaskStore:
    """Trajectories of one task stacked as (n_traj, horizon, dim) arrays."""

    task_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    @classmethod
    def from_dataset(cls, ds: OfflineTaskDataset):
        report = validate_dataset(ds)
        if report:
            raise ValueError(f"dataset for task {ds.task_id} is malformed: {report[:3]}")
        bounds = ds.trajectory_bounds()
        lengths = {b - a for a, b in bounds}
        if len(lengths) != 1 or bounds[-1][1] != len(ds):
            raise ValueError("datasets must consist of equal-length complete trajectories")
        n, L = len(bounds), lengths.pop()
        return cls(
            ds.task_id,
            ds.states.reshape(n, L, -1),
            ds.actions.reshape(n, L, -1),
            ds.rewards.reshape(n, L),
            ds.next_states.reshape(n, L, -1),
            ds.dones.reshape(n, L),
        )

    @property
    def n_trajectories(self):
        return len(self.rewards)

    def context(self, i):
        return Context(self.states[i], self.actions[i], self.rewards[i], self.next_states[i],
                       self.task_id)

    def split(self, n_heldout):
        """(train, heldout) stores; the last ``n_heldout`` trajectories are held out."""
        if n_heldout >= self.n_trajectories:
            raise ValueError("held-out set would swallow the whole dataset")
        cut = self.n_trajectories - n_heldout
        return self._slice(slice(0, cut)), self._slice(slice(cut, None))

    def _slice(self, sl):
        return TaskStore(self.task_id, self.states[sl], self.actions[sl], self.rewards[sl],
                         self.next_states[sl], self.dones[sl])

    def flat(self):
        n = self.rewards.size
        return (
            self.states.reshape(n, -1), self.actions.reshape(n, -1), self.rewards.reshape(n),
            self.next_states.reshape(n, -1), self.dones.reshape(n),
        )
