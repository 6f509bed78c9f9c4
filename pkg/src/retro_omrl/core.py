"""Offline transition data, contexts, latent codes and the binary dataset format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class EmptyContextError(ValueError):
    pass


def _frozen(a, ndim):
    a = np.array(a, dtype=np.float64, ndmin=ndim)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TransitionRecord:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    task_id: int

    def __post_init__(self):
        object.__setattr__(self, "state", _frozen(self.state, 1))
        object.__setattr__(self, "action", _frozen(self.action, 1))
        object.__setattr__(self, "next_state", _frozen(self.next_state, 1))
        object.__setattr__(self, "reward", float(self.reward))
        object.__setattr__(self, "done", bool(self.done))
        object.__setattr__(self, "task_id", int(self.task_id))

    def __eq__(self, other):
        if not isinstance(other, TransitionRecord):
            return NotImplemented
        return (
            np.array_equal(self.state, other.state)
            and np.array_equal(self.action, other.action)
            and self.reward == other.reward
            and np.array_equal(self.next_state, other.next_state)
            and self.done == other.done
            and self.task_id == other.task_id
        )

    __hash__ = None


@dataclass(frozen=True)
class OfflineTaskDataset:
    """Column-stored transitions of one task.

    Rows are kept as parallel arrays; ``transitions`` materialises records on
    demand.
    """

    task_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    task_ids: np.ndarray = None

    def __post_init__(self):
        n = len(self.rewards)
        object.__setattr__(self, "states", _frozen(self.states, 2))
        object.__setattr__(self, "actions", _frozen(self.actions, 2))
        object.__setattr__(self, "rewards", _frozen(self.rewards, 1))
        object.__setattr__(self, "next_states", _frozen(self.next_states, 2))
        dones = np.array(self.dones, dtype=bool)
        dones.flags.writeable = False
        object.__setattr__(self, "dones", dones)
        ids = np.full(n, self.task_id) if self.task_ids is None else np.array(self.task_ids, int)
        ids.flags.writeable = False
        object.__setattr__(self, "task_ids", ids)

    @classmethod
    def from_records(cls, records, task_id=None):
        records = list(records)
        if task_id is None:
            task_id = records[0].task_id if records else 0
        if not records:
            e = np.zeros((0, 0))
            return cls(task_id, e, e, np.zeros(0), e, np.zeros(0, bool))
        return cls(
            task_id,
            np.stack([r.state for r in records]),
            np.stack([r.action for r in records]),
            np.array([r.reward for r in records]),
            np.stack([r.next_state for r in records]),
            np.array([r.done for r in records]),
            np.array([r.task_id for r in records]),
        )

    def __len__(self):
        return len(self.rewards)

    @property
    def state_dim(self):
        return self.states.shape[1]

    @property
    def action_dim(self):
        return self.actions.shape[1]

    @property
    def transitions(self):
        return [self.record(i) for i in range(len(self))]

    def record(self, i):
        return TransitionRecord(
            self.states[i], self.actions[i], self.rewards[i], self.next_states[i],
            self.dones[i], self.task_ids[i],
        )

    def trajectory_bounds(self):
        """(start, stop) index pairs of complete trajectories, split at done flags."""
        ends = np.flatnonzero(self.dones) + 1
        starts = np.concatenate([[0], ends[:-1]])
        return list(zip(starts.tolist(), ends.tolist()))

    def trajectories(self):
        return [Trajectory.from_dataset(self, a, b) for a, b in self.trajectory_bounds()]

    def subset(self, idx):
        idx = np.asarray(idx)
        return OfflineTaskDataset(
            self.task_id, self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.dones[idx], self.task_ids[idx],
        )

    def equals(self, other):
        return (
            self.task_id == other.task_id
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("states", "actions", "rewards", "next_states", "dones", "task_ids")
            )
        )


@dataclass(frozen=True)
class Context:
    """A set of transitions from one task, stored as columns."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    task_id: int = -1

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states, 2))
        object.__setattr__(self, "actions", _frozen(self.actions, 2))
        object.__setattr__(self, "rewards", _frozen(self.rewards, 1))
        object.__setattr__(self, "next_states", _frozen(self.next_states, 2))

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            raise EmptyContextError("context has no transitions")
        return cls(
            np.stack([r.state for r in records]),
            np.stack([r.action for r in records]),
            np.array([r.reward for r in records]),
            np.stack([r.next_state for r in records]),
            records[0].task_id,
        )

    @classmethod
    def from_dataset(cls, ds: OfflineTaskDataset, idx):
        return cls(
            ds.states[idx], ds.actions[idx], ds.rewards[idx], ds.next_states[idx], ds.task_id
        )

    def __len__(self):
        return len(self.rewards)

    @property
    def records(self):
        return [
            TransitionRecord(s, a, r, s2, False, self.task_id)
            for s, a, r, s2 in zip(self.states, self.actions, self.rewards, self.next_states)
        ]

    @property
    def behavior_part(self):
        return [(s, a) for s, a in zip(self.states, self.actions)]

    @property
    def task_part(self):
        return [(s2, r) for s2, r in zip(self.next_states, self.rewards)]

    def rows(self):
        """Encoder input matrix with columns [s, a, s', r]."""
        return np.concatenate(
            [self.states, self.actions, self.next_states, self.rewards[:, None]], axis=1
        )

    def permuted(self, order):
        order = np.asarray(order)
        return Context(
            self.states[order], self.actions[order], self.rewards[order],
            self.next_states[order], self.task_id,
        )


@dataclass(frozen=True)
class Trajectory:
    transitions: tuple

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        ids = {t.task_id for t in self.transitions}
        if len(ids) > 1:
            raise ValueError(f"trajectory mixes task ids {sorted(ids)}")

    @classmethod
    def from_dataset(cls, ds, start, stop):
        return cls(tuple(ds.record(i) for i in range(start, stop)))

    def __len__(self):
        return len(self.transitions)

    @property
    def task_id(self):
        return self.transitions[0].task_id

    def is_chained(self):
        for a, b in zip(self.transitions[:-1], self.transitions[1:]):
            if not a.done and not np.array_equal(a.next_state, b.state):
                return False
        return True

    def as_context(self):
        return Context.from_records(self.transitions)


@dataclass(frozen=True)
class LatentZ:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, 1))

    @property
    def dim(self):
        return self.values.size


@dataclass(frozen=True)
class EncoderSnapshot:
    parameters: np.ndarray
    step_index: int
    spec: object = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parameters", _frozen(self.parameters, 1))


class ContextSplit(NamedTuple):
    behavior: list
    task: list


def split_context(context: Context) -> ContextSplit:
    """Project a context onto its (s, a) and (s', r) parts, order preserved."""
    if len(context) == 0:
        raise EmptyContextError("cannot split an empty context")
    return ContextSplit(context.behavior_part, context.task_part)


def merge_context(behavior, task, task_id=-1) -> Context:
    """Inverse of ``split_context``."""
    if len(behavior) != len(task):
        raise ValueError("behavior and task parts differ in length")
    if not behavior:
        raise EmptyContextError("cannot merge empty parts")
    return Context(
        np.stack([s for s, _ in behavior]),
        np.stack([a for _, a in behavior]),
        np.array([r for _, r in task]),
        np.stack([s2 for s2, _ in task]),
        task_id,
    )


@dataclass(frozen=True)
class Finding:
    kind: str
    index: int
    detail: str


def validate_dataset(dataset: OfflineTaskDataset, n_tasks=None, state_dim=None, action_dim=None):
    """List every invariant violation; an empty list means the dataset is well formed."""
    report = []
    n = len(dataset)
    if n == 0:
        report.append(Finding("empty", -1, "dataset has no transitions"))
        return report
    sd = dataset.states.shape[1] if state_dim is None else state_dim
    ad = dataset.actions.shape[1] if action_dim is None else action_dim
    if dataset.states.shape != (n, sd):
        report.append(Finding("dimension", -1, f"states shape {dataset.states.shape}"))
    if dataset.next_states.shape != dataset.states.shape:
        report.append(
            Finding("dimension", -1, f"next_states shape {dataset.next_states.shape} "
                    f"!= states shape {dataset.states.shape}")
        )
    if dataset.actions.shape != (n, ad):
        report.append(Finding("dimension", -1, f"actions shape {dataset.actions.shape}"))
    for name in ("states", "actions", "next_states"):
        arr = getattr(dataset, name)
        for i in np.flatnonzero(~np.all(np.isfinite(arr.reshape(n, -1)), axis=1)):
            report.append(Finding("non_finite", int(i), f"{name} row {i}"))
    for i in np.flatnonzero(~np.isfinite(dataset.rewards)):
        report.append(Finding("non_finite", int(i), f"reward at {i}"))
    for i in np.flatnonzero(dataset.task_ids != dataset.task_id):
        report.append(
            Finding("task_id", int(i), f"task id {dataset.task_ids[i]} != {dataset.task_id}")
        )
    if n_tasks is not None:
        bad = (dataset.task_ids < 0) | (dataset.task_ids >= n_tasks)
        for i in np.flatnonzero(bad):
            report.append(Finding("task_id", int(i), f"task id {dataset.task_ids[i]} out of range"))
    return report


# -- dataset file format ---------------------------------------------------
# header: task_id, state_dim, action_dim, count as little-endian int64,
# then count rows of little-endian float64 [s, a, r, s', done].
_HEADER = struct.Struct("<4q")


def write_dataset(path, dataset: OfflineTaskDataset, metadata: dict | None = None):
    path = Path(path)
    rows = np.concatenate(
        [
            dataset.states,
            dataset.actions,
            dataset.rewards[:, None],
            dataset.next_states,
            dataset.dones[:, None].astype(np.float64),
        ],
        axis=1,
    ).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(dataset.task_id, dataset.state_dim, dataset.action_dim, len(dataset)))
        fh.write(rows.tobytes())
    if metadata is not None:
        write_metadata(path.with_suffix(".meta"), metadata)


def read_dataset(path) -> OfflineTaskDataset:
    with open(path, "rb") as fh:
        task_id, sd, ad, count = _HEADER.unpack(fh.read(_HEADER.size))
        width = 2 * sd + ad + 2
        rows = np.frombuffer(fh.read(), dtype="<f8")
    if rows.size != count * width:
        raise ValueError(f"{path}: expected {count} rows of width {width}, got {rows.size} values")
    rows = rows.reshape(count, width).astype(np.float64)
    s = rows[:, :sd]
    a = rows[:, sd : sd + ad]
    r = rows[:, sd + ad]
    s2 = rows[:, sd + ad + 1 : 2 * sd + ad + 1]
    done = rows[:, -1] != 0.0
    return OfflineTaskDataset(task_id, s, a, r, s2, done)


def write_metadata(path, metadata: dict):
    lines = [f"{k}={metadata[k]}" for k in sorted(metadata)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_metadata(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out
