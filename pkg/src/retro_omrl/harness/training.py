"""The meta-training loop: gated task-encoder updates interleaved with BRAC steps."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import offlinerl as rl
from .. import taskenc
from ..diffcompute import (
    NonFiniteError,
    OptimizerState,
    adam_step,
    grad,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .config import TrainingConfig, save_config
from ..envlab import make_task_family
from .data import MissingDatasetError, TaskStore, load_datasets

log = logging.getLogger(__name__)

CHECKPOINT_INITIAL = "checkpoint_initial.npz"
CHECKPOINT_FINAL = "checkpoint_final.npz"


@dataclass
class RunArtifacts:
    out_dir: Path
    config: TrainingConfig
    config_digest: str
    seed: int
    checkpoints: list = field(default_factory=list)
    returns_csv: Path = None
    accuracy_csv: Path = None
    shift_csv: Path = None
    walltime_json: Path = None
    encoder_updates: int = 0
    walltime: float = 0.0
    final_accuracy: float = float("nan")
    checks: dict = field(default_factory=dict)

    @property
    def metric_csvs(self):
        return [p for p in (self.returns_csv, self.accuracy_csv, self.shift_csv) if p]

    @property
    def label(self):
        c = self.config
        return f"{c.loss_kind}-f{c.update_frequency}"

    @property
    def ok(self):
        return all(self.checks.values())

    def latest_checkpoint(self):
        return self.checkpoints[-1]

    def to_manifest(self):
        return {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "label": self.label,
            "checkpoints": [str(p) for p in self.checkpoints],
            "metrics": [str(p) for p in self.metric_csvs],
            "encoder_updates": self.encoder_updates,
            "walltime_seconds": self.walltime,
            "final_accuracy": self.final_accuracy,
            "checks": self.checks,
        }

    @classmethod
    def load(cls, out_dir):
        from .config import load_config

        out_dir = Path(out_dir)
        manifest = json.loads((out_dir / "manifest.json").read_text())
        config = load_config(out_dir / "config.ini")
        return cls(
            out_dir, config, manifest["config_digest"], manifest["seed"],
            [Path(p) for p in manifest["checkpoints"]],
            out_dir / "returns.csv", out_dir / "accuracy.csv", out_dir / "shift.csv",
            out_dir / "walltime.json", manifest["encoder_updates"], manifest["walltime_seconds"],
            manifest["final_accuracy"], manifest["checks"],
        )


class Learner:
    """All trainable parameters and optimizer states of one run."""

    def __init__(self, config: TrainingConfig, state_dim, action_dim, rng):
        self.config = config
        self.enc_cfg = config.encoder_config()
        self.brac = config.brac_config()
        lr = config.learning_rate
        enc_spec = taskenc.encoder_spec(state_dim, action_dim, self.enc_cfg)
        self.encoder = init_params(enc_spec, rng)
        self.head = init_params(taskenc.head_spec(self.enc_cfg, config.n_train_tasks), rng)
        self.decoder = init_params(taskenc.decoder_spec(state_dim, action_dim, self.enc_cfg), rng)
        self.enc_opts = [
            OptimizerState.zeros(p.spec.n_params, learning_rate=lr)
            for p in (self.encoder, self.head, self.decoder)
        ]
        self.actor = rl.init_actor(state_dim, action_dim, self.enc_cfg.d_z, self.brac, rng)
        self.behavior = rl.init_behavior(state_dim, action_dim, self.enc_cfg.d_z, self.brac, rng)
        self.critics = rl.init_critics(state_dim, action_dim, self.enc_cfg.d_z, self.brac, rng)

    def encoder_step(self, contexts, labels):
        objective = taskenc.encoder_objective(
            self.enc_cfg, self.encoder.spec, self.head.spec, self.decoder.spec, contexts, labels
        )
        value, grads = grad(objective, self.encoder, self.head, self.decoder)
        new = []
        for p, g, opt in zip((self.encoder, self.head, self.decoder), grads, self.enc_opts):
            new.append(adam_step(p, g, opt))
        (self.encoder, o1), (self.head, o2), (self.decoder, o3) = new
        self.enc_opts = [o1, o2, o3]
        return value

    def rl_step(self, batch, rng):
        self.behavior, bc_loss = rl.behavior_step(batch, self.behavior, self.brac)
        self.critics, q_loss = rl.critic_update(
            batch, self.critics, self.actor, self.behavior, self.brac, rng
        )
        self.actor, pi_loss = rl.actor_update(
            batch, self.actor, self.critics, self.behavior, self.brac.alpha_kl, self.brac, rng
        )
        return bc_loss, q_loss, pi_loss

    def nets(self):
        c = self.critics
        return {
            "encoder": self.encoder, "head": self.head, "decoder": self.decoder,
            "actor": self.actor.params, "behavior": self.behavior.params,
            "q1": c.q1, "q2": c.q2, "q1_target": c.q1_target, "q2_target": c.q2_target,
        }

    def optimizers(self):
        return {
            "encoder": self.enc_opts[0], "head": self.enc_opts[1], "decoder": self.enc_opts[2],
            "actor": self.actor.opt, "behavior": self.behavior.opt,
            "q1": self.critics.opt1, "q2": self.critics.opt2,
        }

    def save(self, path, meta):
        save_checkpoint(path, self.nets(), self.optimizers(), meta)


def load_policy(path):
    """(encoder ParameterVector, ActorParams) from a checkpoint."""
    nets, opts, meta = load_checkpoint(path)
    return nets["encoder"], rl.PolicyParams(nets["actor"], opts["actor"]), meta


def expected_encoder_updates(total_steps, update_frequency):
    return math.ceil(total_steps / update_frequency)


class _CSV:
    def __init__(self, path, header, digest):
        self.path = Path(path)
        self.fh = open(self.path, "w", newline="")
        self.fh.write(f"# config_digest={digest}\n")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(header)
        self.finite = True

    def row(self, *values):
        for v in values:
            if isinstance(v, float) and not math.isfinite(v):
                self.finite = False
        self.w.writerow([repr(v) if isinstance(v, float) else v for v in values])

    def close(self):
        self.fh.close()


def read_metric_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _eval_context(store: TaskStore, seed, step):
    rng = np.random.default_rng([seed, step, store.task_id, 7])
    i = int(rng.integers(store.n_trajectories))
    return i, store.context(i)


def evaluate_on_tasks(encoder, actor, tasks, stores, n_episodes, seed, step, brac_cfg):
    """Per-task (task_id, mean, std, context_id) rows with one trajectory context each."""
    rows = []
    for task in tasks:
        ctx_id, ctx = _eval_context(stores[task.task_id], seed, step)
        mean, std = rl.evaluate_policy(task, encoder, actor, ctx, n_episodes,
                                       [seed, step, task.task_id], brac_cfg)
        rows.append((task.task_id, mean, std, ctx_id))
    return rows


def run_training(config: TrainingConfig, datasets=None, tasks=None) -> RunArtifacts:
    """Run the meta-training loop and write checkpoints and metric CSVs to ``config.out_dir``.

    ``datasets`` maps task_id -> OfflineTaskDataset for all training and test
    tasks; if omitted they are read from ``config.data_dir``.
    """
    if datasets is None:
        tasks, datasets = load_datasets(config, config.data_dir)
    elif tasks is None:
        tasks = make_task_family(config.family, config.n_train_tasks, config.n_test_tasks,
                                 config.data_seed)
    n_train = config.n_train_tasks
    train_tasks, test_tasks = tasks[:n_train], tasks[n_train:]
    for t in tasks:
        if t.task_id not in datasets:
            raise MissingDatasetError(f"no dataset for task {t.task_id}")

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.ini")
    digest = config.digest()

    stores = {t.task_id: TaskStore.from_dataset(datasets[t.task_id]) for t in tasks}
    train_stores, heldout_stores = {}, {}
    for t in train_tasks:
        train_stores[t.task_id], heldout_stores[t.task_id] = stores[t.task_id].split(
            config.heldout_trajectories
        )
    flat = {tid: s.flat() for tid, s in train_stores.items()}

    heldout_contexts, heldout_labels = [], []
    for label, t in enumerate(train_tasks):
        for i in range(heldout_stores[t.task_id].n_trajectories):
            heldout_contexts.append(heldout_stores[t.task_id].context(i))
            heldout_labels.append(label)
    # probe set: round-robin over tasks through the held-out trajectories
    probes = [
        heldout_stores[train_tasks[j % n_train].task_id].context(
            (j // n_train) % heldout_stores[train_tasks[j % n_train].task_id].n_trajectories
        )
        for j in range(config.n_probe)
    ] if config.heldout_trajectories else []

    ss = np.random.SeedSequence(config.seed)
    init_rng, task_rng, ctx_rng, batch_rng, policy_rng = [
        np.random.default_rng(s) for s in ss.spawn(5)
    ]
    sample = next(iter(datasets.values()))
    learner = Learner(config, sample.state_dim, sample.action_dim, init_rng)
    enc_cfg = learner.enc_cfg

    learner.save(out / CHECKPOINT_INITIAL, {"step": 0, "config_digest": digest})
    artifacts = RunArtifacts(out, config, digest, config.seed, [out / CHECKPOINT_INITIAL])
    artifacts.returns_csv = out / "returns.csv"
    artifacts.accuracy_csv = out / "accuracy.csv"
    artifacts.shift_csv = out / "shift.csv"
    artifacts.walltime_json = out / "walltime.json"
    returns_csv = _CSV(artifacts.returns_csv,
                       ["train_step", "task_id", "mean_return", "std_return", "context_id", "seed"],
                       digest)
    accuracy_csv = _CSV(artifacts.accuracy_csv, ["step_index", "accuracy", "encoder_loss"], digest)
    shift_csv = _CSV(artifacts.shift_csv, ["step_index", "shift_value", "encoder_updated"], digest)

    def log_eval(step):
        for tid, mean, std, ctx_id in evaluate_on_tasks(
            learner.encoder, learner.actor, test_tasks, stores, config.eval_episodes,
            config.seed, step, learner.brac,
        ):
            returns_csv.row(step, tid, mean, std, ctx_id, config.seed)

    n_tbatch = min(config.task_batch_size, n_train)
    per_task = np.full(n_tbatch, config.rl_batch_size // n_tbatch)
    per_task[: config.rl_batch_size % n_tbatch] += 1

    updates = 0
    busy = 0.0
    step = 0
    accuracy = float("nan")
    n_iterations = math.ceil(config.total_steps / config.steps_per_iteration)
    try:
        for _ in range(n_iterations):
            t0 = time.process_time()
            task_batch = task_rng.choice(n_train, size=n_tbatch, replace=False)
            busy += time.process_time() - t0
            for _ in range(config.steps_per_iteration):
                if step >= config.total_steps:
                    break
                t0 = time.process_time()
                contexts = []
                for j in task_batch:
                    store = train_stores[train_tasks[j].task_id]
                    contexts.append(store.context(int(ctx_rng.integers(store.n_trajectories))))
                z = taskenc.encode_batch(learner.encoder, contexts)
                prev_encoder = learner.encoder
                losses = []
                updated = taskenc.gated_update(
                    step, enc_cfg, lambda: losses.append(learner.encoder_step(contexts, task_batch))
                )
                # z above was computed before the update and is a plain array: detached
                S, A, R, S2, D, Z = [], [], [], [], [], []
                for k, j in enumerate(task_batch):
                    s, a, r, s2, d = flat[train_tasks[j].task_id]
                    idx = batch_rng.integers(len(r), size=per_task[k])
                    S.append(s[idx]); A.append(a[idx]); R.append(r[idx])  # noqa: E702
                    S2.append(s2[idx]); D.append(d[idx])  # noqa: E702
                    Z.append(np.repeat(z[k : k + 1], per_task[k], axis=0))
                batch = rl.RLBatch(np.concatenate(S), np.concatenate(A), np.concatenate(R),
                                   np.concatenate(S2), np.concatenate(D), np.concatenate(Z))
                learner.rl_step(batch, policy_rng)
                busy += time.process_time() - t0

                if updated:
                    updates += 1
                    shift = taskenc.representation_shift(
                        taskenc.snapshot(prev_encoder, step), taskenc.snapshot(learner.encoder, step),
                        probes,
                    ) if probes else 0.0
                    shift_csv.row(step, shift, 1)
                    if heldout_contexts:
                        accuracy = taskenc.classification_accuracy(
                            learner.encoder, learner.head, heldout_contexts, heldout_labels
                        )
                        accuracy_csv.row(step, accuracy, losses[0])
                else:
                    shift_csv.row(step, 0.0, 0)
                step += 1
                if step % config.eval_interval == 0 or step == config.total_steps:
                    log_eval(step)
    except (NonFiniteError, FloatingPointError) as exc:
        learner.save(out / "checkpoint_diagnostic.npz", {"step": step, "error": str(exc)})
        raise NonFiniteError(f"training diverged at step {step}: {exc}") from exc
    finally:
        returns_csv.close()
        accuracy_csv.close()
        shift_csv.close()

    if config.total_steps > 0:
        learner.save(out / CHECKPOINT_FINAL, {"step": step, "config_digest": digest})
        artifacts.checkpoints.append(out / CHECKPOINT_FINAL)
    artifacts.encoder_updates = updates
    artifacts.walltime = busy
    artifacts.final_accuracy = accuracy
    artifacts.checks = {
        "encoder_update_count": updates
        == expected_encoder_updates(config.total_steps, config.update_frequency),
        "finite_metrics": returns_csv.finite and accuracy_csv.finite and shift_csv.finite,
    }
    artifacts.walltime_json.write_text(json.dumps(
        {"config_digest": digest, "seed": config.seed, "total_steps": config.total_steps,
         "encoder_updates": updates, "process_seconds": busy}, indent=2) + "\n")
    (out / "manifest.json").write_text(json.dumps(artifacts.to_manifest(), indent=2) + "\n")
    log.info("run %s seed %d: %d encoder updates, %.1fs", artifacts.label, config.seed, updates, busy)
    return artifacts
