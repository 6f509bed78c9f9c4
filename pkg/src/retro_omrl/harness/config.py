"""Run configuration as flat sectioned ``key = value`` text (stdlib configparser)."""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import asdict, dataclass, fields, replace

from ..envlab import BehaviorPolicySpec
from ..offlinerl import BRACConfig
from ..taskenc import EncoderConfig

PRESETS = ("desk", "paper")


@dataclass(frozen=True)
class TrainingConfig:
    preset: str = "desk"
    family: str = "PointGoal2D"
    seed: int = 0
    out_dir: str = "runs/default"
    data_dir: str = ""
    # data
    n_train_tasks: int = 20
    n_test_tasks: int = 20
    transitions_per_task: int = 2100
    behavior_kind: str = "mixture"
    noise_scale: float = 0.3
    mixture_weight: float = 0.3
    data_seed: int = 0
    # task encoder
    d_z: int = 5
    encoder_hidden: tuple = (64, 64)
    loss_kind: str = "classifier"
    update_frequency: int = 2
    focal_beta: float = 1.0
    recon_weight: float = 1.0
    # actor-critic
    rl_hidden: tuple = (64, 64)
    rl_batch_size: int = 256
    alpha_kl: float = 1.0
    gamma: float = 0.9
    tau: float = 0.005
    # schedule
    task_batch_size: int = 16
    context_trajectories: int = 1
    learning_rate: float = 1e-3
    total_steps: int = 4000
    steps_per_iteration: int = 100
    eval_interval: int = 500
    eval_episodes: int = 10
    heldout_trajectories: int = 5
    n_probe: int = 32

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.context_trajectories != 1:
            raise ValueError("contexts are exactly one trajectory")
        for name in ("total_steps", "heldout_trajectories"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("steps_per_iteration", "eval_interval", "rl_batch_size", "task_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    # -- derived component configs -------------------------------------
    def encoder_config(self):
        return EncoderConfig(
            d_z=self.d_z, loss_kind=self.loss_kind, update_frequency=self.update_frequency,
            hidden=tuple(self.encoder_hidden), focal_beta=self.focal_beta,
            recon_weight=self.recon_weight,
        )

    def brac_config(self):
        return BRACConfig(
            gamma=self.gamma, alpha_kl=self.alpha_kl, tau=self.tau,
            learning_rate=self.learning_rate, hidden=tuple(self.rl_hidden),
        )

    def behavior_policy(self):
        return BehaviorPolicySpec(self.behavior_kind, self.noise_scale, self.mixture_weight)

    def with_overrides(self, **kw):
        return replace(self, **kw)

    # -- persistence ----------------------------------------------------
    def to_text(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for section, names in SECTIONS.items():
            cp[section] = {n: _fmt(getattr(self, n)) for n in names}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self):
        """Hash of everything that influences results (output location excluded)."""
        cfg = replace(self, out_dir="", data_dir="")
        return hashlib.sha256(cfg.to_text().encode()).hexdigest()[:16]

    def as_dict(self):
        return asdict(self)


SECTIONS = {
    "run": ("preset", "family", "seed", "out_dir", "data_dir"),
    "data": ("n_train_tasks", "n_test_tasks", "transitions_per_task", "behavior_kind",
             "noise_scale", "mixture_weight", "data_seed"),
    "encoder": ("d_z", "encoder_hidden", "loss_kind", "update_frequency", "focal_beta",
                "recon_weight"),
    "rl": ("rl_hidden", "rl_batch_size", "alpha_kl", "gamma", "tau"),
    "train": ("task_batch_size", "context_trajectories", "learning_rate", "total_steps",
              "steps_per_iteration", "eval_interval", "eval_episodes", "heldout_trajectories",
              "n_probe"),
}

PAPER_VALUES = dict(
    n_train_tasks=20,
    n_test_tasks=20,
    task_batch_size=16,
    rl_batch_size=256,
    context_trajectories=1,
    rl_hidden=(256, 256),
    encoder_hidden=(64, 64),
    learning_rate=4e-3,
)


def preset(name, **overrides) -> TrainingConfig:
    if name == "paper":
        return TrainingConfig(preset="paper", **{**PAPER_VALUES, **overrides})
    if name == "desk":
        return TrainingConfig(preset="desk", **overrides)
    raise ValueError(f"unknown preset {name!r}")


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(field_type, default, text):
    if isinstance(default, tuple):
        return tuple(int(x) for x in text.split(",") if x.strip())
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def from_text(text) -> TrainingConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    values = {}
    for section in cp.sections():
        for key, raw in cp[section].items():
            values[key] = raw
    known = {f.name: f for f in fields(TrainingConfig)}
    unknown = set(values) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    base = preset(values.pop("preset", "desk"))
    parsed = {
        k: _parse(known[k].type, getattr(base, k), v) for k, v in values.items()
    }
    return replace(base, **parsed)


def load_config(path) -> TrainingConfig:
    with open(path) as fh:
        return from_text(fh.read())


def save_config(config: TrainingConfig, path):
    with open(path, "w") as fh:
        fh.write(config.to_text())
