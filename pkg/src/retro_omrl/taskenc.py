"""Task encoder, its training losses, the gated update and representation shift.

The encoder embeds every (s, a, s', r) row of a context with an MLP and
mean-pools the embeddings into one latent vector. Rows are put into a
canonical (lexicographic) order before the network runs, so reordering a
context does not change a single bit of the output.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Context, EmptyContextError, EncoderSnapshot, LatentZ
from .diffcompute import ApproximatorSpec, ParameterVector, Tensor, concat, mlp, stack

LOSS_KINDS = ("classifier", "focal_metric", "reconstruction", "classifier_plus_reconstruction")
FOCAL_POWER = 2
FOCAL_EPS = 1e-3


@dataclass(frozen=True)
class EncoderConfig:
    d_z: int = 5
    aggregation: str = "mean_pool"
    loss_kind: str = "classifier"
    update_frequency: int = 1
    hidden: tuple = (32, 32)
    focal_beta: float = 1.0
    recon_weight: float = 1.0

    def __post_init__(self):
        if self.aggregation != "mean_pool":
            raise ValueError(f"unsupported aggregation {self.aggregation!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.update_frequency < 1:
            raise ValueError("update_frequency must be >= 1")
        if self.d_z < 1:
            raise ValueError("d_z must be >= 1")


def encoder_spec(state_dim, action_dim, config: EncoderConfig):
    width = 2 * state_dim + action_dim + 1
    return ApproximatorSpec((width, *config.hidden, config.d_z), "relu", "identity")


def head_spec(config: EncoderConfig, n_train):
    return ApproximatorSpec((config.d_z, n_train), "relu", "identity")


def decoder_spec(state_dim, action_dim, config: EncoderConfig):
    return ApproximatorSpec(
        (state_dim + action_dim + config.d_z, *config.hidden, state_dim + 1), "relu", "identity"
    )


def canonical_rows(context: Context):
    rows = context.rows()
    if len(rows) == 0:
        raise EmptyContextError("context has no transitions")
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def encode_tensor(spec: ApproximatorSpec, flat: Tensor, contexts: Sequence[Context]) -> Tensor:
    """Latent codes of several contexts, shape (n_contexts, d_z)."""
    if not contexts:
        raise EmptyContextError("no contexts to encode")
    blocks = [canonical_rows(c) for c in contexts]
    if blocks[0].shape[1] != spec.input_dim:
        raise ValueError(
            f"context rows have width {blocks[0].shape[1]}, encoder expects {spec.input_dim}"
        )
    lengths = [len(b) for b in blocks]
    h = mlp(spec, flat, np.concatenate(blocks, axis=0))
    if len(set(lengths)) == 1:
        return h.reshape(len(blocks), lengths[0], spec.output_dim).mean(axis=1)
    out, start = [], 0
    for n in lengths:
        out.append(h[start : start + n].mean(axis=0))
        start += n
    return stack(out, axis=0)


def encode(encoder_params: ParameterVector, context: Context) -> LatentZ:
    z = encode_tensor(encoder_params.spec, Tensor(encoder_params.values), [context])
    return LatentZ(z.data[0])


def encode_batch(encoder_params: ParameterVector, contexts) -> np.ndarray:
    return encode_tensor(encoder_params.spec, Tensor(encoder_params.values), contexts).data


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=int)
    picked = logits[np.arange(len(labels)), labels]
    return (logits.logsumexp(axis=-1) - picked).mean()


def classifier_objective(enc_spec, head_spec_, contexts, labels):
    """Closure ``(encoder_flat, head_flat) -> mean cross-entropy`` for use with ``grad``."""
    labels = _check_labels(labels, head_spec_.output_dim)
    if len(labels) != len(contexts):
        raise ValueError("one label per context required")

    def objective(enc_flat, head_flat):
        z = encode_tensor(enc_spec, enc_flat, contexts)
        return cross_entropy(mlp(head_spec_, head_flat, z), labels)

    return objective


def classifier_loss(encoder_params, head_params, contexts, labels) -> float:
    f = classifier_objective(encoder_params.spec, head_params.spec, contexts, labels)
    return float(f(Tensor(encoder_params.values), Tensor(head_params.values)).data)


def focal_pair_loss(z: Tensor, labels, beta) -> Tensor:
    """Mean over unordered pairs: squared distance for same-task pairs,
    ``beta / (dist**2 + eps)`` for pairs from different tasks."""
    labels = np.asarray(labels)
    n = len(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("metric loss needs at least two distinct task labels in the batch")
    d = z.shape[1]
    diff = z.reshape(n, 1, d) - z.reshape(1, n, d)
    dist2 = (diff * diff).sum(axis=2)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    same = (labels[:, None] == labels[None, :]) & upper
    cross = (labels[:, None] != labels[None, :]) & upper
    n_pairs = n * (n - 1) / 2
    attract = (dist2 * same.astype(float)).sum()
    repel = ((beta / (dist2 ** (FOCAL_POWER / 2) + FOCAL_EPS)) * cross.astype(float)).sum()
    return (attract + repel) / n_pairs


def focal_objective(enc_spec, contexts, labels, beta):
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("metric loss needs at least two distinct task labels in the batch")

    def objective(enc_flat):
        return focal_pair_loss(encode_tensor(enc_spec, enc_flat, contexts), labels, beta)

    return objective


def focal_metric_loss(encoder_params, contexts, labels, beta) -> float:
    f = focal_objective(encoder_params.spec, contexts, labels, beta)
    return float(f(Tensor(encoder_params.values)).data)


def reconstruction_from_latents(dec_spec, dec_flat, z: Tensor, contexts) -> Tensor:
    inputs, targets, owners = [], [], []
    for i, c in enumerate(contexts):
        inputs.append(np.concatenate([c.states, c.actions], axis=1))
        targets.append(np.concatenate([c.next_states, c.rewards[:, None]], axis=1))
        owners.append(np.full(len(c), i))
    x = np.concatenate(inputs, axis=0)
    if x.shape[1] + z.shape[1] != dec_spec.input_dim:
        raise ValueError(
            f"decoder expects {dec_spec.input_dim} inputs, got {x.shape[1]} + {z.shape[1]}"
        )
    zrows = z[np.concatenate(owners)]
    pred = mlp(dec_spec, dec_flat, concat([Tensor(x), zrows], axis=1))
    err = pred - np.concatenate(targets, axis=0)
    return (err * err).mean()


def reconstruction_objective(enc_spec, dec_spec, contexts):
    def objective(enc_flat, dec_flat):
        z = encode_tensor(enc_spec, enc_flat, contexts)
        return reconstruction_from_latents(dec_spec, dec_flat, z, contexts)

    return objective


def reconstruction_loss(encoder_params, decoder_params, contexts) -> float:
    f = reconstruction_objective(encoder_params.spec, decoder_params.spec, contexts)
    return float(f(Tensor(encoder_params.values), Tensor(decoder_params.values)).data)


def encoder_objective(config: EncoderConfig, enc_spec, head_spec_, dec_spec, contexts, labels):
    """Training objective for ``config.loss_kind`` over (encoder, head, decoder) flats.

    Parts that a loss kind does not use receive zero gradient.
    """
    labels = np.asarray(labels, dtype=int)
    kind = config.loss_kind

    def objective(enc_flat, head_flat, dec_flat):
        z = encode_tensor(enc_spec, enc_flat, contexts)
        if kind == "focal_metric":
            return focal_pair_loss(z, labels, config.focal_beta)
        if kind == "reconstruction":
            return reconstruction_from_latents(dec_spec, dec_flat, z, contexts)
        loss = cross_entropy(mlp(head_spec_, head_flat, z), labels)
        if kind == "classifier_plus_reconstruction":
            loss = loss + config.recon_weight * reconstruction_from_latents(
                dec_spec, dec_flat, z, contexts
            )
        return loss

    return objective


def classify(encoder_params, head_params, contexts) -> np.ndarray:
    z = encode_batch(encoder_params, contexts)
    logits = mlp(head_params.spec, Tensor(head_params.values), z).data
    return np.argmax(logits, axis=1)


def classification_accuracy(encoder_params, head_params, contexts, labels) -> float:
    return float(np.mean(classify(encoder_params, head_params, contexts) == np.asarray(labels)))


def gated_update(step: int, config: EncoderConfig, update_fn: Callable[[], object]) -> bool:
    """Run ``update_fn`` only on steps that are multiples of the update frequency."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step % config.update_frequency == 0:
        update_fn()
        return True
    return False


def snapshot(encoder_params: ParameterVector, step_index: int) -> EncoderSnapshot:
    return EncoderSnapshot(encoder_params.values, step_index, encoder_params.spec)


def representation_shift(prev: EncoderSnapshot, curr: EncoderSnapshot, probe_contexts, spec=None):
    """Mean L1 distance between the two encoders' codes on fixed probe contexts."""
    if not probe_contexts:
        raise EmptyContextError("need at least one probe context")
    if prev.parameters.size != curr.parameters.size:
        raise ValueError("snapshots have different parameter counts")
    spec = spec or curr.spec or prev.spec
    if np.array_equal(prev.parameters, curr.parameters):
        return 0.0
    z0 = encode_tensor(spec, Tensor(prev.parameters), probe_contexts).data
    z1 = encode_tensor(spec, Tensor(curr.parameters), probe_contexts).data
    return float(np.mean(np.abs(z1 - z0).sum(axis=1)))


@dataclass
class ShiftLog:
    records: list

    def __init__(self):
        self.records = []

    def append(self, step_index, shift_value, updated):
        if shift_value < 0:
            raise ValueError("shift must be non-negative")
        self.records.append((int(step_index), float(shift_value), bool(updated)))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step_index", "shift_value", "encoder_updated"])
            for step, value, updated in self.records:
                w.writerow([step, repr(value), int(updated)])

    @classmethod
    def read_csv(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                log.append(int(row["step_index"]), float(row["shift_value"]),
                           row["encoder_updated"] == "1")
        return log
