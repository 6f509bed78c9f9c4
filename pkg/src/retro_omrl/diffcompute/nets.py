"""Feed-forward approximators stored as one flat float64 parameter vector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor

ACTIVATIONS = ("relu", "tanh")
OUTPUT_TRANSFORMS = ("identity", "tanh_scaled", "softmax")


@dataclass(frozen=True)
class ApproximatorSpec:
    """Layer widths include the input width first and the output width last."""

    layer_widths: tuple
    activation: str = "relu"
    output_transform: str = "identity"
    output_scale: float = 1.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("need at least one layer (input and output width)")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise ValueError(f"unknown output transform {self.output_transform!r}")

    @property
    def input_dim(self):
        return self.layer_widths[0]

    @property
    def output_dim(self):
        return self.layer_widths[-1]

    def layout(self):
        """List of (name, offset, shape) for every weight and bias block."""
        blocks, offset = [], 0
        for i, (n_in, n_out) in enumerate(zip(self.layer_widths[:-1], self.layer_widths[1:])):
            blocks.append((f"W{i}", offset, (n_in, n_out)))
            offset += n_in * n_out
            blocks.append((f"b{i}", offset, (n_out,)))
            offset += n_out
        return blocks

    @property
    def n_params(self):
        name, offset, shape = self.layout()[-1]
        return offset + int(np.prod(shape))


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray
    spec: ApproximatorSpec = field(compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size != self.spec.n_params:
            raise ValueError(
                f"parameter vector has {values.size} entries, layout needs {self.spec.n_params}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite parameters")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def replace(self, values):
        return ParameterVector(values, self.spec)

    def block(self, name):
        for block_name, offset, shape in self.spec.layout():
            if block_name == name:
                return self.values[offset : offset + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)


def init_params(spec: ApproximatorSpec, rng: np.random.Generator, final_scale=1.0):
    """Uniform fan-in init; biases start at zero."""
    values = np.zeros(spec.n_params)
    blocks = spec.layout()
    for name, offset, shape in blocks:
        if name.startswith("W"):
            bound = 1.0 / np.sqrt(shape[0])
            if name == blocks[-2][0]:
                bound *= final_scale
            values[offset : offset + shape[0] * shape[1]] = rng.uniform(
                -bound, bound, size=shape[0] * shape[1]
            )
    return ParameterVector(values, spec)


def mlp(spec: ApproximatorSpec, flat: Tensor, x) -> Tensor:
    """Differentiable forward pass with ``flat`` a 1-D parameter tensor."""
    h = as_tensor(x)
    squeeze = h.ndim == 1
    if squeeze:
        h = h.reshape(1, -1)
    if h.shape[-1] != spec.input_dim:
        raise ValueError(f"input width {h.shape[-1]} does not match first layer {spec.input_dim}")
    blocks = spec.layout()
    n_layers = len(blocks) // 2
    for i in range(n_layers):
        _, w_off, w_shape = blocks[2 * i]
        _, b_off, b_shape = blocks[2 * i + 1]
        W = flat[w_off : w_off + w_shape[0] * w_shape[1]].reshape(*w_shape)
        b = flat[b_off : b_off + b_shape[0]]
        h = h @ W + b
        if i < n_layers - 1:
            h = h.relu() if spec.activation == "relu" else h.tanh()
    if spec.output_transform == "tanh_scaled":
        h = h.tanh() * spec.output_scale
    elif spec.output_transform == "softmax":
        h = h.softmax(axis=-1)
    if squeeze:
        h = h.reshape(-1)
    return h


def forward(spec: ApproximatorSpec, params, x) -> np.ndarray:
    """Plain evaluation; ``params`` may be a ParameterVector or flat array."""
    values = params.values if isinstance(params, ParameterVector) else np.asarray(params, float)
    if values.size != spec.n_params:
        raise ValueError(f"expected {spec.n_params} parameters, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite parameters")
    x = np.asarray(x, dtype=np.float64)
    return mlp(spec, Tensor(values), x).data
