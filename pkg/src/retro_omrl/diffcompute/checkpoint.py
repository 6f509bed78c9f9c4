"""Checkpoint files: layout descriptor, flat float64 parameters, Adam moments."""
from __future__ import annotations

import json

import numpy as np

from .nets import ApproximatorSpec, ParameterVector
from .optim import OptimizerState


def spec_to_dict(spec: ApproximatorSpec):
    return {
        "layer_widths": list(spec.layer_widths),
        "activation": spec.activation,
        "output_transform": spec.output_transform,
        "output_scale": spec.output_scale,
    }


def spec_from_dict(d):
    return ApproximatorSpec(
        tuple(d["layer_widths"]), d["activation"], d["output_transform"], d["output_scale"]
    )


def save_checkpoint(path, nets: dict, optimizers: dict | None = None, meta: dict | None = None):
    """Write named ParameterVectors (and optional OptimizerStates) to one .npz file."""
    arrays = {}
    layout = {"nets": {}, "optimizers": {}, "meta": meta or {}}
    for name, pv in nets.items():
        arrays[f"param__{name}"] = np.asarray(pv.values, dtype="<f8")
        layout["nets"][name] = spec_to_dict(pv.spec)
    for name, st in (optimizers or {}).items():
        arrays[f"m1__{name}"] = np.asarray(st.first_moment, dtype="<f8")
        arrays[f"m2__{name}"] = np.asarray(st.second_moment, dtype="<f8")
        layout["optimizers"][name] = {
            "step_count": st.step_count,
            "learning_rate": st.learning_rate,
            "beta1": st.beta1,
            "beta2": st.beta2,
            "epsilon": st.epsilon,
        }
    arrays["layout"] = np.frombuffer(json.dumps(layout, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns (nets, optimizers, meta)."""
    with np.load(path) as data:
        layout = json.loads(bytes(data["layout"]).decode())
        nets = {
            name: ParameterVector(data[f"param__{name}"], spec_from_dict(d))
            for name, d in layout["nets"].items()
        }
        optimizers = {
            name: OptimizerState(
                data[f"m1__{name}"].astype(np.float64),
                data[f"m2__{name}"].astype(np.float64),
                **d,
            )
            for name, d in layout["optimizers"].items()
        }
    return nets, optimizers, layout["meta"]
