"""Gradients of flat-parameter losses, Adam, and the finite-difference oracle."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor


class NonFiniteError(FloatingPointError):
    pass


def grad(loss, *params):
    """Reverse-mode gradient of ``loss(*tensors)`` with respect to each flat vector.

    ``loss`` receives one 1-D Tensor per entry of ``params`` and must return a
    scalar Tensor. Returns ``(value, gradients)``; gradients is a tuple aligned
    with ``params``.
    """
    leaves = [Tensor(np.asarray(getattr(p, "values", p), dtype=np.float64), requires_grad=True)
              for p in params]
    out = loss(*leaves)
    if out.data.size != 1:
        raise ValueError("loss must be scalar")
    value = float(out.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss value {value}")
    out.backward()
    grads = tuple(
        np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad for leaf in leaves
    )
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
    return value, grads


@dataclass(frozen=True)
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n, learning_rate=3e-4, **kwargs):
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kwargs)


def adam_step(params, gradient, state: OptimizerState):
    """One bias-corrected Adam update. Works on flat arrays or ParameterVectors."""
    values = getattr(params, "values", params)
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != values.shape or state.first_moment.shape != values.shape:
        raise ValueError("parameter, gradient and moment lengths disagree")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite gradient")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = replace(state, first_moment=m, second_moment=v, step_count=t)
    if hasattr(params, "replace"):
        return params.replace(new_values), new_state
    return new_values, new_state


def central_difference(loss_value, params, step=1e-5, dtype=np.float64):
    """Numerical gradient of a plain-array function ``loss_value(x) -> float``.

    ``dtype`` sets the working precision of the perturbed points and the
    difference quotient.
    """
    x = np.array(params, dtype=dtype)
    out = np.zeros_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + step
        up = loss_value(x)
        x[i] = orig - step
        down = loss_value(x)
        x[i] = orig
        out[i] = (up - down) / (2 * x.dtype.type(step))
    return out.astype(np.float64)


def finite_diff_check(loss, params, step=1e-5):
    """Max over coordinates of |analytic - central| / (|analytic| + 1e-8).

    ``loss`` maps a 1-D Tensor to a scalar Tensor; the same callable is run on
    constant tensors for the numerical side. The numerical side works in
    extended precision where the platform has it, so roundoff in the difference
    quotient does not swamp coordinates whose true gradient is zero.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(getattr(params, "values", params), dtype=np.float64)
    _, (analytic,) = grad(loss, x)
    numeric = central_difference(lambda v: loss(Tensor(v)).data.reshape(()), x, step,
                                 dtype=np.longdouble)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8), initial=0.0))
