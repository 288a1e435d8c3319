"""Parameter update rules: Adam and plain SGD.

Both operate on flat lists of float64 arrays, as produced by
Network.parameter_arrays().
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step_count: int
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def init(cls, params, alpha: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        return cls(
            step_count=0,
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            alpha=alpha, beta1=beta1, beta2=beta2, epsilon=epsilon,
        )


def _check_shapes(params, grads, moments=None):
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameter arrays but {len(grads)} gradient arrays")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"parameter {i}: shape {p.shape} does not match gradient {g.shape}")
        if moments is not None and moments[i].shape != p.shape:
            raise ValueError(f"parameter {i}: optimizer state shape {moments[i].shape} is stale")


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One Adam update; mutates state, returns the new parameter arrays.

    theta <- theta - alpha * m_hat / (sqrt(v_hat) + epsilon), with epsilon
    added outside the square root.
    """
    _check_shapes(params, grads, state.first_moment)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    out = []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        out.append(p - state.alpha * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return out


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], learning_rate: float) -> list[np.ndarray]:
    """theta <- theta - eta * g."""
    _check_shapes(params, grads)
    return [p - learning_rate * g for p, g in zip(params, grads)]
