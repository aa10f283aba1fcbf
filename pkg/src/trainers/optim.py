"""Adam and the projected (GaLore / Fira) updates.

Update functions return the direction to subtract (scaled by the learning
rate in the ``*_step`` helpers) and advance the moments held in
:class:`TensorState` in place.
"""
import logging

import numpy as np

from exceptions import NumericalError
from linalg.service import frobenius_norm, svd
from trainers.model import TensorState, TrainConfig

logger = logging.getLogger(__name__)


def check_grad(grad: np.ndarray, key: str = "grad") -> None:
    if not np.isfinite(grad).all():
        raise NumericalError("non-finite gradient", layer=key)


def adam_update(grad: np.ndarray, state: TensorState, hp: TrainConfig) -> np.ndarray:
    """Bias-corrected Adam direction ``m_hat / (sqrt(v_hat) + eps)``."""
    state.t += 1
    state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * grad
    state.v = hp.beta2 * state.v + (1.0 - hp.beta2) * grad * grad
    m_hat = state.m / (1.0 - hp.beta1 ** state.t)
    v_hat = state.v / (1.0 - hp.beta2 ** state.t)
    return m_hat / (np.sqrt(v_hat) + hp.eps)


def adam_step(param: np.ndarray, grad: np.ndarray, state: TensorState,
              hp: TrainConfig, lr: float) -> np.ndarray:
    check_grad(grad)
    return param - lr * adam_update(grad, state, hp)


def projection_side(shape: tuple[int, int]) -> str:
    # the smaller dimension is projected
    return "left" if shape[0] <= shape[1] else "right"


def projected_state(shape: tuple[int, int], rank: int) -> TensorState:
    """Zero moments in the low-rank space of an ``m x n`` tensor."""
    m, n = shape
    r = min(rank, m, n)
    side = projection_side(shape)
    state = TensorState.zeros((r, n) if side == "left" else (m, r))
    state.side = side
    return state


def refresh_basis(grad: np.ndarray, state: TensorState, rank: int, step: int) -> None:
    result = svd(grad)
    r = min(rank, *grad.shape)
    if state.side == "left":
        state.basis = result.U[:, :r]
    else:
        state.basis = result.V[:, :r]
    state.refreshed_at = step


def _maybe_refresh(grad: np.ndarray, state: TensorState, hp: TrainConfig, step: int) -> None:
    if state.side is None:
        state.side = projection_side(grad.shape)
    if state.basis is None or step - state.refreshed_at >= hp.galore_refresh_T:
        refresh_basis(grad, state, hp.rank, step)


def project(grad: np.ndarray, state: TensorState) -> np.ndarray:
    if state.side == "left":
        return state.basis.T @ grad
    return grad @ state.basis


def project_back(low: np.ndarray, state: TensorState) -> np.ndarray:
    if state.side == "left":
        return state.basis @ low
    return low @ state.basis.T


def galore_update(grad: np.ndarray, state: TensorState, hp: TrainConfig,
                  step: int) -> np.ndarray:
    """``galore_scale * P @ Adam(P.T @ G)``, with the basis refreshed every
    ``galore_refresh_T`` steps from the top singular vectors of ``G``."""
    _maybe_refresh(grad, state, hp, step)
    low = project(grad, state)
    return hp.galore_scale * project_back(adam_update(low, state, hp), state)


def galore_step(param: np.ndarray, grad: np.ndarray, state: TensorState,
                hp: TrainConfig, lr: float, step: int) -> np.ndarray:
    check_grad(grad)
    return param - lr * galore_update(grad, state, hp, step)


def fira_update(grad: np.ndarray, state: TensorState, hp: TrainConfig,
                step: int) -> np.ndarray:
    """GaLore update plus the out-of-subspace residual ``G - P P^T G``.

    The residual is scaled by ``s = ||Adam(R)||_F / (||R||_F + eps)`` with
    ``R = P^T G``; ``hp.fira_residual_scale`` overrides ``s``, and an
    override of 0 returns exactly the GaLore update.
    """
    _maybe_refresh(grad, state, hp, step)
    low = project(grad, state)
    normalized = adam_update(low, state, hp)
    update = hp.galore_scale * project_back(normalized, state)
    if hp.fira_residual_scale == 0:
        state.residual_scale = 0.0
        return update
    if hp.fira_residual_scale is None:
        scale = frobenius_norm(normalized) / (frobenius_norm(low) + hp.eps)
    else:
        scale = hp.fira_residual_scale
    state.residual_scale = scale
    return update + scale * (grad - project_back(low, state))


def fira_step(param: np.ndarray, grad: np.ndarray, state: TensorState,
              hp: TrainConfig, lr: float, step: int) -> np.ndarray:
    check_grad(grad)
    return param - lr * fira_update(grad, state, hp, step)
