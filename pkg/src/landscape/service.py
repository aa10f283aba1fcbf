"""1-D loss landscapes along random Gaussian and top singular directions.

Every probe evaluates ``loss_fn(theta + alpha * delta)`` on a fresh dict,
so the caller's ParamSet is never modified. ``delta`` holds one direction
per eligible tensor and all tensors share the scalar ``alpha``.
"""
import logging
from typing import Callable

import numpy as np

from exceptions import InvalidInput, NumericalError
from landscape.model import LandscapeCurve, LandscapeSummary, PerturbGrid
from linalg.model import SeededRng
from linalg.service import frobenius_norm, gaussian_direction, singular_values, svd
from tinylm.model import ParamSet
from tinylm.params import matrix_keys, parse_key, role_group, stream_id
from utils.pool import map_ordered

logger = logging.getLogger(__name__)

LossFn = Callable[[ParamSet], float]
Direction = dict[str, np.ndarray]


def safe_loss(loss_fn: LossFn, params: ParamSet) -> float:
    try:
        value = float(loss_fn(params))
    except NumericalError as err:
        logger.warning(f"probe diverged: {err.detail}")
        return float('inf')
    return value if np.isfinite(value) else float('inf')


def perturb(params: ParamSet, direction: Direction, alpha: float) -> ParamSet:
    perturbed = dict(params)
    for key, delta in direction.items():
        perturbed[key] = params[key] + alpha * delta
    return perturbed


def probe(loss_fn: LossFn, params: ParamSet, direction: Direction,
          grid: PerturbGrid, base_loss: float | None = None) -> list[float]:
    losses = []
    for alpha in grid.alphas:
        if alpha == 0.0:
            losses.append(base_loss if base_loss is not None else safe_loss(loss_fn, params))
        else:
            losses.append(safe_loss(loss_fn, perturb(params, direction, alpha)))
    return losses


def random_direction(params: ParamSet, keys: list[str], seed: int, index: int,
                     normalize: bool = False) -> Direction:
    """Direction ``index``: an i.i.d. N(0, 1) matrix per tensor.

    With ``normalize`` each block is rescaled to the Frobenius norm of the
    tensor it perturbs.
    """
    root = SeededRng(seed).child(index)
    direction = {}
    for key in keys:
        rows, cols = params[key].shape
        delta = gaussian_direction(rows, cols, root.child(stream_id(key)))
        if normalize:
            delta = delta * (frobenius_norm(params[key]) / frobenius_norm(delta))
        direction[key] = delta
    return direction


def eligible_keys(params: ParamSet, include_all: bool = False) -> list[str]:
    keys = matrix_keys(params, include_all=include_all)
    return [key for key in keys if params[key].ndim == 2]


def landscape_random(params: ParamSet, loss_fn: LossFn, grid: PerturbGrid | None = None,
                     directions: int = 100, seed: int = 0, keys: list[str] | None = None,
                     normalize: bool = False, workers: int | None = None) -> LandscapeCurve:
    """Loss along ``directions`` random Gaussian directions.

    Raises:
        InvalidInput: ``directions`` < 1
    """
    grid = grid or PerturbGrid()
    if directions < 1:
        raise InvalidInput({"msg": "need at least one direction", "directions": directions})
    keys = keys if keys is not None else eligible_keys(params)
    base = safe_loss(loss_fn, params)

    def run(index: int) -> list[float]:
        direction = random_direction(params, keys, seed, index, normalize)
        return probe(loss_fn, params, direction, grid, base)

    losses = map_ordered(run, range(directions), workers)
    tops = map_ordered(lambda key: float(singular_values(params[key])[0]), keys, workers)
    curve = LandscapeCurve(kind="random", grid=grid, losses=losses,
                           seeds=[seed] * directions, normalized=normalize,
                           sigma_max=dict(zip(keys, tops)))
    if curve.diverged:
        logger.warning("random landscape has divergent probes")
    return curve


def pca_direction(matrix: np.ndarray, k: int) -> tuple[np.ndarray, float, float]:
    """``(sigma_k u_k v_k^T, sigma_k, sigma_1)`` for 1-based ``k``."""
    result = svd(matrix)
    if not 1 <= k <= result.rank_bound:
        raise InvalidInput({"msg": "k exceeds min(rows, cols)", "k": k,
                            "shape": list(matrix.shape)})
    sigma = float(result.singular_values[k - 1])
    delta = sigma * np.outer(result.U[:, k - 1], result.V[:, k - 1])
    return delta, sigma, float(result.singular_values[0])


def _groups(keys: list[str], group: str) -> dict[str, list[str]]:
    if group == "all":
        return {"all": keys}
    if group == "role":
        grouped: dict[str, list[str]] = {}
        for key in keys:
            grouped.setdefault(parse_key(key)[1], []).append(key)
        return grouped
    if group == "block":
        grouped = {}
        for key in keys:
            grouped.setdefault(role_group(parse_key(key)[1]), []).append(key)
        return grouped
    raise InvalidInput({"msg": "unknown pca grouping", "group": group})


def landscape_pca(params: ParamSet, loss_fn: LossFn, grid: PerturbGrid | None = None,
                  k: int = 1, keys: list[str] | None = None, group: str = "all",
                  workers: int | None = None) -> list[LandscapeCurve]:
    """One curve per tensor group, each tensor moved along its own
    ``delta_k = sigma_k u_k v_k^T`` at once.

    ``group`` is ``all`` (every eligible tensor), ``role`` (per projection
    role) or ``block`` (attention vs MLP). Each curve reports sigma_1 per tensor.
    """
    grid = grid or PerturbGrid()
    keys = keys if keys is not None else eligible_keys(params)
    pieces = map_ordered(lambda key: pca_direction(params[key], k), keys, workers)
    deltas = {key: piece[0] for key, piece in zip(keys, pieces)}
    sigma_max = {key: piece[2] for key, piece in zip(keys, pieces)}
    base = safe_loss(loss_fn, params)

    curves = []
    for name, members in _groups(keys, group).items():
        direction = {key: deltas[key] for key in members}
        losses = probe(loss_fn, params, direction, grid, base)
        curves.append(LandscapeCurve(kind="pca", grid=grid, losses=[losses], k=k, group=name,
                                     sigma_max={key: sigma_max[key] for key in members}))
    return curves


def _offset_columns(curve: LandscapeCurve) -> np.ndarray:
    table = curve.table
    return np.delete(table, curve.grid.center, axis=1)


def sharpness(curve: LandscapeCurve) -> float:
    """Mean loss elevation over all directions and nonzero offsets.

    ``+inf`` when any probe diverged (see ``curve.diverged``).
    """
    if curve.diverged:
        return float('inf')
    table = curve.table
    elevation = _offset_columns(curve) - table[:, [curve.grid.center]]
    return float(np.sum(elevation) / (2 * curve.grid.num_offsets * curve.directions))


def direction_variance(curve: LandscapeCurve) -> float:
    """Across-direction variance averaged over the ``2N`` nonzero offsets."""
    if curve.diverged:
        return float('inf')
    variance = np.var(_offset_columns(curve), axis=0)
    return float(np.sum(variance) / (2 * curve.grid.num_offsets))


def summarize(curve: LandscapeCurve) -> LandscapeSummary:
    """S and DV of ``curve``; ``sigma_max`` is the largest sigma_1 over its tensors."""
    sigma = max(curve.sigma_max.values()) if curve.sigma_max else None
    return LandscapeSummary(sharpness=sharpness(curve),
                            direction_variance=direction_variance(curve),
                            diverged=curve.diverged, sigma_max=sigma)
