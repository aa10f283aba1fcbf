"""Rank metrics of weight matrices and of consecutive-checkpoint updates."""
import logging
from pathlib import Path

import numpy as np

from checkpoint.model import Checkpoint
from checkpoint.service import load, materialize_dense
from exceptions import DegenerateSpectrum, InvalidInput
from linalg.service import singular_values
from spectra.model import DEFAULT_TAU, SV_FLOOR, SpectralReport, TensorSpectrum
from tinylm.model import LayerKind, ParamSet
from tinylm.params import matrix_keys, parse_key
from trainers.model import RunRecord
from utils.pool import map_ordered

logger = logging.getLogger(__name__)


def _spectrum(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0 or (sigma < 0).any() or not np.isfinite(sigma).all():
        raise InvalidInput("singular values must be a non-empty finite non-negative vector")
    return np.sort(sigma)[::-1]


def effective_rank(sigma) -> float:
    """``exp(-sum p_i ln p_i)`` with ``p_i = sigma_i / sum sigma``.

    Values below ``1e-12 * sigma_1`` are zeroed first and ``0 ln 0 = 0``.
    """
    sigma = _spectrum(sigma)
    if sigma[0] <= 0:
        raise DegenerateSpectrum("all-zero spectrum")
    sigma = np.where(sigma < SV_FLOOR * sigma[0], 0.0, sigma)
    p = sigma[sigma > 0] / np.sum(sigma)
    return float(np.exp(-np.sum(p * np.log(p))))


def stable_rank(sigma) -> float:
    sigma = _spectrum(sigma)
    if sigma[0] <= 0:
        raise DegenerateSpectrum("sigma_1 is zero")
    return float(np.sum(sigma * sigma) / (sigma[0] * sigma[0]))


def spectral_gap(sigma) -> float:
    """``(sigma_1 - sigma_2) / sigma_1``; a single value counts as fully dominant (1.0)."""
    sigma = _spectrum(sigma)
    if sigma[0] <= 0:
        raise DegenerateSpectrum("sigma_1 is zero")
    if sigma.size == 1:
        return 1.0
    return float((sigma[0] - sigma[1]) / sigma[0])


def threshold_rank(sigma, tau: float = DEFAULT_TAU) -> int:
    """Number of singular values strictly above ``tau``."""
    if tau <= 0:
        raise InvalidInput({"msg": "tau must be positive", "tau": tau})
    return int(np.sum(_spectrum(sigma) > tau))


def tensor_spectrum(key: str, matrix: np.ndarray, tau: float = DEFAULT_TAU) -> TensorSpectrum:
    layer, role, factor = parse_key(key)
    sigma = singular_values(matrix)
    spectrum = TensorSpectrum(key=key, role=role, layer=layer, factor=factor,
                              shape=matrix.shape, singular_values=sigma.tolist(),
                              threshold_rank=threshold_rank(sigma, tau), tau=tau)
    if sigma.size == 1:
        spectrum.flags.append("single_value_gap")
    try:
        spectrum.eff_rank = effective_rank(sigma)
        spectrum.stable_rank = stable_rank(sigma)
        spectrum.spectral_gap = spectral_gap(sigma)
    except DegenerateSpectrum:
        logger.warning(f"degenerate spectrum for {key}")
        spectrum.flags.append("degenerate")
    return spectrum


def spectral_matrices(ckpt: Checkpoint) -> ParamSet:
    """Matrices analysed for a checkpoint.

    CoLA reports its ``.A`` and ``.B`` factors separately; every other kind
    is analysed in the dense weight space.
    """
    if ckpt.meta.model.layer_kind == LayerKind.cola:
        params = ckpt.params
    else:
        params = materialize_dense(ckpt).params
    return {key: params[key] for key in matrix_keys(params)}


def spectral_report(matrices: ParamSet, tau: float = DEFAULT_TAU,
                    workers: int | None = None, **labels) -> SpectralReport:
    keys = sorted(matrices)
    tensors = map_ordered(lambda key: tensor_spectrum(key, matrices[key], tau), keys, workers)
    return SpectralReport(tensors=tensors, **labels)


def delta_matrices(first: ParamSet, second: ParamSet) -> ParamSet:
    return {key: second[key] - first[key] for key in sorted(second)}


def spectral_sweep(run: RunRecord, run_dir: Path | str, mode: str = "weights",
                   tau: float = DEFAULT_TAU, workers: int | None = None) -> list[SpectralReport]:
    """One report per checkpoint (``weights``) or per adjacent pair (``deltas``)."""
    if mode not in ("weights", "deltas"):
        raise InvalidInput({"msg": "unknown spectra mode", "mode": mode})
    labels = dict(method=run.method.value, size=run.size, seed=run.seed)
    reports = []
    previous = None
    for step in run.steps:
        current = spectral_matrices(load(run.checkpoint_path(run_dir, step)))
        if mode == "weights":
            reports.append(spectral_report(current, tau, workers, mode="weights",
                                           step=step, **labels))
        elif previous is not None:
            reports.append(spectral_report(delta_matrices(previous[1], current), tau, workers,
                                           mode="deltas", step=step, step_from=previous[0],
                                           **labels))
        previous = (step, current)
    return reports


def run_delta_report(run: RunRecord, run_dir: Path | str, tau: float = DEFAULT_TAU,
                     workers: int | None = None) -> SpectralReport:
    """Spectra of ``W_last - W_first`` over the whole run."""
    first, last = run.steps[0], run.steps[-1]
    w_first = spectral_matrices(load(run.checkpoint_path(run_dir, first)))
    w_last = spectral_matrices(load(run.checkpoint_path(run_dir, last)))
    return spectral_report(delta_matrices(w_first, w_last), tau, workers, mode="run_delta",
                           step=last, step_from=first, method=run.method.value,
                           size=run.size, seed=run.seed)
