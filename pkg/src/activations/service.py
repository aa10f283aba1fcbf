import logging

import numpy as np

from activations.model import ActReport, LayerDeviation, StackedDeviation
from exceptions import DegenerateInput, SchemaError, ShapeError
from tinylm.model import Batch, ModelConfig, ParamSet
from tinylm.network import capture_hidden_states
from utils.pool import map_ordered

logger = logging.getLogger(__name__)

COS_EPS = 1e-8


def _pair(ha, hb) -> tuple[np.ndarray, np.ndarray]:
    ha = np.asarray(ha, dtype=np.float64)
    hb = np.asarray(hb, dtype=np.float64)
    if ha.shape != hb.shape or ha.ndim != 2:
        raise ShapeError({"msg": "activation shapes differ",
                          "a": list(ha.shape), "b": list(hb.shape)})
    return ha, hb


def act_l2(ha, hb) -> float:
    """Mean per-position Euclidean distance."""
    ha, hb = _pair(ha, hb)
    return float(np.mean(np.linalg.norm(ha - hb, axis=1)))


def act_cos(ha, hb, eps: float = COS_EPS) -> float:
    """Mean per-position cosine similarity."""
    ha, hb = _pair(ha, hb)
    dots = np.sum(ha * hb, axis=1)
    norms = np.linalg.norm(ha, axis=1) * np.linalg.norm(hb, axis=1)
    return float(np.mean(dots / (norms + eps)))


def linear_cka(ha, hb) -> float:
    """Linear CKA of column-centred activations, in feature space.

    ``||B^T A||_F^2 / (||A^T A||_F ||B^T B||_F)``, equal to the Gram (N x N)
    form but costing ``O(N d^2)``.

    Raises:
        DegenerateInput: either input has no variance
    """
    ha = np.asarray(ha, dtype=np.float64)
    hb = np.asarray(hb, dtype=np.float64)
    if ha.ndim != 2 or hb.ndim != 2 or ha.shape[0] != hb.shape[0]:
        raise ShapeError({"msg": "CKA needs equal row counts",
                          "a": list(ha.shape), "b": list(hb.shape)})
    a = ha - ha.mean(axis=0, keepdims=True)
    b = hb - hb.mean(axis=0, keepdims=True)
    norm_aa = np.linalg.norm(a.T @ a)
    norm_bb = np.linalg.norm(b.T @ b)
    if norm_aa == 0.0 or norm_bb == 0.0:
        raise DegenerateInput("activations have zero variance")
    cross = np.linalg.norm(b.T @ a)
    return float(cross * cross / (norm_aa * norm_bb))


def compare_hidden(reference: list[np.ndarray], target: list[np.ndarray],
                   workers: int | None = None) -> list[LayerDeviation]:
    if len(reference) != len(target):
        raise SchemaError({"msg": "layer counts differ",
                           "reference": len(reference), "target": len(target)})

    def layer(index: int) -> LayerDeviation:
        ha, hb = reference[index], target[index]
        return LayerDeviation(layer=index, d_l2=act_l2(ha, hb), cos=act_cos(ha, hb),
                              cka=linear_cka(ha, hb))

    return map_ordered(layer, range(len(reference)), workers)


def act_compare(ref_pair: tuple[ParamSet, ModelConfig], target_pair: tuple[ParamSet, ModelConfig],
                valset: Batch, workers: int | None = None, **labels) -> ActReport:
    """Hidden states of both checkpoints on the same valset, compared per layer."""
    ref_params, ref_cfg = ref_pair
    tgt_params, tgt_cfg = target_pair
    if ref_cfg.n_layers != tgt_cfg.n_layers:
        raise SchemaError({"msg": "layer counts differ",
                           "reference": ref_cfg.n_layers, "target": tgt_cfg.n_layers})
    ref_hidden, tgt_hidden = map_ordered(
        lambda pair: capture_hidden_states(pair[0], pair[1], valset),
        [(ref_params, ref_cfg), (tgt_params, tgt_cfg)], workers)
    return ActReport(layers=compare_hidden(ref_hidden, tgt_hidden, workers), **labels)


def stacked_deviation(reports: list[ActReport]) -> list[StackedDeviation]:
    """Stacked deviation for every report, normalising ``d_L2`` across the
    methods that share its (size, seed, step) group."""
    groups: dict[tuple, list[ActReport]] = {}
    for report in reports:
        groups.setdefault((report.size, report.seed, report.step), []).append(report)

    results = []
    for report in reports:
        peers = groups[(report.size, report.seed, report.step)]
        baseline = np.mean([peer.column("d_l2") for peer in peers], axis=0)
        l2 = report.column("d_l2")
        norm_l2 = np.divide(l2, baseline, out=np.zeros_like(l2), where=baseline > 0)
        z = norm_l2 + (1.0 - report.column("cos")) + (1.0 - report.column("cka"))
        results.append(StackedDeviation(method=report.method, size=report.size,
                                        seed=report.seed, step=report.step,
                                        per_layer=z.tolist(), layer_mean=float(np.mean(z)),
                                        last_layer=float(z[-1])))
    return results
