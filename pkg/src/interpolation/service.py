import logging
from pathlib import Path
from typing import Callable

import numpy as np

from checkpoint.model import Checkpoint, DenseView
from checkpoint.service import load, materialize_dense
from exceptions import EmptyIntersection, InvalidInput, ShapeError, UnsupportedMethod
from interpolation.model import BarrierResult, BarrierSeries, InterpCurve
from tinylm.model import Batch, LayerKind, ParamSet
from tinylm.network import validation_loss_fn
from trainers.model import Method, RunRecord
from utils.pool import map_ordered

logger = logging.getLogger(__name__)

DEFAULT_POINTS = 11
FINE_POINTS = 21


def beta_grid(points: int = DEFAULT_POINTS) -> list[float]:
    if points < 2:
        raise InvalidInput({"msg": "beta grid needs both endpoints", "points": points})
    return [i / (points - 1) for i in range(points)]


def _check_schema(theta_a: ParamSet, theta_b: ParamSet) -> None:
    if set(theta_a) != set(theta_b):
        raise ShapeError({"msg": "endpoint key sets differ",
                          "only_a": sorted(set(theta_a) - set(theta_b)),
                          "only_b": sorted(set(theta_b) - set(theta_a))})
    for key in theta_a:
        if theta_a[key].shape != theta_b[key].shape:
            raise ShapeError({"msg": "endpoint shapes differ", "key": key,
                              "a": list(theta_a[key].shape), "b": list(theta_b[key].shape)})


def interp_curve(theta_a: ParamSet, theta_b: ParamSet,
                 loss_fn: Callable[[ParamSet], float], points: int = DEFAULT_POINTS,
                 workers: int | None = None, **labels) -> InterpCurve:
    """Loss at ``theta(beta_i) = w_a theta_A + w_b theta_B`` over every tensor.

    Weights come from the integer grid index (``w_a = (n-1-i)/(n-1)``), so
    swapping the endpoints reverses the curve exactly; the endpoints are
    evaluated on the unmodified ParamSets.
    """
    _check_schema(theta_a, theta_b)
    betas = beta_grid(points)
    last = points - 1

    def evaluate(i: int) -> float:
        if i == 0:
            return float(loss_fn(theta_a))
        if i == last:
            return float(loss_fn(theta_b))
        w_a, w_b = (last - i) / last, i / last
        return float(loss_fn({key: w_a * theta_a[key] + w_b * theta_b[key]
                              for key in theta_a}))

    losses = map_ordered(evaluate, range(points), workers)
    return InterpCurve(betas=betas, losses=losses, **labels)


def interp_losses(ckpt_a: Checkpoint, ckpt_b: Checkpoint, valset: Batch,
                  points: int = DEFAULT_POINTS, workers: int | None = None) -> InterpCurve:
    """Interpolation between two checkpoints in the common dense weight space.

    Raises:
        UnsupportedMethod: either endpoint is CoLA
        ShapeError: the dense schemas differ
    """
    view_a = materialize_dense(ckpt_a)
    view_b = materialize_dense(ckpt_b)
    return interp_curve(view_a.params, view_b.params, validation_loss_fn(view_a.cfg, valset),
                        points, workers,
                        methods=(ckpt_a.meta.method, ckpt_b.meta.method),
                        steps=(ckpt_a.meta.step, ckpt_b.meta.step))


def barrier_height(curve: InterpCurve) -> BarrierResult:
    """``max_{interior} L(beta) - (L(0) + L(1)) / 2``; negative values are kept."""
    if len(curve.losses) < 3:
        raise InvalidInput({"msg": "barrier height needs an interior grid point",
                            "points": len(curve.losses)})
    losses = np.asarray(curve.losses)
    interior = losses[1:-1]
    index = int(np.argmax(interior)) + 1
    height = float(losses[index] - 0.5 * (losses[0] + losses[-1]))
    return BarrierResult(curve=curve, height=height, argmax_beta=curve.betas[index])


def within_run_view(ckpt: Checkpoint) -> DenseView:
    # CoLA stays in its own factored space; everything else is materialized
    if ckpt.meta.model.layer_kind == LayerKind.cola:
        return DenseView(params=ckpt.params, cfg=ckpt.meta.model)
    return materialize_dense(ckpt)


def ccbh(run: RunRecord, run_dir: Path | str, valset: Batch, points: int = DEFAULT_POINTS,
         workers: int | None = None) -> BarrierSeries:
    """Barrier height for every consecutive checkpoint pair of one run."""
    series = BarrierSeries(kind="ccbh", methods=(run.method.value, run.method.value),
                           size=run.size, seed=run.seed)
    steps = run.steps
    if len(steps) < 2:
        return series
    previous = within_run_view(load(run.checkpoint_path(run_dir, steps[0])))
    for step_a, step_b in zip(steps, steps[1:]):
        current = within_run_view(load(run.checkpoint_path(run_dir, step_b)))
        curve = interp_curve(previous.params, current.params,
                             validation_loss_fn(current.cfg, valset), points, workers,
                             methods=series.methods, steps=(step_a, step_b))
        series.results.append(barrier_height(curve))
        previous = current
    logger.info(f"ccbh {run.label}: {len(series.results)} pairs")
    return series


def imbh(run_a: RunRecord, dir_a: Path | str, run_b: RunRecord, dir_b: Path | str,
         valset: Batch, points: int = DEFAULT_POINTS,
         workers: int | None = None) -> BarrierSeries:
    """Barrier height between two runs at every step both have checkpointed.

    Raises:
        UnsupportedMethod: either run is CoLA
        EmptyIntersection: no shared checkpoint steps
    """
    for run in (run_a, run_b):
        if run.method == Method.cola:
            raise UnsupportedMethod({"msg": "We exclude CoLA in the cross-method interpolation",
                                     "method": run.method.value})
    shared = sorted(set(run_a.steps) & set(run_b.steps))
    if not shared:
        raise EmptyIntersection({"msg": "runs share no checkpoint steps",
                                 "a": run_a.label, "b": run_b.label})
    series = BarrierSeries(kind="imbh", methods=(run_a.method.value, run_b.method.value),
                           size=run_a.size, seed=run_a.seed)
    for step in shared:
        curve = interp_losses(load(run_a.checkpoint_path(dir_a, step)),
                              load(run_b.checkpoint_path(dir_b, step)),
                              valset, points, workers)
        series.results.append(barrier_height(curve))
    return series
