import numpy as np
import pytest

from exceptions import InvalidInput
from landscape.model import LandscapeCurve, PerturbGrid
from landscape.service import (direction_variance, landscape_pca, landscape_random,
                               pca_direction, sharpness, summarize)
from tinylm.network import forward_loss
from tinylm.params import copy_params, init_params

KEY = "layers.0.wq"


def _quadratic(h: np.ndarray):
    """Probe model with loss 1/2 sum h * theta^2 over one tensor."""
    return lambda params: 0.5 * float(np.sum(h * params[KEY] ** 2))


def _curve(losses, alpha_max=1.0):
    offsets = (len(losses[0]) - 1) // 2
    return LandscapeCurve(grid=PerturbGrid(alpha_max=alpha_max, num_offsets=offsets),
                          losses=losses)


def test_grid_is_symmetric():
    """The grid holds -alpha_j, 0 and +alpha_j with 0 at the center."""
    grid = PerturbGrid(alpha_max=0.5, num_offsets=2)
    assert grid.alphas.tolist() == [-0.5, -0.25, 0.0, 0.25, 0.5]
    assert grid.alphas[grid.center] == 0.0


def test_sharpness_hand_values():
    """Constant surface gives 0; L(0) = 1, L(+-alpha) = 1.5 gives 0.5."""
    assert sharpness(_curve([[2.0, 2.0, 2.0], [2.0, 2.0, 2.0]])) == 0.0
    assert sharpness(_curve([[1.5, 1.0, 1.5]])) == pytest.approx(0.5)


def test_direction_variance_hand_values():
    """One direction gives 0; two directions c apart give c^2 / 4."""
    assert direction_variance(_curve([[3.0, 1.0, 2.0, 1.0, 5.0]])) == 0.0
    c = 0.6
    curve = _curve([[1.0, 1.0, 1.0], [1.0 + c, 1.0 + c, 1.0 + c]])
    assert direction_variance(curve) == pytest.approx(c * c / 4)


def test_divergence_propagates():
    """A +inf probe makes sharpness and direction variance +inf."""
    curve = _curve([[1.0, 0.5, float("inf")]])
    assert curve.diverged
    summary = summarize(curve)
    assert summary.sharpness == float("inf") and summary.direction_variance == float("inf")
    assert summary.diverged


def test_random_probe_on_quadratic_matches_closed_form():
    """
    For loss 1/2 theta^T H theta at theta = 0 the mean elevation is
    1/2 alpha^2 tr(H), matched within Monte-Carlo error over 500 directions.
    """
    h = np.ones((4, 5))
    params = {KEY: np.zeros((4, 5))}
    grid = PerturbGrid(alpha_max=0.5, num_offsets=2)
    curve = landscape_random(params, _quadratic(h), grid, directions=500, seed=1, keys=[KEY])
    expected = 0.5 * np.mean(grid.offsets ** 2) * h.sum()
    assert sharpness(curve) == pytest.approx(expected, rel=0.1)
    assert np.all(curve.table[:, grid.center] == 0.0)


def test_anisotropic_surface_has_larger_direction_variance():
    """H = diag(100, 1, ...) spreads directions more than H = I."""
    params = {KEY: np.zeros((4, 5))}
    iso = np.ones((4, 5))
    aniso = iso.copy()
    aniso[0, 0] = 100.0
    kwargs = dict(grid=PerturbGrid(alpha_max=0.5, num_offsets=2), directions=50, seed=0, keys=[KEY])
    dv_iso = direction_variance(landscape_random(params, _quadratic(iso), **kwargs))
    dv_aniso = direction_variance(landscape_random(params, _quadratic(aniso), **kwargs))
    assert dv_aniso > dv_iso


def test_random_probe_restores_params_and_is_reproducible(tiny_cfg, tiny_batch):
    """Params are untouched, alpha = 0 is the base loss, and the same seed repeats."""
    params = init_params(tiny_cfg)
    snapshot = copy_params(params)
    loss_fn = lambda p: forward_loss(p, tiny_cfg, tiny_batch)
    grid = PerturbGrid(alpha_max=0.1, num_offsets=1)
    first = landscape_random(params, loss_fn, grid, directions=2, seed=4, workers=2)
    second = landscape_random(params, loss_fn, grid, directions=2, seed=4, workers=1)
    for key, value in snapshot.items():
        assert np.array_equal(params[key], value)
    assert first.losses == second.losses
    assert first.table[:, 1].tolist() == [loss_fn(params)] * 2


def test_single_direction_has_zero_variance(tiny_cfg, tiny_batch):
    """D = 1 gives zero variance at every offset."""
    curve = landscape_random(init_params(tiny_cfg), lambda p: forward_loss(p, tiny_cfg, tiny_batch),
                             PerturbGrid(alpha_max=0.1, num_offsets=1), directions=1)
    assert curve.variance == [0.0, 0.0, 0.0]
    with pytest.raises(InvalidInput):
        landscape_random({}, lambda p: 0.0, directions=0)


def test_pca_direction_on_known_matrices():
    """diag(3, 2, 1) at k = 1 gives 3 e1 e1^T; a rank-one matrix at k = 2 gives 0."""
    delta, sigma, top = pca_direction(np.diag([3.0, 2.0, 1.0]), 1)
    expected = np.zeros((3, 3))
    expected[0, 0] = 3.0
    assert np.allclose(delta, expected, atol=1e-12)
    assert sigma == pytest.approx(3.0) and top == pytest.approx(3.0)
    flat, sigma2, _ = pca_direction(np.outer([1.0, 2.0], [1.0, 0.0, 1.0]), 2)
    assert sigma2 == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(flat, 0.0, atol=1e-12)
    with pytest.raises(InvalidInput):
        pca_direction(np.eye(2), 3)


def test_pca_groups_and_sigma_report(tiny_cfg, tiny_batch):
    """Role grouping yields one curve per projection role, each with sigma_1 per tensor."""
    params = init_params(tiny_cfg)
    loss_fn = lambda p: forward_loss(p, tiny_cfg, tiny_batch)
    grid = PerturbGrid(alpha_max=0.1, num_offsets=1)
    [whole] = landscape_pca(params, loss_fn, grid, k=1)
    assert whole.group == "all" and len(whole.sigma_max) == 14
    assert whole.losses[0][1] == loss_fn(params)
    per_role = landscape_pca(params, loss_fn, grid, k=1, group="role")
    assert sorted(curve.group for curve in per_role) == sorted(
        ["wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"])
    with pytest.raises(InvalidInput):
        landscape_pca(params, loss_fn, grid, k=1, group="rows")


def test_random_landscape_reports_top_singular_values(tiny_cfg, tiny_batch):
    """Every perturbed tensor carries its sigma_1; the summary keeps the largest."""
    params = init_params(tiny_cfg)
    curve = landscape_random(params, lambda p: forward_loss(p, tiny_cfg, tiny_batch),
                             PerturbGrid(alpha_max=0.1, num_offsets=1), directions=2,
                             keys=["layers.0.wq", "layers.1.w_up"])
    for key in ("layers.0.wq", "layers.1.w_up"):
        expected = np.linalg.svd(params[key], compute_uv=False)[0]
        assert curve.sigma_max[key] == pytest.approx(expected, rel=1e-8)
    top = summarize(curve).sigma_max
    assert np.isfinite(top) and top == max(curve.sigma_max.values())
