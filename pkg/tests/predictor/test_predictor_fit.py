import math

import numpy as np
import pytest

from exceptions import (DegenerateFeature, InsufficientGroups, InvalidInput, MissingFeature)
from predictor.model import FEATURES
from predictor.service import (build_features, compare_predictors, cross_validate, fit_linear,
                               pearson, sign_consistency_screen, spearman)

METHODS = ("full_rank", "galore", "fira", "cola", "sltrain", "relora")
SIZES = ("xs", "s", "m")

# per-size Spearman rho of the eight geometry features plus one sign-flipping distractor
SCREEN_TABLE = {
    "sharpness": [0.30, -0.10, 0.20],
    "barrier_consec": [-0.69, -0.70, -0.55],
    "act_cka_mean": [-0.62, -0.42, -0.78],
    "act_l2_mean": [0.66, 0.62, 0.55],
    "stable_rank_dW": [0.28, 0.62, 0.35],
    "eff_rank_dW": [0.30, 0.70, 0.18],
    "threshold_rank_W": [0.21, 0.37, 0.05],
    "spectral_gap_dW": [-0.29, -0.20, -0.18],
    "stable_rank_W": [-0.20, -0.11, -0.17],
}


@pytest.fixture(scope='module')
def planted():
    """200 rows, two informative features, target noise at 10% of the signal spread."""
    rng = np.random.default_rng(17)
    X = rng.standard_normal((200, 2))
    signal = 1.5 * X[:, 0] - 0.8 * X[:, 1]
    y = signal + 0.1 * signal.std() * rng.standard_normal(200)
    sizes = [SIZES[i % 3] for i in range(200)]
    methods = [METHODS[i % 6] for i in range(200)]
    return X, y, sizes, methods


def test_correlations_hand_values():
    """Identity, negation and the (1, 3, 2, 4) rank swap."""
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert pearson(x, x) == pytest.approx(1.0)
    assert spearman(x, -x) == pytest.approx(-1.0)
    assert spearman(x, [1.0, 3.0, 2.0, 4.0]) == pytest.approx(0.8)
    assert pearson(x, 3 * x + 7) == pytest.approx(pearson(x, x))
    assert math.isnan(pearson(x, np.ones(4)))
    with pytest.raises(InvalidInput):
        spearman([1.0, 2.0], [2.0, 1.0])


def test_spearman_ties_use_average_ranks():
    """Tied values share the mean of their ranks."""
    assert spearman([1.0, 1.0, 2.0], [1.0, 2.0, 3.0]) == pytest.approx(0.8660254, abs=1e-6)


def test_screen_reproduces_reference_ranking():
    """Sign-consistent features ranked by |median rho|; ties keep table order."""
    screened = sign_consistency_screen(SCREEN_TABLE)
    assert [f.name for f in screened] == [
        "barrier_consec", "act_cka_mean", "act_l2_mean", "stable_rank_dW",
        "eff_rank_dW", "threshold_rank_W", "spectral_gap_dW", "stable_rank_W"]
    assert [round(f.median_abs, 2) for f in screened] == [0.69, 0.62, 0.62, 0.35,
                                                          0.30, 0.21, 0.20, 0.17]


def test_screen_two_groups():
    """(+0.3, +0.5) is kept, (+0.3, -0.1) dropped; a single group is refused."""
    screened = sign_consistency_screen({"kept": [0.3, 0.5], "dropped": [0.3, -0.1]})
    assert [f.name for f in screened] == ["kept"]
    assert screened[0].median_abs == pytest.approx(0.4)
    with pytest.raises(InsufficientGroups):
        sign_consistency_screen({"alone": [0.5]})


def test_fit_residuals_are_orthogonal(planted):
    """Normal-equation residuals are orthogonal to every design column."""
    X, y, _, _ = planted
    fit = fit_linear(X, y)
    residual = y - fit.predict(X)
    design = np.hstack([np.ones((200, 1)), X])
    assert np.max(np.abs(design.T @ residual)) <= 1e-8
    assert fit.ridge == 0.0 and fit.r2 > 0.98


def test_fit_ridge_fallback_and_shape_errors(planted):
    """An all-zero column needs the ridge; too few rows are refused."""
    X, y, _, _ = planted
    fit = fit_linear(np.hstack([X, np.zeros((200, 1))]), y)
    assert fit.ridge == 1e-8
    with pytest.raises(InvalidInput):
        fit_linear(X[:2], y[:2])


@pytest.mark.parametrize("scheme, column, folds", [("loso", 2, 3), ("lomo", 3, 6)])
def test_cross_validation_recovers_planted_signal(planted, scheme, column, folds):
    """Held-out Pearson above 0.95 and every row predicted exactly once."""
    X, y, sizes, methods = planted
    groups = sizes if scheme == "loso" else methods
    fit = cross_validate(X, y, groups, scheme)
    assert fit.pearson > 0.95
    assert len(fit.folds) == folds
    held = sorted(i for fold in fit.folds for i in fold)
    assert held == list(range(200))


def test_held_out_targets_do_not_leak(planted):
    """Shifting the held-out group's targets leaves its predictions unchanged."""
    X, y, sizes, _ = planted
    shifted = y + np.asarray([5.0 if s == "xs" else 0.0 for s in sizes])
    first = np.asarray(cross_validate(X, y, sizes).predictions)
    second = np.asarray(cross_validate(X, shifted, sizes).predictions)
    mask = np.asarray([s == "xs" for s in sizes])
    assert np.array_equal(first[mask], second[mask])


def test_cross_validation_needs_two_groups(planted):
    """A single group leaves nothing to hold out."""
    X, y, _, _ = planted
    with pytest.raises(InsufficientGroups):
        cross_validate(X, y, ["xs"] * 200)


def _records(rng, n_steps=5):
    records, targets = [], {}
    for size in SIZES[:2]:
        for method in METHODS:
            for step in range(1, n_steps + 1):
                metrics = {name: float(rng.standard_normal()) for name in FEATURES}
                records.append((method, size, 0, step, metrics))
                targets[(method, size, step)] = metrics["val_loss"] * -2.0 + rng.normal(0, 0.1)
    return records, targets


def test_build_features_shapes_and_errors():
    """5 steps x 6 methods x 2 sizes give 60 rows; gaps and constants are refused."""
    records, targets = _records(np.random.default_rng(0))
    matrix = build_features(records, targets)
    assert matrix.X.shape == (60, len(FEATURES))
    assert matrix.y.shape == (60,)
    broken = [(m, s, seed, step, {k: v for k, v in values.items() if k != "act_l2_mean"})
              for m, s, seed, step, values in records]
    with pytest.raises(MissingFeature) as exc_info:
        build_features(broken, targets)
    assert exc_info.value.detail["missing"] == ["act_l2_mean"]
    constant = [(m, s, seed, step, {**values, "val_loss": 1.0})
                for m, s, seed, step, values in records]
    with pytest.raises(DegenerateFeature):
        build_features(constant, targets)


def test_compare_predictors_reports_all_three():
    """Validation loss alone, geometry alone and combined are scored under both schemes."""
    records, targets = _records(np.random.default_rng(1))
    scores = compare_predictors(build_features(records, targets))
    assert [s.predictor for s in scores] == ["val_loss_only", "geometry_only", "combined"]
    val_only = scores[0]
    assert val_only.loso_pearson > 0.9 and val_only.lomo_pearson > 0.9
    assert scores[2].in_sample_r2 >= val_only.in_sample_r2
