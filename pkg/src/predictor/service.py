"""Linear prediction of downstream score from per-checkpoint features."""
import logging
import math

import numpy as np
from scipy import stats

from exceptions import (DegenerateFeature, InsufficientGroups, InvalidInput,
                        MissingFeature, SingularDesign)
from predictor.model import (FEATURES, PREDICTORS, FeatureMatrix, FeatureRow, FitResult,
                             PredictorScore, Scheme, ScreenedFeature)

logger = logging.getLogger(__name__)

RIDGE = 1e-8
MAX_CONDITION = 1.0 / np.finfo(np.float64).eps


def _vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise InvalidInput({"msg": "correlation needs two equal-length vectors of length >= 3",
                            "x": list(x.shape), "y": list(y.shape)})
    return x, y


def pearson(x, y) -> float:
    """Pearson correlation; ``nan`` (logged) when either input is constant."""
    x, y = _vectors(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        logger.warning("pearson undefined for a constant input")
        return math.nan
    return float(stats.pearsonr(x, y)[0])


def spearman(x, y) -> float:
    """Spearman correlation with average ranks for ties."""
    x, y = _vectors(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        logger.warning("spearman undefined for a constant input")
        return math.nan
    return float(stats.spearmanr(x, y)[0])


def build_features(records: list[tuple[str, str, int, int, dict[str, float]]],
                   targets: dict[tuple[str, str, int], float] | None = None,
                   columns=FEATURES) -> FeatureMatrix:
    """Feature rows from ``(method, size, seed, step, metrics)`` records.

    Targets are keyed by ``(method, size, step)``.

    Raises:
        MissingFeature: a record lacks a selected metric (names the checkpoint)
        DegenerateFeature: a selected column is constant
    """
    rows = []
    for method, size, seed, step, metrics in records:
        row = FeatureRow(method=method, size=size, seed=seed, step=step,
                         values={c: metrics[c] for c in columns if c in metrics},
                         target=None if targets is None else targets.get((method, size, step)))
        missing = [c for c in columns if c not in row.values or not np.isfinite(row.values[c])]
        if missing:
            raise MissingFeature({"msg": "checkpoint lacks metrics", "checkpoint": row.label,
                                  "missing": missing})
        if targets is not None and row.target is None:
            raise MissingFeature({"msg": "checkpoint has no target", "checkpoint": row.label})
        rows.append(row)
    matrix = FeatureMatrix(columns=list(columns), rows=rows)
    X = matrix.X
    constant = [c for j, c in enumerate(matrix.columns) if len(rows) and np.ptp(X[:, j]) == 0]
    if constant:
        raise DegenerateFeature({"msg": "constant feature columns", "columns": constant})
    return matrix


def standardize(train: np.ndarray, *others: np.ndarray) -> list[np.ndarray]:
    """z-scores with statistics of ``train`` only; constant columns are only centred."""
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return [(block - mean) / std for block in (train, *others)]


def fit_linear(X, y) -> FitResult:
    """Ordinary least squares with intercept via the normal equations.

    A Gram matrix too ill-conditioned to solve gets a ridge of 1e-8.

    Raises:
        SingularDesign: still singular after the ridge
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] <= X.shape[1]:
        raise InvalidInput({"msg": "need more rows than columns", "shape": list(X.shape)})
    design = np.hstack([np.ones((X.shape[0], 1)), X])
    gram = design.T @ design
    rhs = design.T @ y
    ridge = 0.0
    if np.linalg.cond(gram) > MAX_CONDITION:
        ridge = RIDGE
        gram = gram + ridge * np.eye(gram.shape[0])
        if np.linalg.cond(gram) > MAX_CONDITION:
            raise SingularDesign({"msg": "design is rank deficient", "shape": list(X.shape)})
        logger.warning("singular Gram matrix, using ridge fallback")
    beta = np.linalg.solve(gram, rhs)
    residual = y - design @ beta
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(np.sum(residual ** 2) / total) if total > 0 else 1.0
    return FitResult(coefficients=beta[1:].tolist(), intercept=float(beta[0]), r2=r2,
                     ridge=ridge)


def cross_validate(X, y, groups: list[str], scheme: Scheme = "loso") -> FitResult:
    """Leave-one-group-out CV; folds follow the first appearance of each group.

    Training-fold statistics standardise both the training and held-out rows.
    The returned coefficients are the in-sample fit on standardised columns.

    Raises:
        InsufficientGroups: fewer than two distinct groups
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    labels = list(dict.fromkeys(groups))
    if len(labels) < 2:
        raise InsufficientGroups({"msg": "cross-validation needs at least two groups",
                                  "scheme": scheme, "groups": labels})
    predictions = np.empty(len(y))
    folds = []
    for label in labels:
        held = np.asarray([g == label for g in groups])
        train_x, test_x = standardize(X[~held], X[held])
        fit = fit_linear(train_x, y[~held])
        predictions[held] = fit.predict(test_x)
        folds.append(np.flatnonzero(held).tolist())
    full = fit_linear(standardize(X)[0], y)
    return full.model_copy(update={
        "scheme": scheme, "folds": folds, "fold_labels": labels,
        "predictions": predictions.tolist(),
        "pearson": pearson(predictions, y), "spearman": spearman(predictions, y)})


def spearman_table(matrix: FeatureMatrix, columns=None) -> dict[str, dict[str, float]]:
    """Per-size-group Spearman correlation of every feature with the target."""
    columns = list(columns or matrix.columns)
    sizes = list(dict.fromkeys(row.size for row in matrix.rows))
    X = matrix.X
    y = matrix.y
    table: dict[str, dict[str, float]] = {}
    for column in columns:
        j = matrix.columns.index(column)
        table[column] = {}
        for size in sizes:
            mask = np.asarray([row.size == size for row in matrix.rows])
            table[column][size] = spearman(X[mask, j], y[mask])
    return table


def sign_consistency_screen(table: dict[str, dict[str, float] | list[float]]) -> list[ScreenedFeature]:
    """Features whose Spearman sign agrees across every group, ranked by |median rho|.

    Ties keep the table order.
    """
    kept = []
    for name, rhos in table.items():
        values = list(rhos.values()) if isinstance(rhos, dict) else list(rhos)
        if len(values) < 2:
            raise InsufficientGroups({"msg": "screen needs at least two groups", "feature": name})
        signs = {np.sign(v) for v in values}
        if any(math.isnan(v) for v in values) or 0.0 in signs or len(signs) != 1:
            continue
        kept.append(ScreenedFeature(name=name, rhos=values,
                                    median_abs=float(abs(np.median(values)))))
    return sorted(kept, key=lambda feature: -feature.median_abs)


def compare_predictors(matrix: FeatureMatrix) -> list[PredictorScore]:
    """Validation loss alone, geometry alone and both, under LOSO and LOMO."""
    scores = []
    for name, columns in PREDICTORS.items():
        sub = matrix.select(columns)
        scores.append(PredictorScore(
            predictor=name, features=list(columns),
            loso_pearson=_cv_pearson(sub, "loso"), lomo_pearson=_cv_pearson(sub, "lomo"),
            in_sample_r2=fit_linear(standardize(sub.X)[0], sub.y).r2))
    return scores


def _cv_pearson(matrix: FeatureMatrix, scheme: Scheme) -> float | None:
    try:
        return cross_validate(matrix.X, matrix.y, matrix.groups(scheme), scheme).pearson
    except InsufficientGroups as err:
        logger.warning(f"{scheme} skipped: {err.detail}")
        return None
