"""Dense float64 linear algebra shared by the metric and training modules."""
import logging
from functools import lru_cache

import numpy as np

from exceptions import InvalidInput, ShapeError
from linalg.model import SeededRng, SvdResult

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
MAX_SWEEPS = 80


def as_matrix(m) -> np.ndarray:
    """Validates and converts ``m`` to a finite 2-D float64 array.

    Raises:
        InvalidInput: wrong rank, empty, or non-finite entries
    """
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInput({"msg": "expected a non-empty 2-D matrix",
                            "shape": list(arr.shape)})
    if not np.isfinite(arr).all():
        raise InvalidInput("matrix has non-finite entries")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError({"msg": "matmul shape mismatch",
                          "left": list(a.shape), "right": list(b.shape)})
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError({"msg": "add shape mismatch",
                          "left": list(a.shape), "right": list(b.shape)})
    return a + b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return a * float(c)


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.T)


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(a * a)))


def gaussian_direction(rows: int, cols: int, rng: SeededRng) -> np.ndarray:
    """I.i.d. standard-normal ``rows x cols`` matrix drawn from ``rng``."""
    if rows < 1 or cols < 1:
        raise InvalidInput({"msg": "direction needs positive dims",
                            "rows": rows, "cols": cols})
    return rng.standard_normal((rows, cols))


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # circle-method tournament: every column pair meets once per sweep and
    # pairs inside one round are disjoint, so a round is one vectorised update
    players = list(range(n)) + ([-1] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = [(players[i], players[k - 1 - i]) for i in range(k // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        rounds.append((np.array([p for p, _ in pairs], dtype=np.intp),
                       np.array([q for _, q in pairs], dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_tall(a: np.ndarray) -> SvdResult:
    m, n = a.shape
    work = a.copy()
    v = np.eye(n)
    tol = max(m, n) * EPS
    negligible = (EPS * frobenius_norm(a)) ** 2

    for sweep in range(MAX_SWEEPS):
        rotated = False
        for p, q in _round_robin(n):
            if p.size == 0:
                continue
            ap = work[:, p]
            aq = work[:, q]
            alpha = np.sum(ap * ap, axis=0)
            beta = np.sum(aq * aq, axis=0)
            gamma = np.sum(ap * aq, axis=0)
            rotate = ((np.abs(gamma) > tol * np.sqrt(alpha * beta))
                      & (alpha > negligible) & (beta > negligible))
            if not rotate.any():
                continue
            rotated = True
            safe_gamma = np.where(rotate, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * safe_gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = np.where(rotate, 1.0 / np.sqrt(1.0 + t * t), 1.0)
            s = np.where(rotate, c * t, 0.0)
            work[:, p] = c * ap - s * aq
            work[:, q] = s * ap + c * aq
            vp = v[:, p]
            vq = v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        logger.warning(f"jacobi svd hit {MAX_SWEEPS} sweeps on {m}x{n} input")

    sigma = np.sqrt(np.sum(work * work, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    cutoff = sigma[0] * max(m, n) * EPS if sigma[0] > 0 else 0.0
    keep = int(np.sum(sigma > cutoff)) if sigma[0] > 0 else 0
    u = np.zeros((m, n))
    u[:, :keep] = work[:, :keep] / sigma[:keep]
    sigma[keep:] = 0.0
    if keep < n:
        # complete U with an orthonormal basis of the remaining space
        q_full, _ = np.linalg.qr(np.hstack([u[:, :keep], np.eye(m)]))
        u[:, keep:] = q_full[:, keep:n]
    return SvdResult(U=u, singular_values=sigma, V=v)


def svd(m) -> SvdResult:
    """One-sided (Hestenes) Jacobi SVD with sign-normalised singular vectors.

    Args:
        m: finite matrix, any shape with both dims >= 1

    Returns:
        SvdResult with ``r = min(rows, cols)`` descending singular values

    Raises:
        InvalidInput: non-finite or malformed input
    """
    a = as_matrix(m)
    if a.shape[0] >= a.shape[1]:
        result = _jacobi_tall(a)
    else:
        flipped = _jacobi_tall(np.ascontiguousarray(a.T))
        result = SvdResult(U=flipped.V, singular_values=flipped.singular_values, V=flipped.U)
    return _fix_signs(result)


def _fix_signs(result: SvdResult) -> SvdResult:
    # largest-magnitude entry of every U column is positive
    u, v = result.U, result.V
    pivots = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    signs = np.where(pivots < 0, -1.0, 1.0)
    return SvdResult(U=u * signs, singular_values=result.singular_values, V=v * signs)


def singular_values(m) -> np.ndarray:
    return svd(m).singular_values
