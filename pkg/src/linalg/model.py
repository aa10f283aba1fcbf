from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "pcg64-seedsequence/v1"
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``M = U @ diag(singular_values) @ V.T`` with descending values."""
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    @property
    def rank_bound(self) -> int:
        return int(self.singular_values.shape[0])

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T


@dataclass
class SeededRng:
    """Single-owner random stream.

    Parallel work never shares an instance: it derives children with
    :meth:`child`, whose stream depends only on ``(seed, stream path)``.
    """
    seed: int
    stream: tuple[int, ...] = ()
    algorithm: str = field(default=RNG_ALGORITHM, init=False)

    def __post_init__(self):
        entropy = [int(self.seed) & _SEED_MASK, *(int(s) & _SEED_MASK for s in self.stream)]
        self._generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy))
        )

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def child(self, *index: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(index))

    def standard_normal(self, shape) -> np.ndarray:
        return self._generator.standard_normal(shape)
