import logging
from typing import List, Sequence

import numpy as np

_logger = logging.getLogger(__name__)

_SUM_TOL = 1e-12


class ToyAutoregressiveModel:
    """Explicit next-token conditionals for every prefix up to a horizon.

    `levels[t]` has shape (vocab_size ** t, vocab_size); row i is the
    conditional after the length-t prefix whose base-vocab digits spell i.
    """

    def __init__(self, vocab_size: int, levels: List[np.ndarray]):
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")

        if not levels:
            raise ValueError("a toy model needs at least one level")

        checked = []

        for t, level in enumerate(levels):
            level = np.asarray(level, dtype=np.float64)
            expected = (vocab_size**t, vocab_size)

            if level.shape != expected:
                raise ValueError(f"level {t} has shape {level.shape}, expected {expected}")

            if np.any(level < 0):
                raise ValueError(f"level {t} has negative probabilities")

            sums = level.sum(axis=1)

            if np.any(np.abs(sums - 1.0) > _SUM_TOL):
                raise ValueError(f"level {t} has conditionals not summing to 1")

            checked.append(level)

        self.vocab_size = vocab_size
        self.levels = checked

    @property
    def horizon(self) -> int:
        return len(self.levels)

    def prefix_index(self, prefix: Sequence[int]) -> int:
        idx = 0

        for token in prefix:
            if not 0 <= token < self.vocab_size:
                raise ValueError(f"token {token} outside the vocabulary")
            idx = idx * self.vocab_size + int(token)

        return idx

    def conditional(self, prefix: Sequence[int]) -> np.ndarray:
        if len(prefix) >= self.horizon:
            raise ValueError(
                f"prefix length {len(prefix)} beyond model horizon {self.horizon}"
            )

        return self.levels[len(prefix)][self.prefix_index(prefix)]


def _normalized(rows: np.ndarray) -> np.ndarray:
    return rows / rows.sum(axis=1, keepdims=True)


def random_model(
    vocab_size: int,
    horizon: int,
    rng: np.random.Generator,
    concentration: float = 1.0,
) -> ToyAutoregressiveModel:
    """Conditionals drawn from a symmetric Dirichlet."""

    alpha = np.full(vocab_size, concentration)
    levels = [
        _normalized(rng.dirichlet(alpha, size=vocab_size**t)) for t in range(horizon)
    ]
    return ToyAutoregressiveModel(vocab_size=vocab_size, levels=levels)


def perturbed_model(
    full: ToyAutoregressiveModel, delta: float, rng: np.random.Generator
) -> ToyAutoregressiveModel:
    """Lossy twin with conditionals proportional to p_full * exp(delta * z), z ~ N(0, 1)."""

    if delta == 0.0:
        return ToyAutoregressiveModel(
            vocab_size=full.vocab_size, levels=[lvl.copy() for lvl in full.levels]
        )

    levels = [
        _normalized(lvl * np.exp(delta * rng.standard_normal(lvl.shape)))
        for lvl in full.levels
    ]

    _logger.debug("Perturbed toy model with delta=%s", delta)
    return ToyAutoregressiveModel(vocab_size=full.vocab_size, levels=levels)
