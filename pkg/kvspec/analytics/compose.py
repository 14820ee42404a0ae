"""Accepted length when an auxiliary drafter extends each outer drafted position."""

import logging
from typing import Callable, Optional, Union

from kvspec.core.acceptance import GammaFn

_logger = logging.getLogger(__name__)

GammaEFn = Callable[[int], float]


def composition_multiplier(d_e: int, gamma_e: Optional[float]) -> float:
    if d_e < 1:
        raise ValueError("d_e must be >= 1")

    if d_e == 1:
        return 1.0

    if gamma_e is None or not 0.0 <= gamma_e <= 1.0:
        raise ValueError(f"gamma_e({d_e}) must be a probability, got {gamma_e}")

    return 1.0 + gamma_e * (d_e - 1)


def composed_accept_length(
    x: int,
    c: float,
    d_e: int,
    gamma: Union[GammaFn, float],
    gamma_e: Union[GammaEFn, float, None] = None,
) -> float:
    """gamma(x, c) * x * [1 + gamma_e(d_e) * (d_e - 1)], assuming independent drafters."""

    if x < 1:
        raise ValueError("x must be >= 1")

    g = gamma(x, c) if callable(gamma) else gamma

    if not 0.0 <= g <= 1.0:
        raise ValueError(f"gamma out of [0,1]: {g}")

    if d_e == 1:
        g_e = None
    else:
        g_e = gamma_e(d_e) if callable(gamma_e) else gamma_e

    return g * x * composition_multiplier(d_e, g_e)
