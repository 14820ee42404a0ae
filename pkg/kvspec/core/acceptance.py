"""
Acceptance-rate model of the compressed-KV drafter.

A round drafts x tokens; the verifier accepts the leading run of matches.
Under the per-token i.i.d. kind each drafted token matches with probability
p(c), so the accepted count is a truncated geometric run and
gamma(x, c) = E[accepted] / x = (p + p^2 + ... + p^x) / x.
"""

import functools
import logging
import math
from typing import Callable, List, Union

import numpy as np

from kvspec.core.models import AcceptanceModel, GammaEntry
from kvspec.enums import AcceptanceKind
from kvspec.exceptions import AcceptanceLookupError

_logger = logging.getLogger(__name__)

_C_TOL = 1e-12
_BISECT_STEPS = 64

GammaFn = Callable[[int, float], float]


def _same_ratio(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=_C_TOL, abs_tol=_C_TOL)


def _check_args(x: int, c: float):
    if x < 1:
        raise ValueError("x must be >= 1")

    if not 0.0 < c <= 1.0:
        raise ValueError("compression_ratio out of (0,1]")


def token_prob(model: AcceptanceModel, c: float) -> float:
    """Per-token match probability p(c) of a per-token-iid model."""

    if _same_ratio(c, 1.0):
        return 1.0

    for entry in model.per_token_prob:
        if _same_ratio(entry.c, c):
            return entry.p

    raise AcceptanceLookupError(f"No per-token probability for c={c}")


def truncated_geometric_mean(p: float, x: int) -> float:
    """Expected number of accepted drafted tokens out of x."""

    if p >= 1.0:
        return float(x)

    if p <= 0.0:
        return 0.0

    return float(np.sum(p ** np.arange(1, x + 1, dtype=np.float64)))


def _table_gamma(table: List[GammaEntry], x: int, c: float) -> float:
    candidates = [entry for entry in table if _same_ratio(entry.c, c)]

    if not candidates:
        raise AcceptanceLookupError(f"No tabulated acceptance for c={c}")

    # Nearest x wins; ties go to the smaller x
    best = min(candidates, key=lambda e: (abs(e.x - x), e.x))
    return best.gamma


def expected_gamma(model: AcceptanceModel, x: int, c: float) -> float:
    _check_args(x, c)

    if _same_ratio(c, 1.0):
        return 1.0

    if model.kind == AcceptanceKind.PER_TOKEN_IID:
        return truncated_geometric_mean(token_prob(model, c), x) / x

    return _table_gamma(model.table, x, c)


def implied_token_prob(gamma: float, x: int) -> float:
    """The per-token probability whose truncated-geometric run has mean gamma*x."""

    if x < 1:
        raise ValueError("x must be >= 1")

    if gamma >= 1.0:
        return 1.0

    if gamma <= 0.0:
        return 0.0

    # the truncated-geometric mean is increasing in p, so bisect on it
    target = gamma * x
    lo, hi = 0.0, 1.0

    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)

        if truncated_geometric_mean(mid, x) < target:
            lo = mid
        else:
            hi = mid

    return 0.5 * (lo + hi)


def round_token_prob(model: AcceptanceModel, x: int, c: float) -> float:
    """Per-token probability used to draw accepted lengths for a round of x drafts."""

    if model.kind == AcceptanceKind.PER_TOKEN_IID:
        return token_prob(model, c)

    return implied_token_prob(expected_gamma(model, x, c), x)


def sample_accepted(rng: np.random.Generator, p: float, x: int) -> int:
    """Number of leading drafted tokens accepted, in [0, x]."""

    if p >= 1.0:
        return x

    if p <= 0.0:
        return 0

    # Failures before the first mismatch
    run = int(rng.geometric(1.0 - p)) - 1
    return min(run, x)


def gamma_fn(model: Union[AcceptanceModel, GammaFn]) -> GammaFn:
    if isinstance(model, AcceptanceModel):
        return functools.partial(expected_gamma, model)

    return model


def gamma_table(xs: List[int], c: float, gammas: List[float]) -> AcceptanceModel:
    """Build a tabulated model for one compression ratio."""

    entries = [GammaEntry(x=x, c=c, gamma=g) for x, g in zip(xs, gammas)]
    _logger.debug("Tabulated acceptance with %s entries at c=%s", len(entries), c)
    return AcceptanceModel(kind=AcceptanceKind.TABULATED, table=entries)
