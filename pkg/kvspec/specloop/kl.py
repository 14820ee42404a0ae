"""
KL divergence between full-KV and lossy-KV toy models.

Sequence-level KL is computed two independent ways: directly over the
joint distribution of all length-T sequences, and as the sum of expected
per-step KLs under the full model. They agree up to rounding.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
import polars as pl

from kvspec.config import get_settings
from kvspec.exceptions import EnumerationGuardError, InfiniteKLError
from kvspec.specloop.toy_model import ToyAutoregressiveModel

_logger = logging.getLogger(__name__)


def _check_pair(full: ToyAutoregressiveModel, lossy: ToyAutoregressiveModel):
    if full.vocab_size != lossy.vocab_size:
        raise ValueError("models must share a vocabulary")


def check_enumeration(vocab_size: int, T: int, limit: Optional[int] = None):
    if T < 1:
        raise ValueError("T must be >= 1")

    limit = get_settings().enumeration_limit if limit is None else limit

    if vocab_size**T > limit:
        raise EnumerationGuardError(
            f"vocab_size^T = {vocab_size}^{T} exceeds the enumeration limit {limit}"
        )


def _check_horizon(model: ToyAutoregressiveModel, T: int):
    if T > model.horizon:
        raise ValueError(f"T={T} beyond model horizon {model.horizon}")


def _unravel(index: int, length: int, vocab_size: int) -> Tuple[int, ...]:
    digits = []

    for _ in range(length):
        index, digit = divmod(index, vocab_size)
        digits.append(digit)

    return tuple(reversed(digits))


def _rowwise_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    support = p > 0

    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(support, p * (np.log(p) - np.log(q)), 0.0)

    return terms.sum(axis=-1)


def _support_violations(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.any((p > 0) & (q <= 0), axis=-1)


def per_step_kl(
    full: ToyAutoregressiveModel,
    lossy: ToyAutoregressiveModel,
    prefix: Sequence[int],
) -> float:
    _check_pair(full, lossy)
    p = full.conditional(prefix)
    q = lossy.conditional(prefix)

    if _support_violations(p, q):
        raise InfiniteKLError(prefix)

    support = p > 0
    return math.fsum(p[support] * np.log(p[support] / q[support]))


def _joint_log_probs(model: ToyAutoregressiveModel, T: int) -> np.ndarray:
    """Log-probability of every length-T sequence, lexicographic order."""

    log_joint = np.zeros(1)

    with np.errstate(divide="ignore"):
        for t in range(T):
            log_joint = (log_joint[:, None] + np.log(model.levels[t])).reshape(-1)

    return log_joint


def sequence_kl_direct(
    full: ToyAutoregressiveModel,
    lossy: ToyAutoregressiveModel,
    T: int,
    limit: Optional[int] = None,
) -> float:
    _check_pair(full, lossy)
    check_enumeration(full.vocab_size, T, limit)
    _check_horizon(full, T)
    _check_horizon(lossy, T)

    log_p = _joint_log_probs(full, T)
    log_q = _joint_log_probs(lossy, T)
    support = np.isfinite(log_p)
    broken = support & ~np.isfinite(log_q)

    if np.any(broken):
        idx = int(np.flatnonzero(broken)[0])
        raise InfiniteKLError(_unravel(idx, T, full.vocab_size))

    p = np.exp(log_p[support])
    return math.fsum(p * (log_p[support] - log_q[support]))


def _step_terms(
    full: ToyAutoregressiveModel, lossy: ToyAutoregressiveModel, T: int
) -> list:
    """Per step t: (weights of length-t prefixes under p_full, per-prefix KL)."""

    terms = []
    weights = np.ones(1)

    for t in range(T):
        p = full.levels[t]
        q = lossy.levels[t]
        reachable = weights > 0
        broken = reachable & _support_violations(p, q)

        if np.any(broken):
            idx = int(np.flatnonzero(broken)[0])
            raise InfiniteKLError(_unravel(idx, t, full.vocab_size))

        kl = np.where(reachable, _rowwise_kl(p, q), 0.0)
        terms.append((weights, kl))
        weights = (weights[:, None] * p).reshape(-1)

    return terms


def sequence_kl_chain(
    full: ToyAutoregressiveModel,
    lossy: ToyAutoregressiveModel,
    T: int,
    limit: Optional[int] = None,
) -> float:
    _check_pair(full, lossy)
    check_enumeration(full.vocab_size, T, limit)
    _check_horizon(full, T)
    _check_horizon(lossy, T)

    return math.fsum(
        math.fsum(weights * kl) for weights, kl in _step_terms(full, lossy, T)
    )


def min_step_kl(
    full: ToyAutoregressiveModel,
    lossy: ToyAutoregressiveModel,
    T: int,
    limit: Optional[int] = None,
) -> float:
    """Smallest per-step KL over prefixes reachable under p_full, steps 1..T."""

    _check_pair(full, lossy)
    check_enumeration(full.vocab_size, T, limit)
    _check_horizon(full, T)
    _check_horizon(lossy, T)

    return min(
        float(kl[weights > 0].min()) for weights, kl in _step_terms(full, lossy, T)
    )


def cumulative_kl_profile(
    full: ToyAutoregressiveModel,
    lossy: ToyAutoregressiveModel,
    T: int,
    limit: Optional[int] = None,
) -> pl.DataFrame:
    """Cumulative KL for t = 1..T by both methods, with the eps*t lower bound."""

    _check_pair(full, lossy)
    check_enumeration(full.vocab_size, T, limit)
    _check_horizon(full, T)
    _check_horizon(lossy, T)
    steps = _step_terms(full, lossy, T)
    eps = min(float(kl[weights > 0].min()) for weights, kl in steps)

    rows = {"t": [], "kl_direct": [], "kl_chain": [], "eps_bound": []}
    chain_parts = []

    for t in range(1, T + 1):
        weights, kl = steps[t - 1]
        chain_parts.append(math.fsum(weights * kl))
        rows["t"].append(t)
        rows["kl_direct"].append(sequence_kl_direct(full, lossy, t, limit))
        rows["kl_chain"].append(math.fsum(chain_parts))
        rows["eps_bound"].append(eps * t)

    _logger.debug("KL profile up to T=%s (eps=%s)", T, eps)
    return pl.DataFrame(rows)
