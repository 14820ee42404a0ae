"""
Greedy draft / verify / accept rounds over token oracles.

Positions reported to callers are 1-based, as in `first_mismatch`.
"""

import dataclasses
import logging
from typing import List, Optional, Tuple

from kvspec.exceptions import ContractError
from kvspec.specloop.oracles import Token, TokenOracle, TokenSeq

_logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class SpecRoundResult:
    drafted: Tuple[Token, ...]
    predictions: Tuple[Token, ...]
    accepted: Tuple[Token, ...]
    bonus_used: bool
    first_mismatch: Optional[int] = None


def draft(drafter: TokenOracle, prefix: TokenSeq, x: int) -> List[Token]:
    if x < 1:
        raise ContractError("draft length must be >= 1")

    context = list(prefix)
    drafted = []

    for _ in range(x):
        token = drafter(context)
        drafted.append(token)
        context.append(token)

    return drafted


def verify(verifier: TokenOracle, prefix: TokenSeq, drafted: TokenSeq) -> List[Token]:
    """One verifier pass: a prediction after every drafted prefix, plus the bonus."""

    if not len(drafted):
        raise ContractError("nothing to verify")

    context = list(prefix)
    predictions = [verifier(context)]

    for token in drafted:
        context.append(token)
        predictions.append(verifier(context))

    return predictions


def accept(drafted: TokenSeq, predictions: TokenSeq) -> SpecRoundResult:
    if len(predictions) != len(drafted) + 1:
        raise ContractError(
            "expected {} predictions for {} drafted tokens, got {}".format(
                len(drafted) + 1, len(drafted), len(predictions)
            )
        )

    for idx, (token, predicted) in enumerate(zip(drafted, predictions)):
        if token != predicted:
            return SpecRoundResult(
                drafted=tuple(drafted),
                predictions=tuple(predictions),
                accepted=tuple(drafted[:idx]) + (predicted,),
                bonus_used=False,
                first_mismatch=idx + 1,
            )

    return SpecRoundResult(
        drafted=tuple(drafted),
        predictions=tuple(predictions),
        accepted=tuple(drafted) + (predictions[-1],),
        bonus_used=True,
    )


def run_autoregressive(verifier: TokenOracle, prompt: TokenSeq, K: int) -> List[Token]:
    context = list(prompt)
    output = []

    for _ in range(K):
        token = verifier(context)
        output.append(token)
        context.append(token)

    return output


def run_speculative(
    drafter: TokenOracle,
    verifier: TokenOracle,
    prompt: TokenSeq,
    K: int,
    x: int,
) -> Tuple[List[Token], List[int]]:
    """Generate exactly K tokens; returns the output and |accepted| per round."""

    if K < 1 or x < 1:
        raise ContractError("K and x must be >= 1")

    output: List[Token] = []
    accept_lengths: List[int] = []

    while len(output) < K:
        context = list(prompt) + output
        drafted = draft(drafter, context, x)
        result = accept(drafted, verify(verifier, context, drafted))
        accept_lengths.append(len(result.accepted))
        output.extend(result.accepted[: K - len(output)])

    _logger.debug(
        "Generated %s tokens in %s rounds (x=%s)", K, len(accept_lengths), x
    )

    return output, accept_lengths
