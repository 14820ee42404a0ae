import itertools
import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from kvspec.specloop.toy_model import ToyAutoregressiveModel

_logger = logging.getLogger(__name__)

Token = int
TokenSeq = Sequence[Token]


class TokenOracle:
    """Deterministic next-token function over a finite vocabulary."""

    vocab_size: Optional[int] = None

    def __call__(self, prefix: TokenSeq) -> Token:
        raise NotImplementedError

    def distribution(self, prefix: TokenSeq) -> Optional[np.ndarray]:
        return None


class ConstantOracle(TokenOracle):
    def __init__(self, token: Token):
        self.token = token

    def __call__(self, prefix: TokenSeq) -> Token:
        return self.token


class EchoLastOracle(TokenOracle):
    def __init__(self, empty_token: Token = 0):
        self.empty_token = empty_token

    def __call__(self, prefix: TokenSeq) -> Token:
        return prefix[-1] if len(prefix) else self.empty_token


class TableOracle(TokenOracle):
    """Looks up the last `context` tokens of the prefix in a table.

    Prefixes shorter than `context` are looked up as they are.
    """

    def __init__(
        self,
        table: Dict[Tuple[Token, ...], Token],
        context: int,
        vocab_size: int,
        default: Token = 0,
    ):
        self.table = dict(table)
        self.context = context
        self.vocab_size = vocab_size
        self.default = default

    def __call__(self, prefix: TokenSeq) -> Token:
        key = tuple(prefix[-self.context :]) if self.context else ()
        return self.table.get(key, self.default)


class ModelOracle(TokenOracle):
    """Greedy decoding over a toy autoregressive model."""

    def __init__(self, model: ToyAutoregressiveModel):
        self.model = model
        self.vocab_size = model.vocab_size

    def distribution(self, prefix: TokenSeq) -> np.ndarray:
        return self.model.conditional(prefix)

    def __call__(self, prefix: TokenSeq) -> Token:
        return int(np.argmax(self.distribution(prefix)))


class DisagreeingOracle(TokenOracle):
    """Wraps an oracle and shifts its answer at selected prefix lengths.

    With `positions=None` it disagrees everywhere.
    """

    def __init__(
        self,
        base: TokenOracle,
        vocab_size: int,
        positions: Optional[Sequence[int]] = None,
    ):
        self.base = base
        self.vocab_size = vocab_size
        self.positions = None if positions is None else frozenset(positions)

    def __call__(self, prefix: TokenSeq) -> Token:
        token = self.base(prefix)

        if self.positions is None or len(prefix) in self.positions:
            return (token + 1) % self.vocab_size

        return token


def random_table_oracle(
    rng: np.random.Generator, vocab_size: int, context: int
) -> TableOracle:
    """A table over every context of length 0..`context` with random answers."""

    table = {}

    for length in range(context + 1):
        for key in itertools.product(range(vocab_size), repeat=length):
            table[key] = int(rng.integers(vocab_size))

    return TableOracle(table=table, context=context, vocab_size=vocab_size)


def correlated_table_oracle(
    rng: np.random.Generator, base: TableOracle, agreement: float
) -> TableOracle:
    """Copy of `base` whose entries are re-drawn with probability 1 - agreement."""

    table = {}

    for key, token in base.table.items():
        if rng.random() < agreement:
            table[key] = token
        else:
            table[key] = int(rng.integers(base.vocab_size))

    return TableOracle(
        table=table, context=base.context, vocab_size=base.vocab_size
    )
