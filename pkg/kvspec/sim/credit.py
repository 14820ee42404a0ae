import logging
from typing import Dict, Tuple

import numpy as np

from kvspec.core.acceptance import expected_gamma, round_token_prob, sample_accepted
from kvspec.core.models import Request, SystemConfig
from kvspec.enums import AcceptanceRealization
from kvspec.scheduler.models import SpecSession

_logger = logging.getLogger(__name__)


class VerifyCredit:
    """Tokens a verify round emits for a request that drafted `drafted` tokens.

    Sampled rounds draw the accepted run from a per-request generator seeded
    with (seed, request id), so results do not depend on event interleaving.
    With `bonus` the verifier's own next token is added to the accepted run.
    """

    def __init__(self, config: SystemConfig, seed: int, bonus: bool = True):
        self.acceptance = config.acceptance
        self.realization = config.runtime.acceptance_realization
        self.seed = seed
        self.bonus = bonus
        self._probs: Dict[Tuple[int, float], float] = {}
        self._rngs: Dict[int, np.random.Generator] = {}

    def _rng(self, request_id: int) -> np.random.Generator:
        if request_id not in self._rngs:
            self._rngs[request_id] = np.random.default_rng([self.seed, abs(request_id)])
        return self._rngs[request_id]

    def _prob(self, drafted: int, c: float) -> float:
        key = (drafted, c)

        if key not in self._probs:
            self._probs[key] = round_token_prob(self.acceptance, drafted, c)
        return self._probs[key]

    def accepted(self, request: Request, drafted: int) -> float:
        if drafted < 1:
            return 0.0

        c = request.compression_ratio

        if self.realization == AcceptanceRealization.DETERMINISTIC_MEAN:
            return expected_gamma(self.acceptance, drafted, c) * drafted

        return float(sample_accepted(self._rng(request.id), self._prob(drafted, c), drafted))

    def tokens(self, request: Request, drafted: int) -> float:
        return self.accepted(request, drafted) + (1.0 if self.bonus else 0.0)

    def __call__(self, session: SpecSession, drafted: int) -> float:
        return self.tokens(session.request, drafted)
