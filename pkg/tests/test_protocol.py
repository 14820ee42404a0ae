import logging

import numpy as np
import pytest

from kvspec.exceptions import ContractError
from kvspec.specloop.oracles import (
    ConstantOracle,
    DisagreeingOracle,
    EchoLastOracle,
    ModelOracle,
    TableOracle,
    correlated_table_oracle,
    random_table_oracle,
)
from kvspec.specloop.protocol import accept, draft, run_autoregressive, run_speculative, verify
from kvspec.specloop.toy_model import random_model

_logger = logging.getLogger(__name__)


def test_draft_constant():
    assert draft(ConstantOracle(5), [1, 2], 3) == [5, 5, 5]


def test_draft_echo_last():
    assert draft(EchoLastOracle(), [0, 1, 2], 3) == [2, 2, 2]


def test_draft_follows_table_walk():
    table = {(0,): 1, (1,): 1, (1, 1): 0, (1, 0): 0, (0, 0): 1, (0, 1): 1}
    oracle = TableOracle(table=table, context=2, vocab_size=2)

    # [0] -> 1; [0,1] -> 1; [1,1] -> 0; [1,0] -> 0
    assert draft(oracle, [0], 4) == [1, 1, 0, 0]


def test_draft_requires_positive_length():
    with pytest.raises(ContractError):
        draft(ConstantOracle(0), [], 0)


def test_verify_identical_oracles():
    oracle = EchoLastOracle()
    drafted = draft(oracle, [3], 4)
    predictions = verify(oracle, [3], drafted)

    assert predictions[:4] == drafted
    assert len(predictions) == 5


def test_verify_disagreement_at_second_position():
    base = ConstantOracle(1)
    verifier = DisagreeingOracle(base, vocab_size=4, positions=[3])
    drafted = draft(base, [0, 0], 3)
    predictions = verify(verifier, [0, 0], drafted)

    # prefix length 3 is the second prediction
    assert [i for i, (d, p) in enumerate(zip(drafted, predictions)) if d != p] == [1]


def test_verify_single_draft():
    assert len(verify(ConstantOracle(2), [], [2])) == 2

    with pytest.raises(ContractError):
        verify(ConstantOracle(2), [], [])


def test_accept_full_match():
    result = accept([1, 2, 3], [1, 2, 3, 9])

    assert result.accepted == (1, 2, 3, 9)
    assert result.bonus_used
    assert result.first_mismatch is None


def test_accept_mismatch():
    result = accept([1, 2, 3], [1, 7, 3, 9])

    assert result.accepted == (1, 7)
    assert result.first_mismatch == 2
    assert not result.bonus_used


def test_accept_immediate_mismatch():
    result = accept([4], [5, 6])
    assert result.accepted == (5,)
    assert result.first_mismatch == 1


def test_accept_length_mismatch():
    with pytest.raises(ContractError):
        accept([1, 2], [1, 2])


def test_perfect_drafter_accepts_everything():
    verifier = EchoLastOracle(empty_token=3)
    output, lengths = run_speculative(verifier, verifier, [1], 10, 4)

    assert output == run_autoregressive(verifier, [1], 10)
    assert lengths[:-1] == [5] * (len(lengths) - 1)


def test_adversarial_drafter_accepts_one_per_round():
    verifier = ConstantOracle(2)
    drafter = DisagreeingOracle(verifier, vocab_size=4)
    output, lengths = run_speculative(drafter, verifier, [0], 12, 3)

    assert output == [2] * 12
    assert lengths == [1] * 12


def test_random_tables_are_lossless():
    rng = np.random.default_rng(11)
    verifier = random_table_oracle(rng, vocab_size=4, context=2)
    drafter = correlated_table_oracle(rng, verifier, agreement=0.7)

    output, _ = run_speculative(drafter, verifier, [0, 1], 32, 5)
    assert output == run_autoregressive(verifier, [0, 1], 32)


def test_lossless_property_over_random_oracle_pairs():
    rng = np.random.default_rng(2024)

    for _ in range(1000):
        vocab = int(rng.integers(2, 9))
        context = int(rng.integers(1, 3))
        K = int(rng.integers(1, 65))
        x = int(rng.integers(1, 9))
        agreement = float(rng.random())
        verifier = random_table_oracle(rng, vocab, context)
        drafter = correlated_table_oracle(rng, verifier, agreement)
        prompt = [int(t) for t in rng.integers(vocab, size=int(rng.integers(0, 4)))]

        output, lengths = run_speculative(drafter, verifier, prompt, K, x)

        assert output == run_autoregressive(verifier, prompt, K)
        assert all(1 <= n <= x + 1 for n in lengths)


def test_model_oracle_is_greedy():
    model = random_model(3, 4, np.random.default_rng(5))
    oracle = ModelOracle(model)
    dist = oracle.distribution([1])

    assert oracle([1]) == int(np.argmax(dist))
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)
