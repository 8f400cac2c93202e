import itertools
import math

import numpy as np
import pytest

from qdimred import ErgodicityError, InputError
from qdimred.models import (
    Hmm,
    LinearGenerator,
    all_word_probabilities,
    bernoulli_hmm,
    branching_profile,
    build_tns,
    planted_ring_hmm,
    random_hmm,
    random_unifilar_hmm,
    sample_hmm,
    stationary_distribution,
    stationary_state_entropy,
    word_probability,
)

from conftest import path_sum, stationary_by_power


def test_single_state_stationary():
    assert stationary_distribution(bernoulli_hmm(0.3)).tolist() == [1.0]


def test_doubly_stochastic_stationary_uniform():
    P = np.array([[0.2, 0.5, 0.3], [0.3, 0.2, 0.5], [0.5, 0.3, 0.2]])
    m = Hmm(("a", "b"), np.stack([0.5 * P, 0.5 * P]))
    np.testing.assert_allclose(m.stationary, np.full(3, 1 / 3), atol=1e-12)


def test_b2_stationary_matches_power_oracle(b2):
    # frozen from the power-iteration oracle: [2/3, 1/3]
    oracle = stationary_by_power(b2.state_chain)
    np.testing.assert_allclose(oracle, [2 / 3, 1 / 3], atol=1e-12)
    np.testing.assert_allclose(b2.stationary, oracle, atol=1e-12)


def test_stationary_fixed_point_residual():
    m = random_hmm(5, 3, rng=4)
    pi = m.stationary
    assert np.all(pi >= 0)
    assert abs(pi.sum() - 1) < 1e-12
    assert np.max(np.abs(m.state_chain @ pi - pi)) < 1e-12


def test_word_probability_empty_and_b2(b2):
    assert word_probability(b2, []) == 1.0
    # 2/3 * 0.25 + 1/3 * 1
    assert word_probability(b2, "1") == pytest.approx(0.5, abs=1e-14)


def test_unknown_symbol_rejected(b2):
    with pytest.raises(InputError):
        word_probability(b2, "2")


@pytest.mark.parametrize("seed", range(6))
def test_word_probability_matches_path_sum(seed):
    m = random_hmm(1 + seed % 4, 2 + seed % 2, rng=seed)
    gen = m.generator()
    for L in range(1, 5):
        for w in itertools.product(range(m.num_symbols), repeat=L):
            ref = path_sum(m.transitions, m.stationary, w)
            assert abs(word_probability(gen, [m.alphabet[i] for i in w]) - ref) < 1e-12


@pytest.mark.parametrize("L", [1, 2, 3, 4])
def test_word_probabilities_normalized(b2, L):
    assert abs(all_word_probabilities(b2, L).sum() - 1) < 1e-9


def test_branching_profiles(b2):
    prof = branching_profile(b2)
    assert prof.k[0, 0] == 2 and prof.d_y == 2 and not prof.is_unifilar
    u = random_unifilar_hmm(4, 2, rng=1)
    assert branching_profile(u).d_y == 1 and branching_profile(u).is_unifilar
    full = Hmm(("a",), np.full((1, 4, 4), 0.25))
    assert branching_profile(full).d_y == 4


def test_build_tns_properties():
    m = build_tns(2, 0.5)
    np.testing.assert_allclose(m.stationary, [0.5, 0.5], atol=1e-12)
    m3 = build_tns(3, 0.9)
    np.testing.assert_allclose(m3.transitions.sum(axis=(0, 1)), 1.0, atol=1e-15)
    for N, p in [(4, 0.2), (7, 0.6), (12, 0.95)]:
        m = build_tns(N, p)
        assert branching_profile(m).d_y == 2
        np.testing.assert_allclose(m.stationary, np.full(N, 1 / N), atol=1e-12)


@pytest.mark.parametrize("N,p", [(1, 0.5), (3, 0.0), (3, 1.0), (2.5, 0.3)])
def test_build_tns_rejects_bad_parameters(N, p):
    with pytest.raises(InputError):
        build_tns(N, p)


def test_hmm_rejects_bad_inputs():
    with pytest.raises(InputError):
        Hmm(("0",), [[[0.5]]])
    with pytest.raises(InputError):
        Hmm(("0", "1"), [[[1.2]], [[-0.2]]])
    # two disconnected states
    with pytest.raises(ErgodicityError):
        Hmm(("0",), [np.eye(2)])
    # period-2 cycle
    with pytest.raises(ErgodicityError):
        Hmm(("0",), [[[0, 1], [1, 0]]])


def test_stationary_entropy_examples(b2):
    assert stationary_state_entropy(bernoulli_hmm(0.2)) == 0.0
    uniform4 = Hmm(("a",), np.full((1, 4, 4), 0.25))
    assert stationary_state_entropy(uniform4) == pytest.approx(2.0, abs=1e-12)
    h = -(2 / 3) * math.log2(2 / 3) - (1 / 3) * math.log2(1 / 3)
    assert stationary_state_entropy(b2) == pytest.approx(h, abs=1e-12)
    assert h == pytest.approx(0.9183, abs=1e-4)


def test_linear_generator_validation():
    g = bernoulli_hmm(0.3).generator()
    g.validate()
    bad = LinearGenerator(("0", "1"), [[[0.7]], [[0.7]]], [1.0], [1.0])
    with pytest.raises(InputError):
        bad.validate()


def test_sample_hmm_frequencies_and_determinism(b2):
    s1 = sample_hmm(b2, 20000, 3)
    assert s1 == sample_hmm(b2, 20000, 3)
    freq = s1.count("1") / len(s1)
    assert abs(freq - 0.5) < 4 * math.sqrt(0.25 / len(s1)) * 3  # correlated chain: generous band
    batch = sample_hmm(b2, 50, 1, n_sequences=4)
    assert len(batch) == 4 and all(len(s) == 50 for s in batch)


def test_planted_ring_is_valid_and_non_unifilar():
    m = planted_ring_hmm()
    assert m.num_states == 30 and m.num_symbols == 4
    assert not branching_profile(m).is_unifilar
