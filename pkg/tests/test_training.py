import numpy as np
import pytest

from qdimred import InputError
from qdimred.models import Hmm, sample_hmm
from qdimred.training import (
    BaumWelchHMM,
    DuplicateCentroidError,
    TrainingConfig,
    VectorQuantizer,
    baum_welch_fit,
    baum_welch_train,
    kmeans_quantize,
)


def fair_coin(n, seed):
    rng = np.random.default_rng(seed)
    return ["".join(rng.choice(["0", "1"], size=n))]


def test_single_state_forced():
    m = baum_welch_train(["0000"], TrainingConfig(1), alphabet=("0",))
    np.testing.assert_allclose(m.transitions, [[[1.0]]])


def test_fair_coin_two_states():
    res = baum_welch_fit(fair_coin(10_000, 1), TrainingConfig(2, max_iterations=50, seed=0))
    assert abs(res.bits_per_symbol + 1) < 0.05


def test_one_state_coin_estimates():
    m = baum_welch_train(fair_coin(10_000, 2), TrainingConfig(1))
    assert abs(m.transitions[0, 0, 0] - 0.5) < 0.02
    assert abs(m.transitions[1, 0, 0] - 0.5) < 0.02


def test_likelihood_monotone_and_deterministic(b2):
    seqs = sample_hmm(b2, 400, 3, n_sequences=5)
    cfg = TrainingConfig(3, max_iterations=40, tol=1e-10, seed=5)
    a = baum_welch_fit(seqs, cfg)
    b = baum_welch_fit(seqs, cfg)
    ll = a.log_likelihood
    assert all(y >= x - 1e-9 for x, y in zip(ll, ll[1:]))
    np.testing.assert_array_equal(a.model.transitions, b.model.transitions)


def test_trained_model_is_valid(b2):
    seqs = sample_hmm(b2, 500, 4, n_sequences=2)
    m = baum_welch_train(seqs, TrainingConfig(2, max_iterations=30))
    assert isinstance(m, Hmm)
    np.testing.assert_allclose(m.transitions.sum(axis=(0, 1)), 1.0, atol=1e-12)


def test_config_validation():
    with pytest.raises(InputError):
        TrainingConfig(0)
    with pytest.raises(InputError):
        TrainingConfig(2, init="zeros")


def test_kmeans_single_cluster_is_mean():
    X = np.random.default_rng(0).normal(size=(50, 3))
    codebook, labels = kmeans_quantize(X, 1)
    np.testing.assert_allclose(codebook[0], X.mean(axis=0), atol=1e-12)
    assert set(labels) == {0}


def test_kmeans_separated_clouds_and_determinism():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.1, size=(40, 2)), rng.normal(100, 0.1, size=(40, 2))])
    _, labels = kmeans_quantize(X, 2, seed=3)
    assert len(set(labels[:40])) == 1 and len(set(labels[40:])) == 1 and labels[0] != labels[-1]
    _, again = kmeans_quantize(X, 2, seed=3)
    np.testing.assert_array_equal(labels, again)
    _, _, hist = kmeans_quantize(X, 2, seed=3, return_history=True)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_kmeans_too_many_clusters():
    with pytest.raises(DuplicateCentroidError):
        kmeans_quantize(np.zeros((5, 2)), 2)


def test_estimator_wrappers(b2):
    seqs = sample_hmm(b2, 300, 1, n_sequences=3)
    est = BaumWelchHMM(n_states=2, max_iter=20).fit(seqs)
    assert est.score(seqs) < 0
    X = np.random.default_rng(2).normal(size=(30, 2))
    vq = VectorQuantizer(n_clusters=4).fit(X)
    assert set(vq.predict(X)) <= {0, 1, 2, 3}
    assert vq.transform(X).shape == (30, 4)
