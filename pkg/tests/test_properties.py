import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from qdimred.dilation import dilate, make_labelling, verify_dilation
from qdimred.divergence import cdr, cfdr_finite_L
from qdimred.imps import all_block_probabilities, canonical_form, qsample_tensors, transfer_eig
from qdimred.io import dumps, hmm_from_dict, hmm_to_dict
from qdimred.models import all_word_probabilities, bernoulli_hmm, build_tns, random_hmm
from qdimred.qhmm import all_word_probabilities_q, reconstruct_qhmm
from qdimred.truncation import fidelity_per_site

from conftest import bernoulli_cdr_closed_form

FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])

models = st.builds(
    lambda n, k, seed: random_hmm(n, k, rng=seed),
    st.integers(1, 5), st.integers(2, 3), st.integers(0, 10_000),
)
strategies = st.sampled_from(["sequential", "probability-ascending", "probability-descending", "random:1"])
probs = st.floats(0.02, 0.98)


@FAST
@given(models, st.integers(1, 4))
def test_word_probabilities_sum_to_one(m, L):
    assert abs(all_word_probabilities(m, L).sum() - 1) < 1e-9


@FAST
@given(models, strategies)
def test_dilation_always_verifies(m, strategy):
    rep = verify_dilation(dilate(m, make_labelling(m, strategy)), max_word_len=3)
    assert rep.passed


@FAST
@given(models, strategies)
def test_qsample_transfer_and_lossless_reconstruction(m, strategy):
    q = qsample_tensors(dilate(m, make_labelling(m, strategy)))
    assert abs(transfer_eig(q).eta - 1) < 1e-10
    left, _, lam = canonical_form(q)
    assert abs(np.sum(lam) - 1) < 1e-10 and np.all(lam >= 0)
    rec = reconstruct_qhmm(left)
    for L in (1, 2, 3):
        np.testing.assert_allclose(all_word_probabilities_q(rec, L), all_word_probabilities(m, L), atol=1e-10)
        np.testing.assert_allclose(all_block_probabilities(left, None, L).sum(), 1.0, atol=1e-9)


@FAST
@given(models, models)
def test_cdr_symmetric_and_nonnegative(a, b):
    if a.num_symbols != b.num_symbols:
        b = random_hmm(b.num_states, a.num_symbols, rng=b.num_states)
    ab = cdr(a.generator(), b.generator())
    ba = cdr(b.generator(), a.generator())
    assert ab.rate == ba.rate or abs(ab.rate - ba.rate) < 1e-10
    assert ab.rate >= -1e-10
    assert not cdr(a.generator(), a.generator()).nonreal


@FAST
@given(probs, probs)
def test_bernoulli_cdr_matches_closed_form(p, q):
    assert abs(cdr(bernoulli_hmm(p).generator(), bernoulli_hmm(q).generator()).rate
               - bernoulli_cdr_closed_form(p, q)) < 1e-12


@FAST
@given(models, st.integers(1, 3))
def test_cfdr_self_zero(m, L):
    g = m.generator()
    assert all(r == 0.0 for r in cfdr_finite_L(g, g, L).rates)


@FAST
@given(st.integers(2, 8), probs, probs)
def test_fidelity_symmetric(N, p, q):
    a = qsample_tensors(dilate(build_tns(N, p), make_labelling(build_tns(N, p))))
    b = qsample_tensors(dilate(build_tns(N, q), make_labelling(build_tns(N, q))))
    fab, fba = fidelity_per_site(a, b), fidelity_per_site(b, a)
    assert abs(fab - fba) < 1e-10 and fab <= 1 + 1e-12
    assert abs(fidelity_per_site(a, a) - 1) < 1e-12


@FAST
@given(models)
def test_hmm_json_round_trip(m):
    text = dumps(hmm_to_dict(m))
    back = hmm_from_dict(__import__("json").loads(text))
    np.testing.assert_array_equal(back.transitions, m.transitions)
    assert dumps(hmm_to_dict(back)) == text


@FAST
@given(st.integers(2, 12), probs)
def test_tns_stationary_uniform(N, p):
    m = build_tns(N, p)
    assert np.max(np.abs(m.stationary - 1 / N)) < 1e-12
    assert math.isclose(m.transitions.sum(), N, rel_tol=1e-12)
