import math

import numpy as np
import pytest

from qdimred import InputError
from qdimred.dilation import dilate, make_labelling
from qdimred.divergence import bhattacharyya, cdr, certify_bounds, cfdr_finite_L, data_processing_check
from qdimred.imps import Imps, canonical_form, qsample_tensors
from qdimred.models import Hmm, bernoulli_hmm, build_tns, random_hmm

from conftest import (
    bernoulli_bc_bruteforce,
    bernoulli_cdr_closed_form,
    collision_bruteforce,
)


def test_self_rate_is_zero(b2):
    res = cdr(b2.generator(), b2.generator())
    assert abs(res.rate) < 1e-10 and not res.nonreal and not res.negative


@pytest.mark.parametrize("p,q", [(0.2, 0.7), (0.5, 0.9), (0.1, 0.15)])
def test_bernoulli_closed_form(p, q):
    P, Q = bernoulli_hmm(p).generator(), bernoulli_hmm(q).generator()
    assert cdr(P, Q).rate == pytest.approx(bernoulli_cdr_closed_form(p, q), abs=1e-12)


def test_closed_form_against_enumeration():
    # for i.i.d. sources mu_PQ^L equals the length-L collision sum
    p, q, L = 0.3, 0.8, 8
    r = -0.5 * math.log2(
        collision_bruteforce(p, q, L) / math.sqrt(collision_bruteforce(p, p, L) * collision_bruteforce(q, q, L))
    ) / L
    assert r == pytest.approx(bernoulli_cdr_closed_form(p, q), abs=1e-12)


def test_symmetry():
    a, b = random_hmm(3, 2, rng=1), random_hmm(4, 2, rng=2)
    ab = cdr(a.generator(), b.generator()).rate
    ba = cdr(b.generator(), a.generator()).rate
    assert abs(ab - ba) < 1e-10 and ab >= -1e-10


def test_alphabet_mismatch_rejected():
    with pytest.raises(InputError):
        cdr(bernoulli_hmm(0.3).generator(), Hmm(("a", "b"), [[[0.5]], [[0.5]]]).generator())


@pytest.mark.parametrize("L", [1, 3, 6])
def test_cfdr_bernoulli(L):
    p, q = 0.25, 0.6
    res = cfdr_finite_L(bernoulli_hmm(p).generator(), bernoulli_hmm(q).generator(), L)
    ref = -0.5 * math.log2(math.sqrt(p * q) + math.sqrt((1 - p) * (1 - q)))
    np.testing.assert_allclose(res.rates, ref, atol=1e-12)
    assert res.coefficients[-1] == pytest.approx(bernoulli_bc_bruteforce(p, q, L), abs=1e-12)
    assert res.rate == res.rates[-1]


def test_cfdr_self_is_exactly_zero(b2):
    g = b2.generator()
    assert cfdr_finite_L(g, g, 4).rates == (0.0,) * 4


def test_bhattacharyya_of_identical_models_is_one(b2):
    assert bhattacharyya(b2.generator(), b2_copy(b2).generator(), 3) == pytest.approx(1.0, abs=1e-12)


def b2_copy(m):
    return Hmm(m.alphabet, m.transitions.copy())


def test_certificate_examples():
    m = qsample_tensors(dilate(bernoulli_hmm(0.4), make_labelling(bernoulli_hmm(0.4))))
    cert = certify_bounds(m, 2)
    assert cert.tail == 0 and cert.entropy == 0 and cert.passed
    tns = qsample_tensors(dilate(build_tns(4, 0.3), make_labelling(build_tns(4, 0.3))))
    cert = certify_bounds(tns, 2, schmidt=[0.5, 0.25, 0.125, 0.125])
    assert cert.tail == 0.25 and cert.entropy_bound == pytest.approx(1.75)
    assert cert.tail_ok
    with pytest.raises(InputError):
        certify_bounds(tns, 1)


@pytest.mark.parametrize("N,p", [(5, 0.2), (8, 0.5), (10, 0.8)])
def test_certificates_hold_on_tns(N, p):
    m = qsample_tensors(dilate(build_tns(N, p), make_labelling(build_tns(N, p))))
    _, _, lam = canonical_form(m)
    for d in range(2, N + 1):
        assert certify_bounds(m, d, lam).passed


def test_data_processing_identical_and_relabelled():
    model = build_tns(5, 0.4)
    a = dilate(model, make_labelling(model, "sequential")).generator()
    b = dilate(model, make_labelling(model, "random:3")).generator()
    same = data_processing_check(a, a, 3)
    np.testing.assert_allclose(same.bc_x, 1.0, atol=1e-12)
    np.testing.assert_allclose(same.bc_xy, 1.0, atol=1e-12)
    rel = data_processing_check(a, b, 4)
    np.testing.assert_allclose(rel.rates_x, 0.0, atol=1e-12)
    assert all(r >= -1e-12 for r in rel.rates_xy) and rel.passed


def test_data_processing_random_pair():
    m1, m2 = build_tns(4, 0.3), build_tns(4, 0.7)
    rep = data_processing_check(dilate(m1, make_labelling(m1)).generator(),
                                dilate(m2, make_labelling(m2)).generator(), 5)
    assert rep.passed
    assert all(x <= xy + 1e-12 for x, xy in zip(rep.rates_x, rep.rates_xy))


def test_imps_cdr_accepts_generators_only():
    with pytest.raises((InputError, TypeError)):
        cdr(Imps(("a",), np.ones((1, 1, 1))), bernoulli_hmm(0.5).generator())
