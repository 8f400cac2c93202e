import math

import numpy as np
import pytest

from qdimred import InputError
from qdimred.dilation import dilate, make_labelling
from qdimred.divergence import cdr
from qdimred.imps import canonical_form, qsample_tensors
from qdimred.models import bernoulli_hmm, build_tns
from qdimred.qhmm import reconstruct_qhmm
from qdimred.truncation import (
    TruncationOptions,
    fidelity_per_site,
    pad_tensors,
    variational_truncate,
)


def qsample(model):
    return qsample_tensors(dilate(model, make_labelling(model)))


def test_options_validation():
    with pytest.raises(InputError):
        TruncationOptions(0)
    with pytest.raises(InputError):
        TruncationOptions(2, tol=0)
    with pytest.raises(InputError):
        TruncationOptions(2, init="svd")


def test_self_fidelity(b2):
    m = qsample(b2)
    assert fidelity_per_site(m, m) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p,q", [(0.5, 0.5), (0.2, 0.7), (0.9, 0.4)])
def test_bernoulli_fidelity_closed_form(p, q):
    a, b = qsample(bernoulli_hmm(p)), qsample(bernoulli_hmm(q))
    ref = math.sqrt(p * q) + math.sqrt((1 - p) * (1 - q))
    assert fidelity_per_site(a, b) == pytest.approx(ref, abs=1e-12)
    assert fidelity_per_site(b, a) == pytest.approx(ref, abs=1e-12)


def test_bernoulli_bond_one_is_exact():
    res = variational_truncate(qsample(bernoulli_hmm(0.3)), 1)
    assert res.fidelity == 1.0 or abs(res.fidelity - 1) < 1e-15


@pytest.mark.parametrize("N", [3, 4])
def test_full_bond_is_lossless(N):
    model = build_tns(N, 0.6)
    m = qsample(model)
    res = variational_truncate(m, N)
    assert abs(res.fidelity - 1) < 1e-10
    q = reconstruct_qhmm(res)
    assert cdr(model.generator(), q.generator()).rate <= 1e-8


def test_truncated_result_is_left_canonical_and_bounded():
    m = qsample(build_tns(6, 0.4))
    res = variational_truncate(m, TruncationOptions(3, restarts=2, seed=1))
    assert res.imps.completeness_error("left") < 1e-10
    assert res.right.completeness_error("right") < 1e-10
    assert res.fidelity <= 1 + 1e-12
    assert len(res.candidates) == 2
    assert res.fidelity == max(c.fidelity for c in res.candidates)
    # the fidelity reported is the overlap with the original
    assert abs(fidelity_per_site(m, res.imps) - res.fidelity) < 1e-9


def test_polish_never_worse_than_schmidt_projection():
    m = qsample(build_tns(8, 0.3))
    first = variational_truncate(m, TruncationOptions(3, restarts=1, max_sweeps=1))
    full = variational_truncate(m, TruncationOptions(3, restarts=1))
    assert full.fidelity >= first.fidelity - 1e-12
    assert all(b >= a - 1e-12 for a, b in zip(full.history, full.history[1:]))


def test_fidelity_non_decreasing_in_bond_dim():
    m = qsample(build_tns(8, 0.2))
    fids = []
    prev = None
    for D in range(1, 9):
        res = variational_truncate(m, TruncationOptions(D, restarts=3, seed=D),
                                   initial=None if prev is None else [prev.imps])
        fids.append(res.fidelity)
        prev = res
    assert all(b >= a - 1e-12 for a, b in zip(fids, fids[1:]))
    assert abs(fids[-1] - 1) < 1e-10


def test_warm_start_is_padded():
    m = qsample(build_tns(5, 0.5))
    small = variational_truncate(m, 2)
    big = variational_truncate(m, TruncationOptions(3, restarts=1), initial=small.imps)
    assert len(big.candidates) == 3 and big.bond_dim == 3
    carried = big.candidates[-1]
    assert carried.sweeps == 0 and carried.imps.bond_dim == 2
    assert abs(carried.fidelity - small.fidelity) < 1e-10
    assert big.fidelity >= carried.fidelity - 1e-12
    A = pad_tensors(small.imps.tensors, 3, np.random.default_rng(0))
    assert A.shape == (m.num_symbols, 3, 3)


def test_seeded_restarts_are_reproducible():
    m = qsample(build_tns(6, 0.8))
    a = variational_truncate(m, TruncationOptions(2, restarts=3, seed=4))
    b = variational_truncate(m, TruncationOptions(2, restarts=3, seed=4))
    np.testing.assert_array_equal(a.imps.tensors, b.imps.tensors)
    assert a.restart == b.restart


def test_fidelity_rate():
    m = qsample(build_tns(4, 0.5))
    res = variational_truncate(m, 1)
    assert res.fidelity_rate == pytest.approx(-math.log2(res.fidelity))
    _, _, lam = canonical_form(m)
    assert res.imps.schmidt.tolist() == [1.0]
    assert lam.size == 4
