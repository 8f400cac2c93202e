"""Distances between stationary processes given as linear generators.

The co-emission divergence rate compares the leading eigenvalues of the
product transfer maps

    E_P(X)  = sum_x L^x X L^xT,
    E_Q(X)  = sum_x M^x X M^xT,
    E_PQ(X) = sum_x L^x X M^xT,

applied matrix-free. Finite-length Bhattacharyya rates are computed by
exhaustive enumeration of words.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import InputError
from .dilation import split_composite
from .imps import Imps, canonical_form, spectrum_diagnostics
from .linalg import leading_eigenpair
from .models import Hmm, LinearGenerator

__all__ = [
    "CdrResult",
    "CfdrResult",
    "BoundCertificate",
    "DataProcessingReport",
    "cdr",
    "cfdr_finite_L",
    "bhattacharyya",
    "certify_bounds",
    "data_processing_check",
]

# exhaustive enumeration budget (|X| <= 4 at L = 10)
WORD_BUDGET = 4 ** 10
_CHUNK = 1 << 21


def _as_generator(g) -> LinearGenerator:
    return g.generator() if isinstance(g, Hmm) else g


@dataclass(frozen=True)
class CdrResult:
    """Co-emission divergence rate ``-1/2 log2(mu_PQ / sqrt(mu_P mu_Q))`` in bits per symbol."""

    rate: float
    mu_p: float
    mu_q: float
    mu_pq: float
    nonreal: bool = False

    @property
    def negative(self) -> bool:
        """True when the rate is below ``-1e-10`` (reported, never clipped)."""
        return self.rate < -1e-10


def _transfer(L: np.ndarray, M: np.ndarray):
    dl, dm = L.shape[1], M.shape[1]
    Mt = np.ascontiguousarray(M.transpose(0, 2, 1))

    def apply(X):
        P = np.matmul(L, X)  # (n, dl, dm)
        return np.matmul(P, Mt).sum(axis=0)

    return apply, (dl, dm)


def cdr(p, q, *, method: str = "auto") -> CdrResult:
    """Co-emission divergence rate between two generators over the same alphabet.

    Parameters
    ----------
    p, q : LinearGenerator or Hmm
        Stationary generators; HMMs are converted with their stationary start.
    method : str
        Eigen-solver backend passed to :func:`~qdimred.linalg.leading_eigenpair`.

    Returns
    -------
    CdrResult
    """
    p, q = _as_generator(p), _as_generator(q)
    if tuple(p.alphabet) != tuple(q.alphabet):
        raise InputError(f"alphabets differ: {p.alphabet} vs {q.alphabet}")
    L, M = p.generators, q.generators

    def mu(A, B, start):
        apply, shape = _transfer(A, B)
        return leading_eigenpair(apply, shape, start=start, method=method)

    rp = mu(L, L, np.outer(p.init, p.init))
    if q is p:
        rq = rpq = rp
    else:
        rq = mu(M, M, np.outer(q.init, q.init))
        rpq = mu(L, M, np.outer(p.init, q.init))
    nonreal = rp.nonreal or rq.nonreal or rpq.nonreal
    mu_p, mu_q, mu_pq = rp.modulus, rq.modulus, rpq.modulus
    if mu_pq == 0.0:
        rate = math.inf
    else:
        rate = -0.5 * math.log2(mu_pq / math.sqrt(mu_p * mu_q))
    return CdrResult(rate, mu_p, mu_q, mu_pq, nonreal)


def _word_probability_chunks(g: LinearGenerator, length: int):
    """Yield word probabilities of ``length`` in lexicographic chunks, bounding memory."""
    n, dim = len(g.alphabet), g.dim
    tail = length
    while tail > 0 and (n ** tail) * dim > _CHUNK:
        tail -= 1
    head = length - tail
    prefixes = g.init[None, :]
    for _ in range(head):
        prefixes = np.einsum("xij,wj->wxi", g.generators, prefixes).reshape(-1, dim)
    for v in prefixes:
        states = v[None, :]
        for _ in range(tail):
            states = np.einsum("xij,wj->wxi", g.generators, states).reshape(-1, dim)
        yield states @ g.readout


def bhattacharyya(p, q, length: int) -> float:
    """``sum_w sqrt(P(w) Q(w))`` over all words of ``length`` (negative rounding clipped to 0)."""
    p, q = _as_generator(p), _as_generator(q)
    if tuple(p.alphabet) != tuple(q.alphabet):
        raise InputError(f"alphabets differ: {p.alphabet} vs {q.alphabet}")
    if len(p.alphabet) ** length > WORD_BUDGET:
        raise InputError(f"|X|^L = {len(p.alphabet)}^{length} exceeds the enumeration budget "
                         f"{WORD_BUDGET}; use a smaller L")
    if length == 0:
        return 1.0
    total = 0.0
    for a, b in zip(_word_probability_chunks(p, length), _word_probability_chunks(q, length)):
        total += float(np.sum(np.sqrt(np.clip(a, 0.0, None) * np.clip(b, 0.0, None))))
    return total


@dataclass(frozen=True)
class CfdrResult:
    """Finite-length classical fidelity rates ``-1/(2L) log2 BC_L`` for ``L = 1..L_max``."""

    lengths: tuple[int, ...]
    coefficients: tuple[float, ...]
    rates: tuple[float, ...]

    @property
    def rate(self) -> float:
        """Estimate at the largest length (never extrapolated)."""
        return self.rates[-1]


def _rate(bc: float, L: int) -> float:
    if bc <= 0:
        return math.inf
    return -math.log2(bc) / (2 * L)


def cfdr_finite_L(p, q, L: int) -> CfdrResult:
    """Bhattacharyya divergence rates for every length ``1..L`` by exhaustive enumeration."""
    if L < 1:
        raise InputError("L must be at least 1")
    p, q = _as_generator(p), _as_generator(q)
    if len(p.alphabet) ** L > WORD_BUDGET:
        raise InputError(f"|X|^L = {len(p.alphabet)}^{L} exceeds the enumeration budget {WORD_BUDGET}; "
                         f"use a smaller L")
    lengths = tuple(range(1, L + 1))
    bcs = tuple(bhattacharyya(p, q, k) for k in lengths)
    rates = tuple(0.0 if p is q else _rate(bc, k) for bc, k in zip(bcs, lengths))
    return CfdrResult(lengths, bcs, rates)


@dataclass(frozen=True)
class BoundCertificate:
    """Tail-weight and slice-rank checks on a Schmidt spectrum at cut ``d_tilde``.

    ``entropy_bound`` is ``H / log2 d_tilde`` and ``rank_bound`` is
    ``log2(rank K) / log2 d_tilde``; the latter is reported up to an
    unspecified constant factor and not used as a pass/fail test.
    """

    d_tilde: int
    tail: float
    entropy: float
    rank: int
    entropy_bound: float
    rank_bound: float
    tail_ok: bool
    entropy_rank_ok: bool

    @property
    def passed(self) -> bool:
        return self.tail_ok and self.entropy_rank_ok


def certify_bounds(m: Imps, d_tilde: int, schmidt=None, *, slack: float = 1e-12) -> BoundCertificate:
    """Evaluate the entropy/tail and entropy/rank inequalities for a q-sample iMPS.

    Parameters
    ----------
    m : Imps
        Dilated q-sample (any gauge).
    d_tilde : int
        Cut position, at least 2.
    schmidt : array_like, optional
        Precomputed Schmidt spectrum; computed from ``m`` when omitted.
    """
    if d_tilde < 2:
        raise InputError("bound certificates need d_tilde >= 2 (log2 1 = 0)")
    if schmidt is None:
        _, _, schmidt = canonical_form(m)
    diag = spectrum_diagnostics(schmidt, d_tilde, m)
    log_d = math.log2(d_tilde)
    H = diag.entropy
    K = diag.slice_rank
    ent_bound = H / log_d
    rank_bound = math.log2(K) / log_d if K > 0 else 0.0
    return BoundCertificate(
        d_tilde=d_tilde,
        tail=diag.tail,
        entropy=H,
        rank=K,
        entropy_bound=ent_bound,
        rank_bound=rank_bound,
        tail_ok=diag.tail <= ent_bound + slack,
        entropy_rank_ok=H <= (math.log2(K) if K > 0 else 0.0) + slack,
    )


@dataclass(frozen=True)
class DataProcessingReport:
    lengths: tuple[int, ...]
    bc_x: tuple[float, ...]
    bc_xy: tuple[float, ...]
    holds: tuple[bool, ...]

    @property
    def rates_x(self) -> tuple[float, ...]:
        return tuple(_rate(b, L) for b, L in zip(self.bc_x, self.lengths))

    @property
    def rates_xy(self) -> tuple[float, ...]:
        return tuple(_rate(b, L) for b, L in zip(self.bc_xy, self.lengths))

    @property
    def passed(self) -> bool:
        return all(self.holds)


def _x_groups(alphabet) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, label in enumerate(alphabet):
        x, _ = split_composite(label)
        groups.setdefault(x, []).append(i)
    return groups


def data_processing_check(dp, dq, L_max: int = 5, atol: float = 1e-12) -> DataProcessingReport:
    """Check that marginalizing ``(x, y)`` onto ``x`` does not lower the Bhattacharyya coefficient.

    Parameters
    ----------
    dp, dq : LinearGenerator
        Generators over the same composite ``"x|y"`` alphabet.
    L_max : int
        Largest block length.
    atol : float
        Slack on ``BC_X >= BC_XY``.
    """
    dp, dq = _as_generator(dp), _as_generator(dq)
    if tuple(dp.alphabet) != tuple(dq.alphabet):
        raise InputError("both generators must share the composite alphabet")
    groups = _x_groups(dp.alphabet)
    px, qx = dp.marginalize(groups), dq.marginalize(groups)
    for g in (px, qx):
        s = float(np.sum(g.readout @ np.sum(g.generators, axis=0) @ g.init))
        if abs(s - 1.0) > 1e-9:
            raise InputError(f"X-marginal generator is not normalized (total {s!r})")
    lengths = tuple(range(1, L_max + 1))
    bx = tuple(bhattacharyya(px, qx, L) for L in lengths)
    bxy = tuple(bhattacharyya(dp, dq, L) for L in lengths)
    holds = tuple(a >= b - atol for a, b in zip(bx, bxy))
    return DataProcessingReport(lengths, bx, bxy, holds)
