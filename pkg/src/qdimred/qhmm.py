"""Quantum hidden Markov models rebuilt from left-canonical iMPS tensors.

Kraus operators ``A^{(x,y)}`` are grouped by the observed symbol ``x`` into the
instrument ``E_x(rho) = sum_y A^{(x,y)} rho A^{(x,y)T}``. Vectorization is
row-major, ``vec(|i><j|) = e_i (x) e_j``, so that
``vec(A rho B) = (A (x) B^T) vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import GaugeError, InputError, SolverError, check_alphabet, encode_word
from .dilation import split_composite
from .imps import Imps
from .linalg import entropy_bits, leading_eigenpair, psd_eigh
from .models import LinearGenerator

__all__ = [
    "QhmmModel",
    "LiouvilleGenerators",
    "reconstruct_qhmm",
    "liouville_generators",
    "vec",
    "unvec",
    "check_vec_identity",
    "word_probability_q",
    "all_word_probabilities_q",
    "sample_sequence",
    "sample_blocks",
    "quantum_memory",
]

COMPLETENESS_TOL = 1e-9
EIG_CLAMP = 1e-14


def vec(M: np.ndarray) -> np.ndarray:
    return np.asarray(M).reshape(-1)


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape(d, d)


@dataclass(frozen=True, eq=False)
class QhmmModel:
    """Quantum instrument over alphabet ``X`` with its stationary memory state.

    Attributes
    ----------
    alphabet : tuple of str
        Observed symbols ``X``.
    kraus : tuple of ndarray
        ``kraus[i]`` has shape ``(k_i, D, D)``: the Kraus family of symbol ``alphabet[i]``.
    rho_star : ndarray
        Stationary memory state ``(D, D)``, symmetric PSD with unit trace.
    """

    alphabet: tuple[str, ...]
    kraus: tuple[np.ndarray, ...]
    rho_star: np.ndarray

    def __post_init__(self):
        kraus = tuple(np.array(K, dtype=float) for K in self.kraus)
        object.__setattr__(self, "alphabet", check_alphabet(self.alphabet, len(kraus)))
        if not kraus:
            raise InputError("a QHMM needs at least one symbol")
        D = kraus[0].shape[-1]
        for K in kraus:
            if K.ndim != 3 or K.shape[1:] != (D, D):
                raise InputError("each Kraus family must have shape (k, D, D) with a common D")
            K.setflags(write=False)
        object.__setattr__(self, "kraus", kraus)
        err = self.completeness_error()
        if err > COMPLETENESS_TOL:
            raise GaugeError(f"Kraus operators violate sum A^T A = I by {err:.3g}; re-canonicalize first")
        rho = np.array(self.rho_star, dtype=float)
        if rho.shape != (D, D):
            raise InputError(f"rho_star must be {D} x {D}")
        if np.max(np.abs(rho - rho.T)) > 1e-12:
            raise InputError("rho_star must be symmetric")
        if abs(np.trace(rho) - 1.0) > 1e-12:
            raise InputError(f"rho_star has trace {np.trace(rho)!r}, expected 1")
        if np.linalg.eigvalsh(rho)[0] < -1e-12:
            raise InputError("rho_star is not positive semidefinite")
        fix = float(np.linalg.norm(self.channel(rho) - rho))
        if fix > 1e-10:
            raise InputError(f"rho_star is not fixed by the channel (residual {fix:.3g})")
        rho.setflags(write=False)
        object.__setattr__(self, "rho_star", rho)

    @property
    def bond_dim(self) -> int:
        return self.kraus[0].shape[-1]

    @property
    def num_symbols(self) -> int:
        return len(self.kraus)

    def completeness_error(self) -> float:
        S = sum(np.einsum("kji,kjl->il", K, K) for K in self.kraus)
        return float(np.linalg.norm(S - np.eye(self.bond_dim)))

    @cached_property
    def effects(self) -> np.ndarray:
        """POVM elements ``F_x = sum_y A^T A`` with ``Tr E_x(rho) = <F_x, rho>``."""
        return np.stack([np.einsum("kji,kjl->il", K, K) for K in self.kraus])

    def apply(self, x: int, rho: np.ndarray) -> np.ndarray:
        """Unnormalized conditional update ``E_x(rho)``."""
        K = self.kraus[x]
        return np.einsum("kij,jl,kml->im", K, rho, K)

    def channel(self, rho: np.ndarray) -> np.ndarray:
        """Unconditional channel ``sum_x E_x(rho)``."""
        return sum(self.apply(x, rho) for x in range(self.num_symbols))

    def generator(self) -> LinearGenerator:
        """Liouville-space linear generator over ``X``."""
        return liouville_generators(self).as_generator(self.alphabet)


def _stationary_state(kraus_all: np.ndarray) -> np.ndarray:
    D = kraus_all.shape[1]

    def chan(X):
        P = np.matmul(kraus_all, X)
        return np.einsum("kij,klj->il", P, kraus_all)

    res = leading_eigenpair(chan, (D, D))
    if res.nonreal or abs(res.modulus - 1.0) > 1e-8:
        raise SolverError("unconditional channel has no unit fixed point",
                          {"eigenvalue": res.value, "residual": res.residual})
    rho = 0.5 * (res.vector + res.vector.T)
    if np.trace(rho) < 0:
        rho = -rho
    lam, U = psd_eigh(rho, clamp=0.0)
    rho = (U * lam) @ U.T
    rho = 0.5 * (rho + rho.T)
    return rho / np.trace(rho)


def reconstruct_qhmm(t, aux_alphabet=None) -> QhmmModel:
    """Group the Kraus operators of a left-canonical composite iMPS by observed symbol.

    Parameters
    ----------
    t : TruncationResult or Imps
        Tensors over composite labels ``"x|y"`` with ``sum A^T A = I``.
    aux_alphabet : sequence, optional
        Allowed auxiliary labels ``y``; every composite label must use one of them.

    Returns
    -------
    QhmmModel

    Raises
    ------
    GaugeError
        If the completeness relation is violated by more than ``1e-9``.
    """
    m: Imps = getattr(t, "imps", t)
    A = m.tensors
    err = m.completeness_error("left")
    if err > COMPLETENESS_TOL:
        raise GaugeError(f"tensors are not left-canonical (completeness error {err:.3g})")
    allowed = None if aux_alphabet is None else {int(y) for y in aux_alphabet}
    groups: dict[str, list[int]] = {}
    for i, label in enumerate(m.alphabet):
        x, y = split_composite(label)
        if allowed is not None and y not in allowed:
            raise InputError(f"auxiliary label {y} of {label!r} is outside the given alphabet")
        groups.setdefault(x, []).append(i)
    alphabet = tuple(groups)
    kraus = tuple(A[idx] for idx in groups.values())
    return QhmmModel(alphabet, kraus, _stationary_state(A))


def check_vec_identity(n_trials: int = 10, dim: int = 3, seed: int = 0, atol: float = 1e-12) -> float:
    """Verify ``vec(A rho B) = (A (x) B^T) vec(rho)`` on random triples; returns the worst error."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        A, rho, B = rng.standard_normal((3, dim, dim))
        lhs = vec(A @ rho @ B)
        rhs = np.kron(A, B.T) @ vec(rho)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    if worst > atol:
        raise SolverError("vectorization identity failed", {"max_error": worst})
    return worst


@dataclass(frozen=True, eq=False)
class LiouvilleGenerators:
    """``G[x] = sum_y A (x) A`` acting on ``vec(rho)``, with ``vec(rho_star)`` and ``omega = vec(I)``."""

    G: np.ndarray
    rho_vec: np.ndarray
    omega: np.ndarray

    def as_generator(self, alphabet) -> LinearGenerator:
        return LinearGenerator(tuple(alphabet), self.G, self.rho_vec, self.omega)


def liouville_generators(q: QhmmModel) -> LiouvilleGenerators:
    """Liouville-space generators of ``q`` (runs the vectorization self-test first)."""
    check_vec_identity()
    D = q.bond_dim
    G = np.stack([np.einsum("kij,klm->iljm", K, K).reshape(D * D, D * D) for K in q.kraus])
    return LiouvilleGenerators(G, vec(q.rho_star).copy(), vec(np.eye(D)).copy())


def word_probability_q(q: QhmmModel, word) -> float:
    """``Tr(E_{x_L} o ... o E_{x_1}(rho_star))`` by direct channel iteration."""
    rho = q.rho_star
    for x in encode_word(word, q.alphabet):
        rho = q.apply(int(x), rho)
    return float(np.trace(rho))


def all_word_probabilities_q(q: QhmmModel, length: int) -> np.ndarray:
    """Probabilities of all ``|X|^length`` words (first symbol most significant)."""
    rhos = q.rho_star[None]
    for _ in range(length):
        rhos = np.stack([np.stack([q.apply(x, r) for x in range(q.num_symbols)]) for r in rhos])
        rhos = rhos.reshape(-1, q.bond_dim, q.bond_dim)
    return np.trace(rhos, axis1=1, axis2=2).copy()


def _padded_kraus(q: QhmmModel) -> np.ndarray:
    kmax = max(K.shape[0] for K in q.kraus)
    out = np.zeros((q.num_symbols, kmax, q.bond_dim, q.bond_dim))
    for x, K in enumerate(q.kraus):
        out[x, : K.shape[0]] = K
    return out


def _draw(probs: np.ndarray, u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    total = probs.sum(axis=1)
    if np.any(~(total > 1e-300)):
        bad = int(np.flatnonzero(~(total > 1e-300))[0])
        raise SolverError("outcome probabilities vanished during sampling",
                          {"probabilities": probs[bad].tolist(), "state": rho[bad].tolist()})
    cdf = np.cumsum(np.clip(probs, 0.0, None), axis=1)
    cdf /= cdf[:, -1:]
    return np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def sample_blocks(q: QhmmModel, n_blocks: int, length: int, seed) -> np.ndarray:
    """Sample ``n_blocks`` independent length-``length`` blocks, each started from ``rho_star``.

    Returns an integer array ``(n_blocks, length)`` of symbol indices.
    """
    if n_blocks < 0 or length < 0:
        raise InputError("n_blocks and length must be non-negative")
    rng = np.random.default_rng(seed)
    K = _padded_kraus(q)
    F = q.effects
    rho = np.broadcast_to(q.rho_star, (n_blocks, q.bond_dim, q.bond_dim)).copy()
    out = np.empty((n_blocks, length), dtype=np.int64)
    for t in range(length):
        probs = np.einsum("xij,bij->bx", F, rho)
        xs = _draw(probs, rng.random(n_blocks), rho)
        out[:, t] = xs
        Kx = K[xs]
        rho = np.einsum("bkij,bjl,bkml->bim", Kx, rho, Kx)
        rho /= np.trace(rho, axis1=1, axis2=2)[:, None, None]
    return out


def sample_sequence(q: QhmmModel, length: int, seed) -> list[str]:
    """Sample one sequence from the stationary instrument ``q``.

    At each step ``x`` is drawn with probability ``Tr E_x(rho)`` and the state
    becomes ``E_x(rho) / Tr E_x(rho)``; the chain starts from ``rho_star``.
    """
    if length < 0:
        raise InputError("length must be non-negative")
    rng = np.random.default_rng(seed)
    F = q.effects
    rho = q.rho_star.copy()
    u = rng.random(length)
    idx = np.empty(length, dtype=np.int64)
    for t in range(length):
        probs = np.einsum("xij,ij->x", F, rho)[None]
        x = int(_draw(probs, u[t : t + 1], rho[None])[0])
        idx[t] = x
        rho = q.apply(x, rho)
        rho = rho / np.trace(rho)
    return [q.alphabet[i] for i in idx]


def quantum_memory(q: QhmmModel) -> float:
    """Von Neumann entropy of ``rho_star`` in bits."""
    mu = np.linalg.eigvalsh(q.rho_star)
    mu = np.where(mu > EIG_CLAMP, mu, 0.0)
    return entropy_bits(mu / mu.sum())
