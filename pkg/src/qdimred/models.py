"""Classical edge-emitting hidden Markov models and generic linear word generators.

Conventions
-----------
``T[x, s', s] = Pr(S_{t+1} = s', X_t = x | S_t = s)``: rows index the next state,
columns the current one. A word ``x_1 ... x_L`` acts by left multiplication in
time order, ``Pr(w) = 1 . T^{x_L} ... T^{x_1} pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

from ._validation import (
    ErgodicityError,
    InputError,
    SolverError,
    check_alphabet,
    check_probability_tensor,
    encode_word,
)
from .linalg import entropy_bits

__all__ = [
    "Hmm",
    "LinearGenerator",
    "BranchingProfile",
    "is_ergodic",
    "stationary_distribution",
    "word_probability",
    "all_word_probabilities",
    "branching_profile",
    "build_tns",
    "bernoulli_hmm",
    "stationary_state_entropy",
    "random_hmm",
    "random_unifilar_hmm",
    "sample_hmm",
    "planted_ring_hmm",
]


def _support_period(adj: np.ndarray) -> int:
    """Period of an irreducible directed graph given as a boolean adjacency ``adj[i, j]`` (i -> j)."""
    n = adj.shape[0]
    order, _ = breadth_first_order(adj.astype(np.int8), 0, directed=True, return_predecessors=True)
    level = np.full(n, -1)
    level[0] = 0
    for u in order:
        for v in np.flatnonzero(adj[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
    g = 0
    for u, v in zip(*np.nonzero(adj)):
        g = math.gcd(g, int(level[u] + 1 - level[v]))
    return abs(g)


def is_ergodic(P: np.ndarray) -> tuple[bool, str]:
    """Check irreducibility and aperiodicity of a column-stochastic chain ``P[s', s]``.

    Returns ``(ok, reason)``.
    """
    adj = (np.asarray(P) > 0).T  # adj[s, s'] : s -> s'
    n_comp, _ = connected_components(adj.astype(np.int8), directed=True, connection="strong")
    if n_comp != 1:
        return False, f"state chain is reducible ({n_comp} strongly connected components)"
    period = _support_period(adj)
    if period != 1:
        return False, f"state chain is periodic with period {period}"
    return True, ""


@dataclass(frozen=True, eq=False)
class Hmm:
    """Finite edge-emitting hidden Markov model.

    Parameters
    ----------
    alphabet : sequence of str
        Ordered symbol labels.
    transitions : array_like, shape (n_symbols, n_states, n_states)
        ``transitions[x, s', s]`` is the probability of emitting ``x`` and moving
        to ``s'`` from ``s``.
    check_ergodic : bool
        Reject inputs whose state chain is not irreducible and aperiodic.
    """

    alphabet: tuple[str, ...]
    transitions: np.ndarray
    check_ergodic: bool = field(default=True, repr=False)

    def __post_init__(self):
        T = check_probability_tensor(self.transitions)
        T.setflags(write=False)
        object.__setattr__(self, "transitions", T)
        object.__setattr__(self, "alphabet", check_alphabet(self.alphabet, T.shape[0]))
        if self.check_ergodic:
            ok, why = is_ergodic(T.sum(axis=0))
            if not ok:
                raise ErgodicityError(why)

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_symbols(self) -> int:
        return self.transitions.shape[0]

    @property
    def state_chain(self) -> np.ndarray:
        """Unconditional state transition matrix ``P = sum_x T^x``."""
        return self.transitions.sum(axis=0)

    def matrix(self, symbol) -> np.ndarray:
        return self.transitions[self.alphabet.index(str(symbol))]

    @cached_property
    def stationary(self) -> np.ndarray:
        return stationary_distribution(self)

    def generator(self) -> "LinearGenerator":
        return LinearGenerator.from_hmm(self)

    def is_unifilar(self) -> bool:
        return branching_profile(self).is_unifilar

    def __repr__(self):
        return f"Hmm(num_states={self.num_states}, alphabet={list(self.alphabet)})"


@dataclass(frozen=True, eq=False)
class LinearGenerator:
    """Finite-state linear word generator ``Pr(w) = readout . L^{x_L} ... L^{x_1} . init``.

    Covers classical HMMs (``readout`` all ones, ``init`` the stationary
    distribution) and Liouville-space quantum models (``readout`` the vectorized
    identity).
    """

    alphabet: tuple[str, ...]
    generators: np.ndarray
    init: np.ndarray
    readout: np.ndarray

    def __post_init__(self):
        G = np.array(self.generators, dtype=float)
        if G.ndim != 3 or G.shape[1] != G.shape[2]:
            raise InputError(f"generators must have shape (n_symbols, dim, dim); got {G.shape}")
        init = np.array(self.init, dtype=float).ravel()
        readout = np.array(self.readout, dtype=float).ravel()
        if init.shape[0] != G.shape[1] or readout.shape[0] != G.shape[1]:
            raise InputError("init and readout must have length dim")
        for arr in (G, init, readout):
            arr.setflags(write=False)
        object.__setattr__(self, "generators", G)
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "readout", readout)
        object.__setattr__(self, "alphabet", check_alphabet(self.alphabet, G.shape[0]))

    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    @classmethod
    def from_hmm(cls, model: Hmm) -> "LinearGenerator":
        return cls(model.alphabet, model.transitions, model.stationary, np.ones(model.num_states))

    def validate(self, max_len: int = 4, atol: float = 1e-9) -> None:
        """Check that words up to ``max_len`` have probabilities in [0, 1] summing to 1."""
        for L in range(1, max_len + 1):
            p = all_word_probabilities(self, L)
            if p.min() < -atol or p.max() > 1 + atol:
                raise InputError(f"word probabilities of length {L} leave [0, 1]")
            if abs(p.sum() - 1.0) > atol:
                raise InputError(f"length-{L} word probabilities sum to {p.sum()!r}")

    def marginalize(self, groups: dict[str, Sequence[int]]) -> "LinearGenerator":
        """Sum generators over symbol groups (e.g. composite ``x|y`` labels onto ``x``)."""
        labels = list(groups)
        G = np.stack([self.generators[list(groups[k])].sum(axis=0) for k in labels])
        return LinearGenerator(tuple(labels), G, self.init, self.readout)


def stationary_distribution(model: Hmm | np.ndarray) -> np.ndarray:
    """Stationary distribution of the state chain ``P = sum_x T^x``.

    Solves ``(P - I) pi = 0`` with ``sum(pi) = 1`` directly, then applies one
    step of iterative refinement.
    """
    P = model.state_chain if isinstance(model, Hmm) else np.asarray(model, dtype=float)
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    M = P - np.eye(n)
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(M, rhs)
        pi = pi + np.linalg.solve(M, rhs - M @ pi)
    except np.linalg.LinAlgError as exc:
        raise SolverError("stationary linear system is singular", {"n_states": n}) from exc
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    res = float(np.max(np.abs(P @ pi - pi)))
    if res > 1e-10:
        raise SolverError("stationary distribution did not converge", {"residual": res})
    return pi


def word_probability(gen: LinearGenerator | Hmm, word) -> float:
    """Probability of a word under a linear generator (or an HMM at stationarity)."""
    if isinstance(gen, Hmm):
        gen = gen.generator()
    idx = encode_word(word, gen.alphabet)
    v = gen.init
    for x in idx:
        v = gen.generators[x] @ v
    return float(gen.readout @ v)


def all_word_probabilities(gen: LinearGenerator | Hmm, length: int) -> np.ndarray:
    """Probabilities of every word of ``length``, flattened with the first symbol most significant."""
    if isinstance(gen, Hmm):
        gen = gen.generator()
    states = gen.init[None, :]
    for _ in range(length):
        # (words, dim) -> (words, symbols, dim)
        states = np.einsum("xij,wj->wxi", gen.generators, states).reshape(-1, gen.dim)
    return states @ gen.readout


@dataclass(frozen=True)
class BranchingProfile:
    """Successor counts ``k(s, x)`` of an HMM and the derived auxiliary alphabet size."""

    k: np.ndarray  # shape (n_symbols, n_states): k[x, s]
    d_y: int
    is_unifilar: bool


def branching_profile(model: Hmm) -> BranchingProfile:
    k = (model.transitions > 0).sum(axis=1)  # sum over s'
    d_y = max(int(k.max()), 1)
    return BranchingProfile(k=k, d_y=d_y, is_unifilar=bool(k.max() <= 1))


def stationary_state_entropy(model: Hmm) -> float:
    """Shannon entropy (bits) of the stationary state distribution of this presentation.

    Equals the statistical complexity only when ``model`` is the process's
    epsilon-machine.
    """
    return entropy_bits(model.stationary)


def bernoulli_hmm(q: float, alphabet=("0", "1")) -> Hmm:
    """Single-state i.i.d. source emitting the first symbol with probability ``q``."""
    return Hmm(alphabet, [[[q]], [[1.0 - q]]])


def build_tns(N: int, p: float) -> Hmm:
    """N-state tunable non-deterministic source on the ring ``0 .. N-1``.

    From state ``i < N-1``: emit ``1`` and stay with probability ``p``, or emit
    ``1`` and advance to ``i+1`` with probability ``1-p``. From ``N-1``: emit
    ``1`` and stay with probability ``p``, or emit ``0`` and return to ``0``
    with probability ``1-p``. ``N = 2`` is the simple non-deterministic source.
    Every state stays put with probability ``p``, so the stationary
    distribution is uniform.
    """
    if isinstance(N, bool) or int(N) != N or N < 2:
        raise InputError(f"TNS needs N >= 2; got {N!r}")
    if not 0.0 < p < 1.0:
        raise InputError(f"TNS needs 0 < p < 1; got {p!r}")
    N = int(N)
    T = np.zeros((2, N, N))
    for i in range(N):
        T[1, i, i] = p
        if i < N - 1:
            T[1, i + 1, i] = 1.0 - p
        else:
            T[0, 0, i] = 1.0 - p
    return Hmm(("0", "1"), T)


def random_hmm(
    n_states: int,
    n_symbols: int,
    rng: np.random.Generator | int | None = None,
    *,
    density: float = 0.6,
    max_tries: int = 1000,
) -> Hmm:
    """Random ergodic HMM with a random sparsity pattern (for tests and sweeps)."""
    rng = np.random.default_rng(rng)
    alphabet = tuple(str(i) for i in range(n_symbols))
    for _ in range(max_tries):
        mask = rng.random((n_symbols, n_states, n_states)) < density
        # guarantee every state has at least one outgoing edge
        for s in range(n_states):
            if not mask[:, :, s].any():
                mask[rng.integers(n_symbols), rng.integers(n_states), s] = True
        W = rng.random(mask.shape) * mask
        T = W / W.sum(axis=(0, 1), keepdims=True)
        ok, _ = is_ergodic(T.sum(axis=0))
        if ok:
            return Hmm(alphabet, T)
    raise InputError("could not draw an ergodic HMM; increase density")


def random_unifilar_hmm(
    n_states: int,
    n_symbols: int,
    rng: np.random.Generator | int | None = None,
    *,
    max_tries: int = 1000,
) -> Hmm:
    """Random ergodic unifilar HMM: each ``(s, x)`` has at most one successor."""
    rng = np.random.default_rng(rng)
    alphabet = tuple(str(i) for i in range(n_symbols))
    for _ in range(max_tries):
        T = np.zeros((n_symbols, n_states, n_states))
        for s in range(n_states):
            used = rng.random(n_symbols) < 0.8
            if not used.any():
                used[rng.integers(n_symbols)] = True
            probs = rng.dirichlet(np.ones(int(used.sum())))
            for x, pr in zip(np.flatnonzero(used), probs):
                T[x, rng.integers(n_states), s] = pr
        ok, _ = is_ergodic(T.sum(axis=0))
        if ok:
            return Hmm(alphabet, T)
    raise InputError("could not draw an ergodic unifilar HMM")


def sample_hmm(model: Hmm, length: int, rng: np.random.Generator | int | None = None,
               n_sequences: int | None = None) -> list[list[str]] | list[str]:
    """Draw symbol sequences from ``model`` started in its stationary distribution.

    Returns one sequence, or a list of ``n_sequences`` independent ones.
    Joint draws of ``(x, s')`` are made for all sequences at once.
    """
    rng = np.random.default_rng(rng)
    B = 1 if n_sequences is None else int(n_sequences)
    n_x, d = model.num_symbols, model.num_states
    # cumulative joint law of (x, s') for every current state, flattened as x * d + s'
    cdf = np.cumsum(model.transitions.transpose(2, 0, 1).reshape(d, n_x * d), axis=1)
    cdf /= cdf[:, -1:]
    state = rng.choice(d, size=B, p=model.stationary)
    out = np.empty((B, int(length)), dtype=np.int64)
    for t in range(int(length)):
        u = rng.random(B)
        k = np.minimum((cdf[state] < u[:, None]).sum(axis=1), n_x * d - 1)
        out[:, t], state = np.divmod(k, d)
    seqs = [[model.alphabet[i] for i in row] for row in out]
    return seqs[0] if n_sequences is None else seqs


def planted_ring_hmm(n_states: int = 30, n_symbols: int = 4, *, concentration: float = 2.0,
                     moves=(0.3, 0.6, 0.1)) -> Hmm:
    """Non-unifilar ring source used as a planted model for training experiments.

    State ``i`` emits ``x`` with probability proportional to
    ``exp(concentration * cos(2 pi (i / n_states - x / n_symbols)))`` and then
    moves ahead by ``k`` steps with probability ``moves[k]``, independently of
    the symbol. Neighbouring states therefore have similar futures.
    """
    d, n_x = int(n_states), int(n_symbols)
    phase = 2 * np.pi * (np.arange(d)[None, :] / d - np.arange(n_x)[:, None] / n_x)
    emit = np.exp(concentration * np.cos(phase))
    emit /= emit.sum(axis=0, keepdims=True)
    move = np.zeros((d, d))
    for k, w in enumerate(moves):
        move[(np.arange(d) + k) % d, np.arange(d)] += w
    T = emit[:, None, :] * move[None, :, :]
    return Hmm(tuple(str(i) for i in range(n_x)), T)
