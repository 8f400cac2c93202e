"""Deterministic dilation of HMMs onto a composite alphabet ``X x Y``.

Each allowed transition ``s -> s'`` emitting ``x`` receives an auxiliary label
``y = f(s, s', x)``, injective in ``s'`` for fixed ``(s, x)``. Emitting the pair
``(x, y)`` then pins down the successor, while summing over ``y`` gives back
the original model.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import InputError
from .models import (
    Hmm,
    LinearGenerator,
    all_word_probabilities,
    branching_profile,
    is_ergodic,
)

__all__ = [
    "STRATEGIES",
    "LabellingStrategy",
    "Labelling",
    "DilatedHmm",
    "DilationReport",
    "make_labelling",
    "dilate",
    "verify_dilation",
    "composite_label",
    "split_composite",
]

STRATEGIES = ("sequential", "probability-ascending", "probability-descending", "random")


def composite_label(x: str, y: int) -> str:
    return f"{x}|{y}"


def split_composite(label: str) -> tuple[str, int]:
    x, _, y = label.rpartition("|")
    if not _:
        raise InputError(f"{label!r} is not a composite 'x|y' symbol")
    return x, int(y)


@dataclass(frozen=True)
class LabellingStrategy:
    """How auxiliary labels are assigned to the successors of each ``(s, x)``.

    ``tag`` is one of ``sequential``, ``probability-ascending``,
    ``probability-descending`` or ``random``; the random strategy needs a seed.
    """

    tag: str = "sequential"
    seed: int | None = None

    def __post_init__(self):
        if self.tag not in STRATEGIES:
            raise InputError(f"unknown labelling strategy {self.tag!r}; choose from {STRATEGIES}")
        if self.tag == "random" and self.seed is None:
            raise InputError("the random labelling strategy requires an explicit seed")

    @classmethod
    def parse(cls, text: str) -> "LabellingStrategy":
        """Parse ``'sequential'`` or ``'random:SEED'`` style strings."""
        if isinstance(text, LabellingStrategy):
            return text
        tag, _, seed = str(text).partition(":")
        return cls(tag, int(seed) if seed else None)

    def __str__(self):
        return self.tag if self.seed is None else f"{self.tag}:{self.seed}"


@dataclass(frozen=True, eq=False)
class Labelling:
    """Partial map ``f(s, s', x) -> y`` stored as ``labels[x, s', s]`` (``-1`` where undefined)."""

    labels: np.ndarray
    aux_size: int
    strategy: LabellingStrategy

    def __call__(self, s: int, s_next: int, x: int) -> int:
        y = int(self.labels[x, s_next, s])
        if y < 0:
            raise KeyError((s, s_next, x))
        return y

    def is_injective(self) -> bool:
        n_x, _, d = self.labels.shape
        for x in range(n_x):
            for s in range(d):
                ys = self.labels[x, :, s]
                ys = ys[ys >= 0]
                if len(np.unique(ys)) != len(ys):
                    return False
        return True

    def as_dict(self) -> dict[tuple[int, int, int], int]:
        out = {}
        for x, s_next, s in zip(*np.nonzero(self.labels >= 0)):
            out[(int(s), int(s_next), int(x))] = int(self.labels[x, s_next, s])
        return dict(sorted(out.items()))


def make_labelling(model: Hmm, strategy: LabellingStrategy | str = "sequential") -> Labelling:
    """Assign auxiliary labels ``0 .. k(s, x)-1`` to the successors of each ``(s, x)``.

    Ties in the probability-ordered strategies are broken by successor index.
    """
    strategy = LabellingStrategy.parse(strategy)
    T = model.transitions
    n_x, d, _ = T.shape
    labels = np.full(T.shape, -1, dtype=np.int64)
    rng = np.random.default_rng(strategy.seed) if strategy.tag == "random" else None
    for s in range(d):
        for x in range(n_x):
            succ = np.flatnonzero(T[x, :, s] > 0)
            if succ.size == 0:
                continue
            probs = T[x, succ, s]
            if strategy.tag == "sequential":
                order = np.arange(succ.size)
            elif strategy.tag == "probability-ascending":
                order = np.lexsort((succ, probs))
            elif strategy.tag == "probability-descending":
                order = np.lexsort((succ, -probs))
            else:
                order = rng.permutation(succ.size)
            labels[x, succ[order], s] = np.arange(succ.size)
    d_y = branching_profile(model).d_y
    return Labelling(labels, d_y, strategy)


@dataclass(frozen=True, eq=False)
class DilatedHmm:
    """Deterministic model over composite symbols ``(x, y)`` built from a base HMM.

    ``transitions[x * aux_size + y, s', s]`` holds ``T^{(x,y)}_{s's}``.
    """

    base: Hmm
    labelling: Labelling
    transitions: np.ndarray

    @property
    def aux_size(self) -> int:
        return self.labelling.aux_size

    @property
    def num_states(self) -> int:
        return self.base.num_states

    @cached_property
    def composite_alphabet(self) -> tuple[str, ...]:
        return tuple(composite_label(x, y) for x in self.base.alphabet for y in range(self.aux_size))

    def composite_index(self, x: int, y: int) -> int:
        return x * self.aux_size + y

    def marginal_groups(self) -> dict[str, list[int]]:
        d_y = self.aux_size
        return {x: list(range(i * d_y, (i + 1) * d_y)) for i, x in enumerate(self.base.alphabet)}

    def to_hmm(self, check_ergodic: bool = True) -> Hmm:
        return Hmm(self.composite_alphabet, self.transitions, check_ergodic=check_ergodic)

    def generator(self) -> LinearGenerator:
        """Composite-alphabet generator started from the base model's stationary distribution."""
        return LinearGenerator(self.composite_alphabet, self.transitions, self.base.stationary,
                               np.ones(self.num_states))


def dilate(model: Hmm, labelling: Labelling) -> DilatedHmm:
    """Build ``T^{(x,y)}`` with ``T^{(x,y)}_{s's} = T^x_{s's}`` iff ``y = f(s, s', x)``."""
    T = model.transitions
    if labelling.labels.shape != T.shape:
        raise InputError("labelling was built for a model of a different shape")
    support = T > 0
    if np.any(support != (labelling.labels >= 0)):
        raise InputError("labelling support does not match the model's nonzero transitions")
    d_y = labelling.aux_size
    if d_y != branching_profile(model).d_y:
        raise InputError(f"auxiliary alphabet must have exactly d_y={branching_profile(model).d_y} labels")
    if labelling.labels.max(initial=0) >= d_y:
        raise InputError("labelling uses labels outside 0 .. d_y-1")
    n_x, d, _ = T.shape
    D = np.zeros((n_x * d_y, d, d))
    x_idx, sn_idx, s_idx = np.nonzero(support)
    y_idx = labelling.labels[x_idx, sn_idx, s_idx]
    D[x_idx * d_y + y_idx, sn_idx, s_idx] = T[x_idx, sn_idx, s_idx]
    D.setflags(write=False)
    return DilatedHmm(model, labelling, D)


@dataclass(frozen=True)
class DilationReport:
    deterministic: bool
    marginals_preserved: bool
    ergodic: bool
    max_marginal_error: float
    details: str = ""

    @property
    def passed(self) -> bool:
        return self.deterministic and self.marginals_preserved and self.ergodic


# composite-word enumeration is used while |X x Y|^L stays below this
_ENUM_BUDGET = 50_000


def verify_dilation(d: DilatedHmm, max_word_len: int = 4, atol: float = 1e-12) -> DilationReport:
    """Check determinism, preservation of X-block statistics and ergodicity of a dilation.

    Block probabilities of the dilated model are marginalized over ``y`` by
    explicit summation over composite words when affordable, otherwise by
    contracting with the ``y``-summed generators.
    """
    if max_word_len > 6:
        raise InputError("max_word_len is capped at 6")
    D = d.transitions
    notes = []

    deterministic = bool(np.all((D > 0).sum(axis=1) <= 1))
    if not deterministic:
        notes.append("some (s, (x,y)) has more than one successor")

    P_dil = D.sum(axis=0)
    same_chain = bool(np.array_equal(P_dil, d.base.state_chain))
    chain_ok, why = is_ergodic(P_dil)
    ergodic = chain_ok
    if not same_chain:
        notes.append("summed dilated chain differs from the base chain")
    if not chain_ok:
        notes.append(why)

    base_gen = d.base.generator()
    dil_gen = d.generator()
    n_x, d_y = d.base.num_symbols, d.aux_size
    worst = 0.0
    for L in range(1, max_word_len + 1):
        ref = all_word_probabilities(base_gen, L)
        if (n_x * d_y) ** L <= _ENUM_BUDGET:
            joint = all_word_probabilities(dil_gen, L).reshape((n_x, d_y) * L)
            marg = joint.sum(axis=tuple(range(1, 2 * L, 2))).ravel()
        else:
            marg = all_word_probabilities(dil_gen.marginalize(d.marginal_groups()), L)
        worst = max(worst, float(np.max(np.abs(marg - ref))))
    preserved = worst <= atol and same_chain
    if not preserved:
        notes.append(f"X-marginal block probabilities deviate by {worst:.3g}")
    return DilationReport(deterministic, preserved, ergodic, worst, "; ".join(notes))
