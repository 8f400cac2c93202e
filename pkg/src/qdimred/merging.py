"""Classical baseline: greedy pairwise state merging with stationary-mixture lumping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import InputError
from .models import Hmm

__all__ = ["MergeStep", "merge_cost", "merge_states", "greedy_merge_baseline", "GreedyStateMerger"]


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in bits; 0 log 0 = 0 and p > 0 = q gives +inf."""
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


def merge_cost(model: Hmm, a: int, b: int, pi: np.ndarray | None = None) -> float:
    """``pi_a KL(p_a || p_m) + pi_b KL(p_b || p_m)`` for the one-step predictive laws ``p_s(x, s')``."""
    pi = model.stationary if pi is None else pi
    T = model.transitions
    pa, pb = T[:, :, a].ravel(), T[:, :, b].ravel()
    w = pi[a] + pi[b]
    pm = (pi[a] * pa + pi[b] * pb) / w
    return pi[a] * _kl(pa, pm) + pi[b] * _kl(pb, pm)


def merge_states(model: Hmm, a: int, b: int, pi: np.ndarray | None = None) -> Hmm:
    """Lump states ``a < b`` into index ``a``.

    The merged outgoing law is the stationary mixture of the two columns;
    probability flowing into either state is summed into the merged state.
    """
    if not 0 <= a < b < model.num_states:
        raise InputError("merge needs state indices a < b")
    pi = model.stationary if pi is None else pi
    T = np.array(model.transitions)
    w = pi[a] + pi[b]
    T[:, :, a] = (pi[a] * T[:, :, a] + pi[b] * T[:, :, b]) / w
    T[:, a, :] += T[:, b, :]
    T = np.delete(np.delete(T, b, axis=1), b, axis=2)
    # restore exact column normalization lost to rounding
    T /= T.sum(axis=(0, 1), keepdims=True)
    return Hmm(model.alphabet, T)


@dataclass(frozen=True)
class MergeStep:
    num_states: int
    model: Hmm
    merged: tuple[int, int]
    cost: float


def greedy_merge_baseline(model: Hmm, target_states: int) -> list[MergeStep]:
    """Repeatedly merge the cheapest pair until ``target_states`` remain.

    Ties go to the lexicographically smallest pair. When every pair has
    infinite cost the pair with the smallest combined stationary weight is
    merged instead.
    """
    if not 1 <= target_states < model.num_states:
        raise InputError(f"target_states must lie in [1, {model.num_states - 1}]")
    steps = []
    current = model
    while current.num_states > target_states:
        pi = current.stationary
        n = current.num_states
        best, best_cost = None, float("inf")
        for a in range(n):
            for b in range(a + 1, n):
                c = merge_cost(current, a, b, pi)
                if c < best_cost:
                    best, best_cost = (a, b), c
        if best is None:
            pairs = [(pi[a] + pi[b], a, b) for a in range(n) for b in range(a + 1, n)]
            _, a, b = min(pairs)
            best = (a, b)
        current = merge_states(current, *best, pi=pi)
        steps.append(MergeStep(current.num_states, current, best, best_cost))
    return steps


class GreedyStateMerger(BaseEstimator):
    """Estimator form of :func:`greedy_merge_baseline`; ``transform`` returns the merged model."""

    def __init__(self, target_states=1):
        self.target_states = target_states

    def fit(self, X, y=None):
        self.path_ = greedy_merge_baseline(X, self.target_states)
        return self

    def transform(self, X=None):
        return self.path_[-1].model

    def model_at(self, num_states: int) -> Hmm:
        for step in self.path_:
            if step.num_states == num_states:
                return step.model
        raise InputError(f"no merged model with {num_states} states on the fitted path")
