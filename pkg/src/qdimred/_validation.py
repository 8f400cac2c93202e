"""Exception types and input validation helpers shared across the package."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class QdimredError(Exception):
    """Base class for all package errors."""


class InputError(QdimredError, ValueError):
    """Raised when caller-supplied data violates a documented precondition."""


class ErgodicityError(InputError):
    """Raised when a model's underlying state chain is not irreducible and aperiodic."""


class SolverError(QdimredError, RuntimeError):
    """Raised when an iterative numerical routine fails to converge.

    Parameters
    ----------
    message : str
        Human readable description.
    diagnostics : dict, optional
        Iteration counts, residuals and any other data useful for debugging.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DegeneracyError(SolverError):
    """Raised when a transfer operator has no isolated leading eigenvalue."""


class GaugeError(QdimredError, ValueError):
    """Raised when tensors are not in the gauge an operation requires."""


def check_probability_tensor(transitions, *, atol: float = 1e-12) -> np.ndarray:
    """Validate a stack of substochastic matrices ``T[x, s', s]``.

    Returns a float64 copy. Columns of ``sum_x T[x]`` must sum to one.
    """
    T = np.array(transitions, dtype=float)
    if T.ndim != 3 or T.shape[1] != T.shape[2]:
        raise InputError(f"transitions must have shape (n_symbols, d, d); got {T.shape}")
    if T.shape[0] == 0 or T.shape[1] == 0:
        raise InputError("transitions must contain at least one symbol and one state")
    if not np.all(np.isfinite(T)):
        raise InputError("transitions contain non-finite entries")
    if np.any(T < 0):
        raise InputError(f"transitions contain negative entries (min {T.min():.3g})")
    col = T.sum(axis=(0, 1))
    bad = np.abs(col - 1.0) > atol
    if np.any(bad):
        s = int(np.flatnonzero(bad)[0])
        raise InputError(f"outgoing probabilities of state {s} sum to {col[s]!r}, not 1")
    return T


def check_alphabet(alphabet: Iterable, n_symbols: int | None = None) -> tuple[str, ...]:
    labels = tuple(str(a) for a in alphabet)
    if len(set(labels)) != len(labels):
        raise InputError(f"alphabet labels must be unique: {labels}")
    if n_symbols is not None and len(labels) != n_symbols:
        raise InputError(f"alphabet has {len(labels)} labels but {n_symbols} matrices were given")
    return labels


def encode_word(word: Sequence, alphabet: Sequence[str]) -> np.ndarray:
    """Map a sequence of symbol labels (or a string of one-character labels) to indices."""
    index = {a: i for i, a in enumerate(alphabet)}
    if isinstance(word, str) and word not in index:
        # a bare string is read character by character
        word = list(word)
    out = np.empty(len(word), dtype=np.intp)
    for t, sym in enumerate(word):
        try:
            out[t] = index[str(sym)]
        except KeyError:
            raise InputError(f"unknown symbol {sym!r}; alphabet is {list(alphabet)}") from None
    return out


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise InputError(f"{name} must be an integer >= {minimum}; got {value!r}")
    return int(value)
