"""Small dense linear-algebra kernels and a matrix-free dominant eigen-solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigs

from ._validation import SolverError

# Above this many unknowns the operator is never materialized (d > 8 for d x d bonds).
DENSE_LIMIT = 64
# Largest operator materialized when Arnoldi fails to converge.
DENSE_FALLBACK_LIMIT = 2500


@dataclass
class EigResult:
    """Dominant eigenpair of a linear map acting on arrays of a fixed shape.

    Attributes
    ----------
    value : complex
        Dominant eigenvalue (largest modulus).
    vector : ndarray
        Eigenvector reshaped to the operand shape, unit Frobenius norm.
    second : float
        Modulus of the sub-dominant eigenvalue (``nan`` if unknown).
    residual : float
        ``||E v - value v||_F`` for the returned (normalized) vector.
    iterations : int
        Operator applications used.
    nonreal : bool
        True when the dominant eigenvalue has a non-negligible imaginary part.
    method : str
        Which backend produced the pair.
    """

    value: complex
    vector: np.ndarray
    second: float = float("nan")
    residual: float = float("nan")
    iterations: int = 0
    nonreal: bool = False
    method: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def modulus(self) -> float:
        return float(abs(self.value))

    @property
    def gap(self) -> float:
        """Relative spectral gap ``(|eta0| - |eta1|) / |eta0|``."""
        if not np.isfinite(self.second) or self.modulus == 0:
            return float("nan")
        return (self.modulus - self.second) / self.modulus


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate a complex eigenvector so that it is real when possible."""
    flat = v.ravel()
    k = int(np.argmax(np.abs(flat)))
    phase = flat[k] / abs(flat[k])
    w = v / phase
    if np.iscomplexobj(w) and np.max(np.abs(w.imag)) <= 1e-10 * max(np.max(np.abs(w.real)), 1e-300):
        w = w.real
    # deterministic sign: make the sum (or the largest entry) positive
    s = np.sum(w.real) if np.iscomplexobj(w) else np.sum(w)
    if s < 0 or (s == 0 and (w.real if np.iscomplexobj(w) else w).ravel()[k] < 0):
        w = -w
    return w


def _power_iteration(apply, shape, start, tol, max_iter):
    v = np.array(start, dtype=float).reshape(shape)
    v = v / np.linalg.norm(v)
    eta = 0.0
    prev_res = None
    ratio = float("nan")
    sign_flips = 0
    prev_eta = None
    for it in range(1, max_iter + 1):
        w = apply(v)
        eta = float(np.vdot(v, w))
        res = float(np.linalg.norm(w - eta * v))
        if res <= tol * max(abs(eta), 1e-300):
            return eta, v, it, res, ratio, False
        if prev_res is not None and prev_res > 0:
            ratio = res / prev_res
        if prev_eta is not None and np.sign(prev_eta) != np.sign(eta):
            sign_flips += 1
        prev_res, prev_eta = res, eta
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0, v, it, 0.0, float("nan"), False
        v = w / nrm
    oscillating = sign_flips > max_iter // 10
    raise SolverError(
        "power iteration did not converge",
        {"iterations": max_iter, "residual": res, "eigenvalue": eta, "oscillating": oscillating},
    )


def leading_eigenpair(
    apply: Callable[[np.ndarray], np.ndarray],
    shape: tuple[int, ...],
    *,
    start: np.ndarray | None = None,
    tol: float = 1e-13,
    max_iter: int = 50_000,
    method: str = "auto",
) -> EigResult:
    """Dominant eigenpair of a linear map ``X -> apply(X)`` on real arrays of ``shape``.

    ``method='auto'`` materializes the operator when it has at most
    ``DENSE_LIMIT`` unknowns, otherwise runs implicitly restarted Arnoldi on the
    matrix-free map. If Arnoldi does not converge (clustered leading moduli) it
    retries with a wider Krylov space, then materializes operators of up to
    ``DENSE_FALLBACK_LIMIT`` unknowns, and finally falls back to power
    iteration. ``method='power'`` forces plain power iteration with Frobenius
    normalization.
    """
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(shape))
    if start is None:
        if len(shape) == 2 and shape[0] == shape[1]:
            start = np.eye(shape[0]) / shape[0]
        else:
            start = np.ones(shape) / n
    start = np.asarray(start, dtype=float).reshape(shape)

    def matvec(x):
        return apply(np.asarray(x).real.reshape(shape)).ravel()

    if method == "power":
        eta, v, it, res, ratio, _ = _power_iteration(apply, shape, start, tol, max_iter)
        second = abs(eta) * ratio if np.isfinite(ratio) else float("nan")
        return EigResult(eta, _fix_phase(v), second, res, it, False, "power")

    if method not in ("auto", "dense", "arnoldi"):
        raise ValueError(f"unknown eigen-solver method {method!r}")

    def dense():
        M = np.empty((n, n))
        basis = np.zeros(n)
        for j in range(n):
            basis[j] = 1.0
            M[:, j] = matvec(basis)
            basis[j] = 0.0
        vals, vecs = np.linalg.eig(M)
        order = np.lexsort((-vals.real, -np.round(np.abs(vals), 13)))
        return vals[order], vecs[:, order]

    used = "dense"
    iterations = n
    if method == "dense" or (method == "auto" and n <= DENSE_LIMIT):
        vals, vecs = dense()
    else:
        op = LinearOperator((n, n), matvec=matvec, dtype=float)
        vals = None
        # widen the Krylov space before giving up on clustered spectra
        for k, ncv, maxiter in ((2, min(n, 40), 300), (min(6, n - 2), min(n, 80), 1000)):
            try:
                vals, vecs = eigs(op, k=k, which="LM", v0=start.ravel(), tol=tol, ncv=ncv, maxiter=maxiter)
                break
            except (ArpackNoConvergence, ArpackError):
                continue
        if vals is not None:
            order = np.argsort(-np.abs(vals), kind="stable")
            vals, vecs = vals[order], vecs[:, order]
            iterations, used = -1, "arnoldi"
        elif n <= DENSE_FALLBACK_LIMIT:
            vals, vecs = dense()
        else:
            eta, v, it, res, ratio, _ = _power_iteration(apply, shape, start, tol, max_iter)
            second = abs(eta) * ratio if np.isfinite(ratio) else float("nan")
            return EigResult(eta, _fix_phase(v), second, res, it, False, "power")
    value, vec = vals[0], vecs[:, 0]
    second = float(abs(vals[1])) if len(vals) > 1 else 0.0

    nonreal = bool(abs(value.imag) > 1e-10 * max(abs(value), 1e-300))
    v = _fix_phase(vec.reshape(shape))
    if not nonreal:
        value = float(value.real)
        v = np.real(v) if np.iscomplexobj(v) else v
    v = v / np.linalg.norm(v)
    if not nonreal:
        # a start that is already a dominant eigenvector wins over an arbitrary
        # basis vector of a degenerate eigenspace
        s0 = start / np.linalg.norm(start)
        if np.linalg.norm(apply(s0) - value * s0) <= tol * max(abs(value), 1.0):
            v = _fix_phase(s0)
    res = float(np.linalg.norm(apply(v.real).astype(complex) - value * v)) if not nonreal else float("nan")
    # polish with a few power steps when Arnoldi stops short of the requested residual
    if not nonreal and res > tol * max(abs(value), 1e-300) and used == "arnoldi":
        w = v
        for _ in range(20):
            w = apply(w)
            w = w / np.linalg.norm(w)
            eta = float(np.vdot(w, apply(w)))
            r = float(np.linalg.norm(apply(w) - eta * w))
            if r < res:
                v, value, res = _fix_phase(w), eta, r
            if res <= tol * max(abs(value), 1e-300):
                break
    return EigResult(value, v, second, res, iterations, nonreal, used)


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def psd_eigh(M: np.ndarray, clamp: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix, descending, small eigenvalues clamped to 0."""
    w, U = np.linalg.eigh(sym(M))
    w, U = w[::-1], U[:, ::-1]
    w = np.where(w > clamp, w, 0.0)
    return w, U


def polar_isometry(M: np.ndarray) -> np.ndarray:
    """Closest matrix with orthonormal columns (or rows, for wide input) to ``M``."""
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    return U @ Vt


def numerical_rank(M: np.ndarray, rtol: float = 1e-10) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def entropy_bits(p) -> float:
    """Shannon entropy in bits with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p))) + 0.0
