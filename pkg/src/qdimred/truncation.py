"""Variational compression of a normal iMPS to a smaller bond dimension.

The optimizer maximizes the per-site overlap between the original state and a
trial state of bond dimension ``D``. Each sweep

1. takes the trial state in mixed canonical form (``AL``, ``C``, ``AR``),
2. computes the dominant fixed points of the two mixed transfer maps
   (original against ``AL`` on the future side, against ``AR`` on the past side),
3. projects the original site tensor onto these environments to obtain the
   optimal centre tensor ``AC`` and bond matrix ``C``,
4. recovers an isometric ``AL`` from ``AC`` and ``C`` by a polar decomposition
   and re-diagonalizes its stationary bond state.

The best trial over all sweeps and restarts is returned.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._validation import DegeneracyError, InputError, SolverError, check_positive_int
from .imps import (
    Imps,
    apply_transfer,
    apply_transfer_adjoint,
    canonical_form,
    transfer_eig,
)
from .linalg import leading_eigenpair, polar_isometry, psd_eigh

__all__ = [
    "TruncationOptions",
    "TruncationResult",
    "variational_truncate",
    "fidelity_per_site",
    "mixed_fidelity",
]

logger = logging.getLogger(__name__)

# a sweep with negligible gain only ends the run once the update has stalled too
RESIDUAL_TOL = 1e-6
# smallest damping of the fixed-point proposal before switching to gradient steps
MIN_DAMPING = 1.0 / 64
# gradient sweeps taken before the fixed-point proposal is retried
GRADIENT_SWEEPS = 10
# relative size of the perturbation added to the Schmidt projection for restarts 1, 2, ...
NOISE_SCALE = 1.0


@dataclass(frozen=True)
class TruncationOptions:
    """Settings for :func:`variational_truncate`.

    Parameters
    ----------
    bond_dim : int
        Target bond dimension ``D``.
    max_sweeps : int
        Upper bound on fixed-point sweeps per restart.
    tol : float
        Stop once the per-site fidelity changes by less than this between sweeps.
    restarts : int
        Number of independent starts; the first uses ``init``, the rest are
        seeded random perturbations of it.
    seed : int
        Seed for the random restarts.
    init : {'schmidt-projection', 'random'}
        Starting point of the first restart.
    """

    bond_dim: int
    max_sweeps: int = 500
    tol: float = 1e-12
    restarts: int = 3
    seed: int = 0
    init: str = "schmidt-projection"

    def __post_init__(self):
        check_positive_int(self.bond_dim, "bond_dim")
        check_positive_int(self.max_sweeps, "max_sweeps")
        check_positive_int(self.restarts, "restarts")
        if not self.tol > 0:
            raise InputError("tol must be positive")
        if self.init not in ("schmidt-projection", "random"):
            raise InputError(f"unknown init scheme {self.init!r}")


@dataclass
class TruncationResult:
    """Outcome of a variational truncation.

    ``imps`` is left-gauged in its Schmidt basis (``sum A^T A = I`` and
    stationary bond state ``diag(imps.schmidt)``); ``right`` carries the
    matching right-gauged tensors.
    """

    imps: Imps
    right: Imps
    fidelity: float
    sweeps: int
    restart: int
    converged: bool
    history: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    candidates: list["TruncationResult"] = field(default_factory=list, repr=False)

    @property
    def fidelity_rate(self) -> float:
        """Fidelity divergence rate estimate ``-log2 f`` (bits per site)."""
        return max(-math.log2(min(self.fidelity, 1.0)), 0.0)

    @property
    def bond_dim(self) -> int:
        return self.imps.bond_dim


def _eta(A: np.ndarray) -> float:
    d = A.shape[1]
    return leading_eigenpair(lambda X: apply_transfer(A, X), (d, d)).modulus


def mixed_fidelity(A: np.ndarray, B: np.ndarray) -> float:
    """``|eta_mix|`` of ``X -> sum A X B^T`` (no normalization)."""
    return leading_eigenpair(lambda X: apply_transfer(A, X, B), (A.shape[1], B.shape[1])).modulus


def fidelity_per_site(a: Imps, b: Imps) -> float:
    """Per-site overlap ``|eta_mix| / sqrt(eta_a eta_b)`` of two iMPS on the same alphabet."""
    if tuple(a.alphabet) != tuple(b.alphabet):
        raise InputError("fidelity needs iMPS over the same physical alphabet")
    eta_mix = mixed_fidelity(a.tensors, b.tensors)
    return eta_mix / math.sqrt(_eta(a.tensors) * _eta(b.tensors))


def _schmidt_basis(AL: np.ndarray, start=None) -> tuple[np.ndarray, np.ndarray]:
    D = AL.shape[1]
    rho = leading_eigenpair(lambda X: apply_transfer(AL, X), (D, D), start=start).vector
    rho = 0.5 * (rho + rho.T)
    if np.trace(rho) < 0:
        rho = -rho
    lam, U = psd_eigh(rho)
    lam = lam / lam.sum()
    return np.matmul(U.T, np.matmul(AL, U)), lam


def _left_polar(AC: np.ndarray, C: np.ndarray) -> np.ndarray:
    n, D, _ = AC.shape
    return polar_isometry(np.matmul(AC, C.T).reshape(n * D, D)).reshape(n, D, D)


def _right_polar(AC: np.ndarray, C: np.ndarray) -> np.ndarray:
    n, D, _ = AC.shape
    H = np.matmul(C.T, AC).transpose(1, 0, 2).reshape(D, n * D)
    return polar_isometry(H).reshape(D, n, D).transpose(1, 0, 2)


def _canonical_start(B: np.ndarray, alphabet, rng) -> np.ndarray:
    """Left-isometric starting tensors from arbitrary ``B``; retries with noise if degenerate."""
    for attempt in range(5):
        try:
            left, _, _ = canonical_form(Imps(alphabet, B))
            if left.bond_dim == B.shape[1]:
                return left.tensors
        except (DegeneracyError, SolverError):
            pass
        B = B + 1e-3 * (attempt + 1) * np.abs(B).max() * rng.standard_normal(B.shape)
    n, D, _ = B.shape
    return polar_isometry(B.reshape(n * D, D)).reshape(n, D, D)


class _Trial:
    """Left-isometric trial tensors together with their environments against ``A``.

    Only the future environment, which fixes the fidelity, is solved eagerly;
    the gauge and past environment are solved on first use.
    """

    def __init__(self, A, AL, prev: "_Trial | None" = None):
        Dfull, D = A.shape[1], AL.shape[1]
        self.A, self.AL = A, AL
        fut = leading_eigenpair(lambda Y: apply_transfer_adjoint(A, Y, AL), (Dfull, D),
                                start=None if prev is None else prev.gf)
        # a non-real dominant pair still yields a usable real search direction
        gf = np.real(fut.vector)
        self.gf = gf / np.linalg.norm(gf)
        self.fidelity = fut.modulus
        self.fut = fut
        self._rho_start = None if prev is None else prev._rho_start if prev._rho is None else prev._rho
        self._gp_start = None if prev is None else prev._gp_start if prev._gp is None else prev._gp
        self._rho = self._gp = None

    def _environments(self):
        A, AL = self.A, self.AL
        Dfull, D = A.shape[1], AL.shape[1]
        rho = leading_eigenpair(lambda X: apply_transfer(AL, X), (D, D), start=self._rho_start).vector
        rho = 0.5 * (rho + rho.T)
        if np.trace(rho) < 0:
            rho = -rho
        lam, U = psd_eigh(rho)
        self._rho = rho / lam.sum()
        C = (U * np.sqrt(lam / lam.sum())) @ U.T
        AR = _right_polar(np.matmul(AL, C), C)
        past = leading_eigenpair(lambda X: apply_transfer(A, X, AR), (Dfull, D), start=self._gp_start)
        gp = np.real(past.vector)
        self._gp = gp / np.linalg.norm(gp)

    @property
    def rho(self):
        if self._rho is None:
            self._environments()
        return self._rho

    @property
    def gp(self):
        if self._gp is None:
            self._environments()
        return self._gp

    def proposal(self, A):
        AC = np.matmul(self.gf.T, np.matmul(A, self.gp))
        P = _left_polar(AC, self.gf.T @ self.gp)
        return -P if np.vdot(P, self.AL) < 0 else P


def _try(A, AL, prev):
    """Evaluate a trial point; ``None`` when its environments cannot be resolved."""
    try:
        return _Trial(A, AL, prev)
    except SolverError:
        return None


def _gradient_step(A, cur: _Trial, state: dict):
    """Armijo ascent along the Riemannian fidelity gradient on the isometry manifold.

    The trial step is the Barzilai-Borwein estimate from the previous gradient
    step (kept in ``state``), falling back to the last accepted step. Returns
    the accepted trial, or None when no ascent is found.
    """
    n, Dfull, D = A.shape[0], A.shape[1], cur.AL.shape[1]
    start = cur._gp if cur._gp is not None else cur._gp_start
    right = leading_eigenpair(lambda X: apply_transfer(A, X, cur.AL), (Dfull, D), start=start)
    eta = complex(right.value)
    r = np.asarray(right.vector, dtype=complex)
    l = np.asarray(cur.fut.vector, dtype=complex)
    # the adjoint solve may have returned the conjugate member of a complex pair
    if abs(complex(cur.fut.value) - eta) > abs(complex(cur.fut.value) - eta.conjugate()):
        l = l.conj()
    norm = np.sum(l * r)
    if abs(norm) < 1e-14 or eta == 0:
        return None
    # d eta / d AL_a = l^T A_a r / (l^T r); d|eta| = Re(conj(eta) d eta) / |eta|
    G = np.matmul(l.T, np.matmul(A, r)) / norm
    G = np.real(eta.conjugate() / abs(eta) * G)
    X = cur.AL.reshape(n * D, D)
    Gs = G.reshape(n * D, D)
    S = X.T @ Gs
    grad = Gs - X @ (0.5 * (S + S.T))
    g2 = float(np.vdot(grad, grad))
    if g2 < 1e-24:
        return None
    t = state.get("step", 1.0)
    if state.get("X") is not None and state["X"].shape == X.shape:
        sk, yk = X - state["X"], grad - state["grad"]
        curv = -float(np.vdot(sk, yk))
        if curv > 0:
            t = float(np.vdot(sk, sk)) / curv
    t = min(max(t, 1e-8), 1e3)
    for _ in range(40):
        trial = _try(A, polar_isometry(X + t * grad).reshape(n, D, D), cur)
        if trial is not None and trial.fidelity >= cur.fidelity + 1e-4 * t * g2:
            state.update(step=min(2.0 * t, 1e3), X=X, grad=grad)
            return trial
        t *= 0.5
    return None


def _isometrize(B):
    n, D, _ = B.shape
    return polar_isometry(B.reshape(n * D, D)).reshape(n, D, D)


def _optimize(A: np.ndarray, AL: np.ndarray, opts: TruncationOptions, memory: int = 5):
    """Safeguarded, Anderson-accelerated fixed-point sweeps from a left-isometric start.

    The environment update proposes new tensors. An extrapolated proposal is
    tried first; if it lowers the fidelity the plain proposal is used, with the
    step halved until the fidelity does not decrease. Where the proposal is no
    ascent direction at all, a gradient step with backtracking is taken
    instead. The recorded fidelity is therefore monotone. Returns (AL, f, sweeps, converged, history).
    """
    cur = _Trial(A, AL)
    history = [cur.fidelity]
    xs, gs = [], []
    step = 1.0
    grad_state: dict = {}
    # sweeps left before the proposal is tried again after it failed to ascend
    skip = 0
    converged = False
    sweeps = 0
    while sweeps < opts.max_sweeps:
        sweeps += 1
        if skip > 0:
            skip -= 1
            nxt = _gradient_step(A, cur, grad_state)
            if nxt is None:
                skip = 0
            else:
                gain, cur = nxt.fidelity - cur.fidelity, nxt
                history.append(cur.fidelity)
                if gain < opts.tol:
                    skip = 0  # stalled: let the proposal residual decide
            continue
        P = cur.proposal(A)
        xs.append(cur.AL.ravel())
        gs.append(P.ravel())
        xs, gs = xs[-(memory + 1):], gs[-(memory + 1):]
        nxt = None
        if len(xs) > 1:
            R = np.array(gs) - np.array(xs)
            dR = np.diff(R, axis=0).T
            dG = np.diff(np.array(gs), axis=0).T
            gamma = np.linalg.lstsq(dR, R[-1], rcond=1e-10)[0]
            cand = _isometrize((P.ravel() - dG @ gamma).reshape(P.shape))
            t = _try(A, cand, cur)
            if t is not None and t.fidelity >= cur.fidelity - 1e-15:
                nxt = t
                grad_state.clear()
        if nxt is None:
            xs, gs = xs[-1:], gs[-1:]
            t, damp = None, step
            while damp >= MIN_DAMPING:
                t = _try(A, _isometrize((1 - damp) * cur.AL + damp * P), cur)
                if t is not None and t.fidelity >= cur.fidelity - 1e-15:
                    break
                t, damp = None, 0.5 * damp
            if t is None:
                # the proposal is not an ascent direction here; fall back to the gradient
                t = _gradient_step(A, cur, grad_state)
                if t is None:
                    converged = True  # no ascent left within numerical noise
                    break
                skip = GRADIENT_SWEEPS
                xs, gs = [], []
            else:
                grad_state.clear()
                step = min(1.0, 2.0 * damp)
            nxt = t
        gain = nxt.fidelity - cur.fidelity
        resid = float(np.linalg.norm(P - cur.AL))
        cur = nxt
        history.append(cur.fidelity)
        if gain < opts.tol:
            if resid < RESIDUAL_TOL:
                converged = True
                break
            xs, gs = xs[-1:], gs[-1:]
    AL, _ = _schmidt_basis(cur.AL)
    return AL, cur.fidelity, sweeps, converged, history


def pad_tensors(AL: np.ndarray, D: int, rng, eps: float = 1e-3) -> np.ndarray:
    """Embed left-isometric tensors into a larger bond, weakly coupled to the new directions."""
    n, d, _ = AL.shape
    if D < d:
        raise InputError("cannot pad to a smaller bond dimension")
    B = eps * rng.standard_normal((n, D, D))
    B[:, :d, :d] = AL
    return _isometrize(B)


def variational_truncate(m: Imps, opts: TruncationOptions | int, *,
                         initial: Imps | Sequence[Imps] | None = None) -> TruncationResult:
    """Compress ``m`` to bond dimension ``opts.bond_dim`` maximizing the per-site fidelity.

    Parameters
    ----------
    m : Imps
        Normal iMPS (any gauge).
    opts : TruncationOptions or int
        Options, or just the target bond dimension.
    initial : Imps or sequence of Imps, optional
        Extra starting points, typically solutions at a smaller bond
        dimension; each is padded to the target size and tried after the
        regular restarts. Each is also listed unoptimized among the
        candidates, after the optimized starts.

    Returns
    -------
    TruncationResult
        The best start by fidelity; every start is listed in ``candidates``.
    """
    t0 = time.perf_counter()
    if not isinstance(opts, TruncationOptions):
        opts = TruncationOptions(bond_dim=opts)
    D = opts.bond_dim
    if D > m.bond_dim:
        raise InputError(f"target bond dimension {D} exceeds the original {m.bond_dim}")
    left, right, _ = canonical_form(m)
    if D >= left.bond_dim:
        res = TruncationResult(left, right, 1.0, 0, 0, True, [1.0], time.perf_counter() - t0)
        res.candidates = [res]
        return res

    A = left.tensors
    n = A.shape[0]
    rng = np.random.default_rng(opts.seed)
    starts = []
    proj = A[:, :D, :D]
    for r in range(opts.restarts):
        if r == 0 and opts.init == "schmidt-projection":
            B = proj
        elif opts.init == "random":
            B = rng.standard_normal((n, D, D))
        else:
            B = proj + NOISE_SCALE * np.sqrt(np.mean(proj ** 2)) * rng.standard_normal(proj.shape)
        starts.append(_canonical_start(np.array(B, dtype=float), m.alphabet, rng))
    if initial is None:
        initial = ()
    elif isinstance(initial, Imps):
        initial = (initial,)
    carried = []
    for init in initial:
        if init.bond_dim > D or tuple(init.alphabet) != tuple(m.alphabet):
            raise InputError("initial iMPS must not exceed the target bond dimension and must share the alphabet")
        init_left, init_right, _ = canonical_form(init)
        starts.append(pad_tensors(init_left.tensors, D, rng))
        carried.append((init_left, init_right))

    candidates = []
    for r, AL0 in enumerate(starts):
        t1 = time.perf_counter()
        AL, f, sweeps, conv, hist = _optimize(A, AL0, opts)
        logger.debug("restart %d: fidelity %.15f after %d sweeps", r, f, sweeps)
        if not conv:
            logger.warning("truncation to D=%d (start %d) stopped at max_sweeps without meeting tol", D, r)
        try:
            out_left, out_right, _ = canonical_form(Imps(m.alphabet, AL))
        except DegeneracyError:
            # the start collapsed onto a reducible point, i.e. a smaller bond in disguise
            logger.warning("truncation to D=%d (start %d) ended on a non-injective iMPS; dropped", D, r)
            continue
        candidates.append(TruncationResult(out_left, out_right, f, sweeps, r, conv, hist,
                                           time.perf_counter() - t1))
    # a start with a smaller bond is itself admissible at bond D; keep it unoptimized
    for j, (init_left, init_right) in enumerate(carried):
        t1 = time.perf_counter()
        trial = _try(A, init_left.tensors, None)
        if trial is not None:
            candidates.append(TruncationResult(init_left, init_right, trial.fidelity, 0, len(starts) + j, True,
                                               [trial.fidelity], time.perf_counter() - t1))
    if not candidates:
        raise DegeneracyError(f"every start for D={D} ended on a non-injective iMPS", {"bond_dim": D})
    # lowest start index wins ties
    best = max(candidates, key=lambda c: (c.fidelity, -c.restart))
    res = TruncationResult(best.imps, best.right, best.fidelity, best.sweeps, best.restart,
                           best.converged, best.history, time.perf_counter() - t0)
    res.candidates = candidates
    return res
