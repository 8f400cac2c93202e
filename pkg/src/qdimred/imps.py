"""Uniform (infinite) matrix product states built from deterministic HMMs.

Tensors are stored in the same orientation as the HMM transition matrices:
``A[a, s', s]`` with columns indexing the earlier bond. A word ``a_1 ... a_L``
therefore acts as ``M_w = A^{a_L} ... A^{a_1}`` and the bond channel is
``rho -> sum_a A^a rho A^aT``.

Gauge names follow the channel picture:

* ``left``  : ``sum_a A^aT A^a = I`` (the bond channel is trace preserving),
* ``right`` : ``sum_a A^a A^aT = I`` (the bond channel is unital).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import DegeneracyError, GaugeError, InputError, check_alphabet, encode_word
from .dilation import DilatedHmm
from .linalg import EigResult, entropy_bits, leading_eigenpair, numerical_rank, polar_isometry, psd_eigh, sym

__all__ = [
    "Imps",
    "TransferEig",
    "SpectrumDiagnostics",
    "apply_transfer",
    "apply_transfer_adjoint",
    "transfer_eig",
    "qsample_tensors",
    "canonical_form",
    "block_probability",
    "all_block_probabilities",
    "spectrum_diagnostics",
    "slice_matrix",
    "SCHMIDT_CLAMP",
    "GAP_THRESHOLD",
]

SCHMIDT_CLAMP = 1e-14
GAP_THRESHOLD = 1e-8
RANK_RTOL = 1e-10
GAUGES = ("none", "left", "right", "mixed")


@dataclass(frozen=True, eq=False)
class Imps:
    """Translation-invariant MPS with one real ``D x D`` matrix per physical symbol."""

    alphabet: tuple[str, ...]
    tensors: np.ndarray
    gauge: str = "none"
    schmidt: np.ndarray | None = None

    def __post_init__(self):
        A = np.array(self.tensors, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise InputError(f"site tensors must have shape (n_symbols, D, D); got {A.shape}")
        if np.iscomplexobj(A):
            raise InputError("site tensors must be real")
        if self.gauge not in GAUGES:
            raise InputError(f"gauge must be one of {GAUGES}")
        A.setflags(write=False)
        object.__setattr__(self, "tensors", A)
        object.__setattr__(self, "alphabet", check_alphabet(self.alphabet, A.shape[0]))
        if self.schmidt is not None:
            lam = np.array(self.schmidt, dtype=float)
            lam.setflags(write=False)
            object.__setattr__(self, "schmidt", lam)

    @property
    def bond_dim(self) -> int:
        return self.tensors.shape[1]

    @property
    def num_symbols(self) -> int:
        return self.tensors.shape[0]

    def completeness_error(self, side: str | None = None) -> float:
        """Frobenius deviation from the left (``sum A^T A``) or right (``sum A A^T``) identity."""
        side = side or self.gauge
        A = self.tensors
        if side == "left":
            S = np.einsum("aji,ajk->ik", A, A)
        elif side == "right":
            S = np.einsum("aij,akj->ik", A, A)
        else:
            raise GaugeError(f"no completeness relation for gauge {side!r}")
        return float(np.linalg.norm(S - np.eye(self.bond_dim)))


def apply_transfer(A: np.ndarray, X: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """``sum_a A^a X B^aT`` for ``X`` of shape ``(D_A, D_B)``."""
    B = A if B is None else B
    n, dA, _ = A.shape
    dB = B.shape[1]
    P = np.matmul(A, X)  # (n, dA, dB)
    return P.transpose(1, 0, 2).reshape(dA, n * dB) @ B.transpose(0, 2, 1).reshape(n * dB, dB)


def apply_transfer_adjoint(A: np.ndarray, Y: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """``sum_a A^aT Y B^a`` for ``Y`` of shape ``(D_A, D_B)``."""
    B = A if B is None else B
    n, dA, _ = A.shape
    dB = B.shape[1]
    P = np.matmul(Y, B)  # (n, dA, dB)
    return A.transpose(2, 0, 1).reshape(dA, n * dA) @ P.reshape(n * dA, dB)


@dataclass
class TransferEig:
    """Leading eigenstructure of the transfer map of an iMPS.

    ``V_l`` is the fixed point of the bond channel ``rho -> sum A rho A^T`` and
    ``V_r`` that of its adjoint, jointly normalized so ``Tr(V_l V_r) = 1``.
    """

    eta: float
    V_l: np.ndarray
    V_r: np.ndarray
    gap: float
    second: float
    diagnostics: dict = field(default_factory=dict)


def _normalize_psd(V: np.ndarray) -> np.ndarray:
    V = sym(V)
    if np.trace(V) < 0:
        V = -V
    return V


def transfer_eig(m: Imps, *, method: str = "auto") -> TransferEig:
    """Leading eigenvalue and fixed points of the transfer map of ``m``."""
    A = m.tensors
    d = m.bond_dim
    fwd = leading_eigenpair(lambda X: apply_transfer(A, X), (d, d), method=method)
    bwd = leading_eigenpair(lambda X: apply_transfer_adjoint(A, X), (d, d), method=method)
    if fwd.nonreal or bwd.nonreal:
        raise DegeneracyError(
            "transfer map has a non-real dominant eigenvalue",
            {"eta": complex(fwd.value), "second": fwd.second},
        )
    V_l = _normalize_psd(fwd.vector)
    V_r = _normalize_psd(bwd.vector)
    # a traceless "fixed point" means the dominant eigenvalue is not simple
    if not np.trace(V_l) > 1e-12 or not np.trace(V_l @ V_r) > 1e-12:
        raise DegeneracyError(
            "transfer fixed points are not positive definite",
            {"eta": float(fwd.value), "second": fwd.second},
        )
    V_l = V_l / np.trace(V_l)
    V_r = V_r / np.trace(V_l @ V_r)
    return TransferEig(
        eta=float(fwd.value),
        V_l=V_l,
        V_r=V_r,
        gap=fwd.gap,
        second=fwd.second,
        diagnostics={"residual_l": fwd.residual, "residual_r": bwd.residual, "method": fwd.method},
    )


def qsample_tensors(d: DilatedHmm) -> Imps:
    """Element-wise square roots of the dilated transition tensor."""
    D = d.transitions
    if np.any((D > 0).sum(axis=1) > 1):
        raise InputError("q-sample tensors need a deterministic model; dilate it first")
    return Imps(d.composite_alphabet, np.sqrt(D), gauge="none")


def _schmidt_rotate(A: np.ndarray, state: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lam, U = psd_eigh(state)
    lam = lam / lam.sum()
    lam = np.where(lam > SCHMIDT_CLAMP, lam, 0.0)
    lam = lam / lam.sum()
    return np.matmul(U.T, np.matmul(A, U)), lam, U


def _left_isometry(A: np.ndarray, X: np.ndarray, iters: int = 30) -> np.ndarray:
    """Isometric ``A_L`` with ``A_L P = X A`` for the polar factor ``P`` of ``stack(X A)``."""
    n, d, _ = A.shape
    AL = None
    for _ in range(iters):
        S = np.matmul(X, A).reshape(n * d, d)
        U, s, Vt = np.linalg.svd(S, full_matrices=False)
        AL = (U @ Vt).reshape(n, d, d)
        P = (Vt.T * s) @ Vt
        P = P / np.linalg.norm(P)
        delta = np.linalg.norm(P - X)
        X = P
        if delta < 1e-14:
            break
    return AL


def _right_isometry(A: np.ndarray, Y: np.ndarray, iters: int = 30) -> np.ndarray:
    """Co-isometric ``A_R`` with ``P A_R = A Y`` for the left polar factor of ``[A^a Y]``."""
    n, d, _ = A.shape
    AR = None
    for _ in range(iters):
        H = np.matmul(A, Y).transpose(1, 0, 2).reshape(d, n * d)
        U, s, Vt = np.linalg.svd(H, full_matrices=False)
        AR = (U @ Vt).reshape(d, n, d).transpose(1, 0, 2)
        P = (U * s) @ U.T
        P = P / np.linalg.norm(P)
        delta = np.linalg.norm(P - Y)
        Y = P
        if delta < 1e-14:
            break
    return AR


def _psd_sqrt(V: np.ndarray) -> np.ndarray:
    w, U = psd_eigh(V)
    return (U * np.sqrt(w)) @ U.T


def _trim_left(A: np.ndarray, r: int) -> np.ndarray:
    n = A.shape[0]
    B = A[:, :r, :r]
    return polar_isometry(B.reshape(n * r, r)).reshape(n, r, r)


def _trim_right(A: np.ndarray, r: int) -> np.ndarray:
    n = A.shape[0]
    B = A[:, :r, :r]
    H = polar_isometry(B.transpose(1, 0, 2).reshape(r, n * r))
    return H.reshape(r, n, r).transpose(1, 0, 2)


def canonical_form(m: Imps, *, eig: TransferEig | None = None) -> tuple[Imps, Imps, np.ndarray]:
    """Left- and right-gauged copies of ``m`` in their Schmidt bases, and the Schmidt spectrum.

    The gauge transforms are obtained from polar decompositions seeded with
    square roots of the transfer fixed points, so no matrix inverse is taken.
    Directions carrying Schmidt weight below ``SCHMIDT_CLAMP`` are removed
    from the returned tensors; the returned spectrum keeps the full length
    ``m.bond_dim`` (zeros included).

    Raises
    ------
    DegeneracyError
        If the relative spectral gap of the transfer map is below ``GAP_THRESHOLD``.
    """
    eig = eig or transfer_eig(m)
    d = m.bond_dim
    if d > 1 and not eig.gap > GAP_THRESHOLD:
        raise DegeneracyError(
            f"leading transfer eigenvalue is not isolated: |eta0|={abs(eig.eta):.15g}, "
            f"|eta1|={eig.second:.15g}",
            {"eta0": eig.eta, "eta1": eig.second},
        )
    A = m.tensors / np.sqrt(eig.eta)

    AL = _left_isometry(A, _psd_sqrt(eig.V_r) / np.linalg.norm(_psd_sqrt(eig.V_r)))
    rho = leading_eigenpair(lambda X: apply_transfer(AL, X), (d, d)).vector
    rho = _normalize_psd(rho)
    AL, lam, _ = _schmidt_rotate(AL, rho)
    r = max(int(np.sum(lam > 0)), 1)
    if r < d:
        AL = _trim_left(AL, r)

    AR = _right_isometry(A, _psd_sqrt(eig.V_l) / np.linalg.norm(_psd_sqrt(eig.V_l)))
    sigma = leading_eigenpair(lambda X: apply_transfer_adjoint(AR, X), (d, d)).vector
    sigma = _normalize_psd(sigma)
    AR, lam_r, _ = _schmidt_rotate(AR, sigma)
    r_r = max(int(np.sum(lam_r > 0)), 1)
    if r_r < d:
        AR = _trim_right(AR, r_r)

    schmidt = lam[:r] / lam[:r].sum()
    left = Imps(m.alphabet, AL, gauge="left", schmidt=schmidt)
    right = Imps(m.alphabet, AR, gauge="right", schmidt=lam_r[:r_r] / lam_r[:r_r].sum())
    return left, right, lam


def _check_eig(m: Imps, eig: TransferEig | None) -> TransferEig:
    if eig is None:
        return transfer_eig(m)
    if eig.V_l.shape != (m.bond_dim, m.bond_dim):
        raise InputError("eigen data does not match the iMPS bond dimension")
    return eig


def block_probability(m: Imps, eig: TransferEig | None, word) -> float:
    """Double-layer block probability ``Tr(M_w V_l M_w^T V_r) / eta^L``."""
    eig = _check_eig(m, eig)
    idx = encode_word(word, m.alphabet)
    rho = eig.V_l
    for a in idx:
        A = m.tensors[a]
        rho = A @ rho @ A.T
    return float(np.sum(rho * eig.V_r.T) / eig.eta ** len(idx))


def all_block_probabilities(m: Imps, eig: TransferEig | None, length: int) -> np.ndarray:
    """Block probabilities of all words of ``length`` (first symbol most significant)."""
    eig = _check_eig(m, eig)
    A = m.tensors
    d = m.bond_dim
    rho = eig.V_l[None]
    for _ in range(length):
        rho = np.einsum("aij,wjk,alk->wail", A, rho, A, optimize=True).reshape(-1, d, d)
    return np.einsum("wij,ji->w", rho, eig.V_r) / eig.eta ** length


def slice_matrix(m: Imps, atol: float = 0.0) -> np.ndarray:
    """Horizontal concatenation of the nonzero site tensors."""
    keep = [A for A in m.tensors if np.max(np.abs(A), initial=0.0) > atol]
    if not keep:
        return np.zeros((m.bond_dim, 0))
    return np.hstack(keep)


@dataclass(frozen=True)
class SpectrumDiagnostics:
    tail: float
    entropy: float
    slice_rank: int


def spectrum_diagnostics(schmidt, d_tilde: int, m: Imps) -> SpectrumDiagnostics:
    """Discarded tail weight beyond ``d_tilde``, bond entropy (bits) and slice-matrix rank."""
    lam = np.sort(np.asarray(schmidt, dtype=float))[::-1]
    if int(d_tilde) != d_tilde or d_tilde < 1:
        raise InputError("d_tilde must be a positive integer")
    lam = np.where(lam > SCHMIDT_CLAMP, lam, 0.0)
    tail = float(np.sum(lam[d_tilde:]))
    return SpectrumDiagnostics(tail, entropy_bits(lam), numerical_rank(slice_matrix(m), RANK_RTOL))


def with_gauge(m: Imps, gauge: str) -> Imps:
    return replace(m, gauge=gauge)
