"""Maximum-likelihood training of edge-emitting HMMs and vector quantization of features."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import InputError, check_positive_int
from .models import Hmm

__all__ = [
    "TrainingConfig",
    "TrainingResult",
    "DuplicateCentroidError",
    "baum_welch_fit",
    "baum_welch_train",
    "sequence_log_likelihood",
    "kmeans_quantize",
    "BaumWelchHMM",
    "VectorQuantizer",
]

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
# floats per temporary in the batched E-step
_CHUNK = 1 << 22
INIT_SCHEMES = ("random", "uniform-jitter")


@dataclass(frozen=True)
class TrainingConfig:
    """Baum-Welch settings.

    ``tol`` is the minimum gain in log-likelihood per observed symbol (nats)
    needed to keep iterating.
    """

    num_states: int
    max_iterations: int = 200
    tol: float = 1e-6
    seed: int = 0
    init: str = "random"

    def __post_init__(self):
        check_positive_int(self.num_states, "num_states")
        check_positive_int(self.max_iterations, "max_iterations")
        if not self.tol > 0:
            raise InputError("tol must be positive")
        if self.init not in INIT_SCHEMES:
            raise InputError(f"init must be one of {INIT_SCHEMES}")


@dataclass
class TrainingResult:
    model: Hmm
    log_likelihood: list[float]
    num_symbols: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def bits_per_symbol(self) -> float:
        """Final log-likelihood per observed symbol in bits (negative)."""
        return self.log_likelihood[-1] / (self.num_symbols * math.log(2))


def _encode(sequences, alphabet):
    if alphabet is None:
        alphabet = sorted({str(s) for seq in sequences for s in seq})
    alphabet = tuple(str(a) for a in alphabet)
    index = {a: i for i, a in enumerate(alphabet)}
    seqs = []
    for seq in sequences:
        try:
            seqs.append(np.array([index[str(s)] for s in seq], dtype=np.int64))
        except KeyError as exc:
            raise InputError(f"symbol {exc.args[0]!r} is not in the alphabet {alphabet}") from None
    seqs = [s for s in seqs if s.size]
    if not seqs:
        raise InputError("training data is empty")
    return alphabet, seqs


def _pad(seqs, pad):
    L = max(len(s) for s in seqs)
    X = np.full((len(seqs), L), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        X[i, : len(s)] = s
    return X


def _initial_tensor(d, n_x, rng, scheme):
    if scheme == "random":
        T = rng.random((n_x, d, d)) + 0.05
    else:
        T = np.ones((n_x, d, d)) + 1e-2 * rng.standard_normal((n_x, d, d))
        T = np.abs(T)
    return T / T.sum(axis=(0, 1), keepdims=True)


def _forward_backward(T_ext, X, pi0):
    """Scaled forward/backward passes over a padded batch.

    ``T_ext`` carries an identity "symbol" at the last index used for padding.
    Returns alpha (L+1, B, d), beta (L+1, B, d) and scales c (L, B).
    """
    B, L = X.shape
    d = T_ext.shape[1]
    alpha = np.empty((L + 1, B, d))
    c = np.empty((L, B))
    alpha[0] = pi0
    for t in range(L):
        a = np.einsum("bij,bj->bi", T_ext[X[:, t]], alpha[t])
        c[t] = a.sum(axis=1)
        alpha[t + 1] = a / c[t][:, None]
    beta = np.empty((L + 1, B, d))
    beta[L] = 1.0
    for t in range(L - 1, -1, -1):
        beta[t] = np.einsum("bij,bi->bj", T_ext[X[:, t]], beta[t + 1]) / c[t][:, None]
    return alpha, beta, c


def sequence_log_likelihood(model: Hmm, sequences, init: np.ndarray | None = None) -> float:
    """Total log-likelihood (nats) of ``sequences`` under ``model`` started from ``init`` (default stationary)."""
    _, seqs = _encode(sequences, model.alphabet)
    d = model.num_states
    T_ext = np.concatenate([model.transitions, np.eye(d)[None]], axis=0)
    X = _pad(seqs, model.num_symbols)
    pi0 = model.stationary if init is None else np.asarray(init, dtype=float)
    _, _, c = _forward_backward(T_ext, X, np.broadcast_to(pi0, (len(seqs), d)))
    return float(np.sum(np.log(c)))


def baum_welch_fit(sequences, cfg: TrainingConfig, alphabet=None) -> TrainingResult:
    """Fit ``T[x, s', s]`` and an initial state distribution by expectation-maximization.

    Sequences of unequal length are padded with an identity step, so all of
    them are processed as one batch. Columns that receive no expected counts
    are floored at ``1e-12`` and renormalized; this is recorded in
    ``diagnostics['floored_columns']``.
    """
    alphabet, seqs = _encode(sequences, alphabet)
    n_x, d = len(alphabet), cfg.num_states
    rng = np.random.default_rng(cfg.seed)
    T = _initial_tensor(d, n_x, rng, cfg.init)
    pi0 = np.full(d, 1.0 / d)
    X = _pad(seqs, n_x)
    B, L = X.shape
    n_symbols = int(sum(len(s) for s in seqs))
    onehot = np.zeros((L, B, n_x + 1))
    onehot[np.arange(L)[:, None], np.arange(B)[None, :], X.T] = 1.0
    onehot = onehot[:, :, :n_x]

    history: list[float] = []
    floored = 0
    violations = []
    converged = False
    for it in range(cfg.max_iterations):
        T_ext = np.concatenate([T, np.eye(d)[None]], axis=0)
        alpha, beta, c = _forward_backward(T_ext, X, np.broadcast_to(pi0, (B, d)))
        ll = float(np.sum(np.log(c)))
        if history and ll < history[-1] - 1e-9:
            violations.append((it, history[-1] - ll))
        history.append(ll)
        if len(history) > 1 and (history[-1] - history[-2]) / n_symbols < cfg.tol:
            converged = True
            break
        # expected transition counts, summed over the batch and time in chunks
        counts = np.zeros_like(T)
        step = max(1, _CHUNK // (B * d * d))
        for t0 in range(0, L, step):
            sl = slice(t0, t0 + step)
            W = beta[1:][sl, :, :, None] * alpha[:-1][sl, :, None, :] / c[sl, :, None, None]
            counts += np.einsum("tbx,tbij->xij", onehot[sl], W)
        counts *= T
        gamma0 = alpha[0] * beta[0]
        pi0 = gamma0.sum(axis=0) / gamma0.sum()
        col = counts.sum(axis=(0, 1))
        empty = col <= 0
        if np.any(empty):
            floored += int(empty.sum())
            counts[:, :, empty] = PROB_FLOOR
            col = counts.sum(axis=(0, 1))
        T = counts / col
    if violations:
        logger.warning("log-likelihood decreased in %d Baum-Welch steps", len(violations))
    model = Hmm(alphabet, T)
    diag = {"iterations": len(history), "floored_columns": floored, "monotone_violations": violations,
            "initial_distribution": pi0.tolist()}
    return TrainingResult(model, history, n_symbols, converged, diag)


def baum_welch_train(sequences, cfg: TrainingConfig, alphabet=None) -> Hmm:
    """Train an edge-emitting HMM; see :func:`baum_welch_fit` for the full result."""
    return baum_welch_fit(sequences, cfg, alphabet).model


class DuplicateCentroidError(InputError):
    """Raised when more clusters are requested than there are distinct points."""


def _lloyd(Xf, centers, max_iter, tol):
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = ((Xf[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        wcss = float(d2[np.arange(len(Xf)), labels].sum())
        history.append(wcss)
        new = centers.copy()
        for j in range(len(centers)):
            members = Xf[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.max(np.abs(new - centers)))
        centers = new
        if shift <= tol:
            break
    d2 = ((Xf[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(len(Xf)), labels].sum()))
    return centers, labels, history


def kmeans_quantize(features, k: int, seed: int = 0, *, max_iter: int = 300, tol: float = 0.0,
                    return_history: bool = False):
    """Vector-quantize feature vectors with Lloyd's algorithm from a k-means++ seeding.

    Returns
    -------
    codebook : ndarray (k, dim)
    labels : ndarray of int
        Index of the nearest centroid for every row.
    history : list of float, optional
        Within-cluster sum of squares per iteration (non-increasing).
    """
    Xf = check_array(features, dtype=float)
    check_positive_int(k, "k")
    n_distinct = len(np.unique(Xf, axis=0))
    if k > n_distinct:
        raise DuplicateCentroidError(f"k={k} exceeds the {n_distinct} distinct feature vectors")
    centers, _ = kmeans_plusplus(Xf, k, random_state=seed)
    codebook, labels, history = _lloyd(Xf, centers, max_iter, tol)
    if return_history:
        return codebook, labels, history
    return codebook, labels


class BaumWelchHMM(BaseEstimator):
    """Estimator wrapper around :func:`baum_welch_fit`.

    ``fit`` takes a list of symbol sequences; ``score`` returns the
    log-likelihood per symbol in bits under the stationary start.
    """

    def __init__(self, n_states=2, max_iter=200, tol=1e-6, seed=0, init="random", alphabet=None):
        self.n_states = n_states
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed
        self.init = init
        self.alphabet = alphabet

    def fit(self, X, y=None):
        cfg = TrainingConfig(self.n_states, self.max_iter, self.tol, self.seed, self.init)
        res = baum_welch_fit(X, cfg, self.alphabet)
        self.model_ = res.model
        self.log_likelihood_ = res.log_likelihood
        self.converged_ = res.converged
        self.diagnostics_ = res.diagnostics
        return self

    def score(self, X, y=None):
        check_is_fitted(self, "model_")
        n = sum(len(s) for s in X)
        return sequence_log_likelihood(self.model_, X) / (n * math.log(2))


class VectorQuantizer(TransformerMixin, BaseEstimator):
    """k-means codebook; ``transform`` gives centroid distances, ``predict`` symbol indices."""

    def __init__(self, n_clusters=8, seed=0, max_iter=300):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X, y=None):
        codebook, labels, history = kmeans_quantize(X, self.n_clusters, self.seed,
                                                    max_iter=self.max_iter, return_history=True)
        self.cluster_centers_ = codebook
        self.labels_ = labels
        self.wcss_history_ = history
        self.n_features_in_ = codebook.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        Xf = check_array(X, dtype=float)
        return np.sqrt(((Xf[:, None, :] - self.cluster_centers_[None]) ** 2).sum(axis=2))

    def predict(self, X):
        return np.argmin(self.transform(X), axis=1)
