"""scikit-learn style front end to the compression pipeline."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .divergence import cdr
from .models import Hmm
from .pipeline import compress

__all__ = ["QuantumHMMCompressor"]


class QuantumHMMCompressor(BaseEstimator):
    """Compress an HMM into a quantum instrument with ``bond_dim`` memory dimensions.

    ``fit`` takes an :class:`~qdimred.models.Hmm`; ``transform`` returns the
    fitted :class:`~qdimred.qhmm.QhmmModel`; ``score`` is the negative
    co-emission divergence rate between a model and the reconstruction, so
    larger is better.

    Parameters
    ----------
    bond_dim : int
        Target memory dimension.
    labelling : str
        Labelling strategy, e.g. ``"sequential"`` or ``"random:3"``.
    restarts, max_sweeps, tol, seed
        Truncation settings.
    """

    def __init__(self, bond_dim=2, labelling="sequential", restarts=3, max_sweeps=500, tol=1e-12, seed=0):
        self.bond_dim = bond_dim
        self.labelling = labelling
        self.restarts = restarts
        self.max_sweeps = max_sweeps
        self.tol = tol
        self.seed = seed

    def fit(self, X: Hmm, y=None):
        out = compress(X, self.bond_dim, self.labelling, restarts=self.restarts, seed=self.seed,
                       max_sweeps=self.max_sweeps, tol=self.tol)
        self.result_ = out
        self.qhmm_ = out.qhmm
        self.imps_ = out.chosen.imps
        self.fidelity_ = out.chosen.fidelity
        self.schmidt_ = out.schmidt
        self.divergence_rate_ = out.divergence.rate
        return self

    def transform(self, X=None):
        check_is_fitted(self, "qhmm_")
        return self.qhmm_

    def score(self, X: Hmm, y=None) -> float:
        check_is_fitted(self, "qhmm_")
        return -cdr(X.generator(), self.qhmm_.generator()).rate
