"""Dilation and quantum dimension reduction of hidden Markov models.

An HMM is dilated to a deterministic model over an augmented alphabet, its
q-sample iMPS is truncated to a smaller bond dimension, and the truncated
tensors are read back as a quantum instrument whose divergence from the
original process is measured.
"""

from ._validation import (
    DegeneracyError,
    ErgodicityError,
    GaugeError,
    InputError,
    QdimredError,
    SolverError,
)
from .dilation import DilatedHmm, LabellingStrategy, dilate, make_labelling, verify_dilation
from .divergence import cdr, certify_bounds, cfdr_finite_L, data_processing_check
from .estimator import QuantumHMMCompressor
from .imps import Imps, block_probability, canonical_form, qsample_tensors, transfer_eig
from .merging import GreedyStateMerger, greedy_merge_baseline
from .models import Hmm, LinearGenerator, bernoulli_hmm, build_tns, random_hmm, word_probability
from .pipeline import compress
from .qhmm import QhmmModel, reconstruct_qhmm, sample_blocks, sample_sequence, word_probability_q
from .training import BaumWelchHMM, VectorQuantizer, baum_welch_train, kmeans_quantize
from .truncation import TruncationOptions, TruncationResult, variational_truncate

__version__ = "0.1.0"

__all__ = [
    "QdimredError", "InputError", "ErgodicityError", "SolverError", "DegeneracyError", "GaugeError",
    "Hmm", "LinearGenerator", "bernoulli_hmm", "build_tns", "random_hmm", "word_probability",
    "DilatedHmm", "LabellingStrategy", "dilate", "make_labelling", "verify_dilation",
    "Imps", "block_probability", "canonical_form", "qsample_tensors", "transfer_eig",
    "TruncationOptions", "TruncationResult", "variational_truncate",
    "QhmmModel", "reconstruct_qhmm", "sample_blocks", "sample_sequence", "word_probability_q",
    "cdr", "certify_bounds", "cfdr_finite_L", "data_processing_check",
    "BaumWelchHMM", "VectorQuantizer", "baum_welch_train", "kmeans_quantize",
    "GreedyStateMerger", "greedy_merge_baseline",
    "QuantumHMMCompressor", "compress",
]
