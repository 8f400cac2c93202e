"""End-to-end orchestration: dilate, truncate, reconstruct, score and report.

Output files are deterministic functions of their inputs and seeds. Wall
times are therefore kept out of the result tables and written to separate
``timings`` files.

Seed splitting
--------------
Every row of a sweep is identified by a row key such as
``tns-N5-p0.2/sequential/seed=0/d=3``. The truncation seed of that row is
the first 8 bytes (big endian) of ``sha256(f"{master_seed}:{row_key}")``
reduced modulo ``2**32``; see :func:`derive_seed`.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._validation import InputError, QdimredError
from .dilation import DilatedHmm, DilationReport, LabellingStrategy, dilate, make_labelling, verify_dilation
from .divergence import BoundCertificate, CdrResult, cdr, certify_bounds
from .imps import Imps, SpectrumDiagnostics, canonical_form, qsample_tensors, spectrum_diagnostics
from .io import (
    atomic_write_text,
    imps_from_dict,
    imps_to_dict,
    read_features,
    read_hmm,
    read_json,
    read_sequences,
    write_json,
)
from .merging import greedy_merge_baseline
from .models import Hmm, build_tns
from .qhmm import QhmmModel, quantum_memory, reconstruct_qhmm
from .training import TrainingConfig, baum_welch_fit, kmeans_quantize
from .truncation import TruncationOptions, TruncationResult, variational_truncate

__all__ = [
    "SCHEMA_VERSION",
    "RESULT_COLUMNS",
    "COMPARISON_COLUMNS",
    "CERTIFICATE_COLUMNS",
    "PLOT_FLOOR",
    "derive_seed",
    "resolve_labelling",
    "CompressionOutput",
    "compress",
    "result_row",
    "format_csv",
    "parse_csv",
    "SweepConfig",
    "run_sweep",
    "compare_baseline",
    "certify_model",
    "train_model",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PLOT_FLOOR = 1e-9
CERT_SLACK = 1e-12

RESULT_COLUMNS = (
    "schema_version", "row_key", "model_id", "N", "p", "labelling", "d_tilde", "seed", "status",
    "fidelity", "fidelity_best", "restart", "R_C", "C_q", "H_lambda", "eps_tail", "rank_K",
    "entropy_bound", "tail_ok", "entropy_rank_ok", "message",
)
COMPARISON_COLUMNS = (
    "schema_version", "model_id", "method", "memory_dim", "R_C", "fidelity", "seed", "status", "message",
)
CERTIFICATE_COLUMNS = (
    "schema_version", "model_id", "labelling", "d_tilde", "H_lambda", "eps_tail", "rank_K",
    "entropy_bound", "tail_ok", "entropy_rank_ok",
)


def derive_seed(master_seed: int, key: str) -> int:
    """Child seed for ``key``: ``sha256(f"{master_seed}:{key}")`` folded to 32 bits."""
    digest = hashlib.sha256(f"{int(master_seed)}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 32)


# ----------------------------------------------------------------- CSV helpers

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v + 0.0)
    return str(v)


def format_csv(columns, rows, header: bool = True) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def parse_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------- core pipeline

@dataclass
class CompressionOutput:
    """Everything produced by one run of :func:`compress`.

    ``truncation`` is the highest-fidelity start; ``chosen`` is the start
    whose reconstruction has the lowest divergence rate from the model.
    """

    model: Hmm
    dilated: DilatedHmm
    report: DilationReport
    qsample: Imps
    schmidt: np.ndarray
    truncation: TruncationResult
    chosen: TruncationResult
    qhmm: QhmmModel
    divergence: CdrResult
    c_q: float
    spectrum: SpectrumDiagnostics
    certificate: BoundCertificate | None
    candidate_rates: list[float] = field(default_factory=list)

    @property
    def warm_starts(self) -> list[Imps]:
        """Highest-fidelity solution, plus the lowest-rate one when it differs."""
        starts = [self.truncation.imps]
        if self.chosen.restart != self.truncation.restart:
            starts.append(self.chosen.imps)
        return starts

    @property
    def tail_ok(self) -> bool:
        if self.certificate is not None:
            return self.certificate.tail_ok
        # at d_tilde = 1 the bound H / log2(1) is infinite unless H = 0
        return self.spectrum.entropy > 0 or self.spectrum.tail <= CERT_SLACK

    @property
    def entropy_rank_ok(self) -> bool:
        if self.certificate is not None:
            return self.certificate.entropy_rank_ok
        K = self.spectrum.slice_rank
        return self.spectrum.entropy <= (math.log2(K) if K > 0 else 0.0) + CERT_SLACK

    @property
    def verified(self) -> bool:
        return self.report.passed and self.tail_ok and self.entropy_rank_ok


def compress(model: Hmm, d_tilde: int, strategy="sequential", *, restarts: int = 3, seed: int = 0,
             max_sweeps: int = 500, tol: float = 1e-12, initial: Imps | Sequence[Imps] | None = None,
             verify_length: int = 4) -> CompressionOutput:
    """Run the four-step pipeline on ``model`` at memory dimension ``d_tilde``.

    Every truncation start is reconstructed and scored; the one with the
    lowest divergence rate from ``model`` is reported (ties go to the
    lower start index).
    """
    if not 1 <= d_tilde <= model.num_states:
        raise InputError(f"d_tilde must lie in [1, {model.num_states}]")
    dil = dilate(model, make_labelling(model, strategy))
    report = verify_dilation(dil, max_word_len=verify_length)
    qs = qsample_tensors(dil)
    _, _, lam = canonical_form(qs)
    opts = TruncationOptions(bond_dim=d_tilde, max_sweeps=max_sweeps, tol=tol, restarts=restarts, seed=seed)
    trunc = variational_truncate(qs, opts, initial=initial)
    gen = model.generator()
    scored = []
    for cand in trunc.candidates:
        q = reconstruct_qhmm(cand)
        scored.append((cdr(gen, q.generator()), q, cand))
    rates = [s[0].rate for s in scored]
    best = min(range(len(scored)), key=lambda i: (rates[i], i))
    div, q, chosen = scored[best]
    k = min(d_tilde, len(lam))
    diag = spectrum_diagnostics(lam, k, qs)
    cert = certify_bounds(qs, k, lam, slack=CERT_SLACK) if k >= 2 else None
    return CompressionOutput(model, dil, report, qs, lam, trunc, chosen, q, div, quantum_memory(q),
                             diag, cert, rates)


def result_row(out: CompressionOutput, *, model_id: str, labelling: str, d_tilde: int, seed: int,
               row_key: str = "", N=None, p=None) -> dict:
    cert = out.certificate
    status = "ok" if out.verified else "verification-failed"
    msg = ""
    if not out.report.passed:
        msg = f"dilation: {out.report.details}"
    elif not (out.tail_ok and out.entropy_rank_ok):
        msg = "bound certificate failed"
    if out.divergence.negative:
        msg = (msg + "; " if msg else "") + "negative R_C"
    return {
        "schema_version": SCHEMA_VERSION,
        "row_key": row_key,
        "model_id": model_id,
        "N": out.model.num_states if N is None else N,
        "p": p,
        "labelling": labelling,
        "d_tilde": d_tilde,
        "seed": seed,
        "status": status,
        "fidelity": out.chosen.fidelity,
        "fidelity_best": out.truncation.fidelity,
        "restart": out.chosen.restart,
        "R_C": out.divergence.rate,
        "C_q": out.c_q,
        "H_lambda": out.spectrum.entropy,
        "eps_tail": out.spectrum.tail,
        "rank_K": out.spectrum.slice_rank,
        "entropy_bound": None if cert is None else cert.entropy_bound,
        "tail_ok": out.tail_ok,
        "entropy_rank_ok": out.entropy_rank_ok,
        "message": msg,
    }


# ----------------------------------------------------------------- sweep

@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    N: int | None = None
    p: float | None = None
    hmm_file: str | None = None
    train: dict | None = None

    def load(self) -> Hmm:
        if self.N is not None and self.hmm_file is None and self.train is None:
            return build_tns(self.N, self.p)
        if self.hmm_file is not None:
            return read_hmm(self.hmm_file)
        return train_model(**self.train).model


@dataclass(frozen=True)
class SweepConfig:
    """Parsed sweep configuration.

    JSON layout::

        {"model": {"tns": {"N": [5, 15], "p": [0.2, 0.8]}}
                  | {"hmm_file": "model.json"}
                  | {"train": {"data_file": "seqs.txt", "num_states": 30, "alphabet_size": 4}},
         "labellings": ["sequential"], "d_tilde": [1, 2, 3] or "all",
         "restarts": 3, "seeds": [0], "out_dir": "results",
         "max_sweeps": 500, "tolerance": 1e-12}

    ``alphabet_size`` is the codebook size when ``"features": true``.
    Relative paths are resolved against the directory of the config file.
    """

    models: tuple[ModelSpec, ...]
    labellings: tuple[str, ...] = ("sequential",)
    d_tilde: tuple[int, ...] | str = "all"
    restarts: int = 3
    seeds: tuple[int, ...] = (0,)
    out_dir: str | None = None
    max_sweeps: int = 500
    tolerance: float = 1e-12

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | os.PathLike = ".") -> "SweepConfig":
        if not isinstance(d, dict) or "model" not in d:
            raise InputError("sweep config needs a 'model' section")
        src = d["model"]
        base = Path(base_dir)
        if not isinstance(src, dict) or len(src) != 1:
            raise InputError("'model' must contain exactly one of tns, hmm_file, train")
        kind, spec = next(iter(src.items()))
        if kind == "tns":
            Ns, ps = spec.get("N", []), spec.get("p", [])
            if not Ns or not ps:
                raise InputError("tns source needs nonempty N and p lists")
            models = tuple(ModelSpec(f"tns-N{int(n)}-p{float(p):g}", int(n), float(p)) for n in Ns for p in ps)
        elif kind == "hmm_file":
            path = base / spec
            models = (ModelSpec(Path(spec).stem, hmm_file=str(path)),)
        elif kind == "train":
            if "data_file" not in spec or "num_states" not in spec:
                raise InputError("train source needs data_file and num_states")
            t = dict(spec)
            t["data_file"] = str(base / t["data_file"])
            if "alphabet_size" in t:
                t["codebook_size"] = t.pop("alphabet_size")
            models = (ModelSpec(f"trained-{Path(spec['data_file']).stem}", train=t),)
        else:
            raise InputError(f"unknown model source {kind!r}")
        labellings = tuple(str(s) for s in d.get("labellings", ["sequential"]))
        seeds = tuple(int(s) for s in d.get("seeds", [0]))
        dt = d.get("d_tilde", "all")
        if dt != "all":
            dt = tuple(sorted({int(v) for v in dt}))
        if not labellings or not seeds or (dt != "all" and not dt):
            raise InputError("labellings, seeds and d_tilde must be nonempty")
        for s in labellings:
            tag = s.partition(":")[0]
            if tag != "random":
                LabellingStrategy.parse(s)
        out_dir = d.get("out_dir")
        cfg = cls(models, labellings, dt, int(d.get("restarts", 3)), seeds,
                  None if out_dir is None else str(base / out_dir),
                  int(d.get("max_sweeps", 500)), float(d.get("tolerance", 1e-12)))
        if cfg.restarts < 1:
            raise InputError("restarts must be at least 1")
        return cfg

    @classmethod
    def from_file(cls, path) -> "SweepConfig":
        return cls.from_dict(read_json(path), Path(path).parent)


def resolve_labelling(text, seed: int, model_id: str) -> LabellingStrategy:
    """Parse a strategy; a bare ``random`` gets a seed derived from the master seed and model id."""
    if isinstance(text, LabellingStrategy):
        return text
    tag, _, s = text.partition(":")
    if tag == "random" and not s:
        return LabellingStrategy("random", derive_seed(seed, f"{model_id}/labelling"))
    return LabellingStrategy.parse(text)


def _safe(key: str) -> str:
    return key.replace("/", "__").replace("=", "")


def _row_sort_key(row: dict):
    return (row["model_id"], row["labelling"], int(row["seed"]), int(row["d_tilde"]))


@dataclass(frozen=True)
class _Group:
    spec: ModelSpec
    labelling: str
    seed: int
    d_list: tuple[int, ...] | str
    restarts: int
    max_sweeps: int
    tol: float
    out_dir: str
    done: frozenset


def _run_group(g: _Group):
    """Rows of one (model, labelling, seed) chain, warm-starting each d_tilde from the previous one."""
    model = g.spec.load()
    d_list = tuple(range(1, model.num_states + 1)) if g.d_list == "all" else g.d_list
    if max(d_list) > model.num_states:
        raise InputError(f"{g.spec.model_id}: d_tilde {max(d_list)} exceeds {model.num_states} states")
    strategy = resolve_labelling(g.labelling, g.seed, g.spec.model_id)
    imps_dir = Path(g.out_dir) / "imps"
    rows, timings, spectrum = [], [], None
    prev = None
    for d in d_list:
        key = f"{g.spec.model_id}/{strategy}/seed={g.seed}/d={d}"
        imps_path = imps_dir / f"{_safe(key)}.json"
        if key in g.done and imps_path.exists():
            prev = [imps_from_dict(d) for d in read_json(imps_path)["warm_starts"]]
            continue
        t0 = time.perf_counter()
        try:
            out = compress(model, d, strategy, restarts=g.restarts, seed=derive_seed(g.seed, key),
                           max_sweeps=g.max_sweeps, tol=g.tol, initial=prev)
        except (QdimredError, np.linalg.LinAlgError) as exc:
            rows.append({"schema_version": SCHEMA_VERSION, "row_key": key, "model_id": g.spec.model_id,
                         "N": g.spec.N if g.spec.N is not None else model.num_states, "p": g.spec.p,
                         "labelling": str(strategy), "d_tilde": d, "seed": g.seed,
                         "status": f"error:{type(exc).__name__}", "message": str(exc)})
            timings.append((key, time.perf_counter() - t0))
            continue
        prev = out.warm_starts
        write_json({"warm_starts": [imps_to_dict(w) for w in prev]}, imps_path)
        if spectrum is None:
            spectrum = out.schmidt
        rows.append(result_row(out, model_id=g.spec.model_id, labelling=str(strategy), d_tilde=d,
                               seed=g.seed, row_key=key, N=g.spec.N, p=g.spec.p))
        timings.append((key, time.perf_counter() - t0))
    if spectrum is None:
        dil = dilate(model, make_labelling(model, strategy))
        _, _, spectrum = canonical_form(qsample_tensors(dil))
    return g.spec.model_id, str(strategy), rows, timings, np.asarray(spectrum)


def _plot_text(points) -> str:
    return "".join(f"{_cell(x)},{_cell(max(y, PLOT_FLOOR))}\n" for x, y in points)


def run_sweep(cfg: SweepConfig, out_dir, threads: int = 1) -> list[dict]:
    """Run every (model, labelling, seed) chain of ``cfg`` and write the result files.

    Files in ``out_dir``: ``results.csv`` (one row per model, labelling,
    d_tilde and seed), ``spectra.csv``, ``timings.csv`` (not deterministic),
    headerless ``plots/*.csv`` curves and the per-row ``imps/*.json`` tensors
    used for warm starts when a sweep is resumed. Rows already present with
    status ``ok`` are skipped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.csv"
    existing: dict[str, dict] = {}
    if results_path.exists():
        for r in parse_csv(results_path):
            if r.get("schema_version") != str(SCHEMA_VERSION):
                raise InputError(f"{results_path} was written with another schema version")
            existing[r["row_key"]] = r
    done = frozenset(k for k, r in existing.items() if r["status"] == "ok")
    groups = [_Group(spec, lab, seed, cfg.d_tilde, cfg.restarts, cfg.max_sweeps, cfg.tolerance, str(out), done)
              for spec in cfg.models for lab in cfg.labellings for seed in cfg.seeds]

    rows = {k: r for k, r in existing.items() if k in done}
    spectra: dict[tuple[str, str], np.ndarray] = {}
    timing_lines = []

    def collect(res):
        model_id, lab, new_rows, timings, lam = res
        for r in new_rows:
            rows[r["row_key"]] = r
        spectra[(model_id, lab)] = lam
        timing_lines.extend(timings)
        _write_sweep_files(out, rows, spectra, timing_lines)

    if threads > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(_run_group, groups):
                collect(res)
    else:
        for g in groups:
            collect(_run_group(g))
    return sorted(rows.values(), key=_row_sort_key)


def _write_sweep_files(out: Path, rows: dict, spectra: dict, timings: list) -> None:
    ordered = sorted(rows.values(), key=_row_sort_key)
    atomic_write_text(out / "results.csv", format_csv(RESULT_COLUMNS, ordered))
    spec_rows = [{"schema_version": SCHEMA_VERSION, "model_id": m, "labelling": lab, "index": i, "lambda": v}
                 for (m, lab), lam in sorted(spectra.items()) for i, v in enumerate(lam)]
    atomic_write_text(out / "spectra.csv",
                      format_csv(("schema_version", "model_id", "labelling", "index", "lambda"), spec_rows))
    atomic_write_text(out / "timings.csv",
                      format_csv(("row_key", "wall_time"), [{"row_key": k, "wall_time": t} for k, t in timings]))
    curves: dict[str, list] = {}
    for r in ordered:
        if r["status"] != "ok":
            continue
        name = _safe(f"{r['model_id']}__{r['labelling']}__seed{r['seed']}").replace(":", "-")
        curves.setdefault(name, []).append((int(r["d_tilde"]), float(r["R_C"])))
    for name, pts in curves.items():
        atomic_write_text(out / "plots" / f"{name}.csv", _plot_text(pts))


# ----------------------------------------------------------------- comparison

def compare_baseline(model: Hmm, d_list, state_list, *, model_id: str = "model", strategy="sequential",
                     restarts: int = 3, seed: int = 0, max_sweeps: int = 500, tol: float = 1e-12) -> list[dict]:
    """Quantum compression versus greedy state merging at matching memory dimensions.

    Quantum rows warm-start each ``d_tilde`` from the previous one; classical
    rows come from one greedy merge path down to ``min(state_list)``.
    """
    d_s = model.num_states
    d_list = sorted({int(d) for d in d_list})
    state_list = sorted({int(k) for k in state_list})
    if not d_list and not state_list:
        raise InputError("nothing to compare")
    if any(not 1 <= d <= d_s for d in d_list) or any(not 1 <= k <= d_s for k in state_list):
        raise InputError(f"memory dimensions must lie in [1, {d_s}]")
    rows = []
    prev = None
    for d in d_list:
        key = f"{model_id}/quantum/d={d}"
        try:
            out = compress(model, d, strategy, restarts=restarts, seed=derive_seed(seed, key),
                           max_sweeps=max_sweeps, tol=tol, initial=prev)
        except (QdimredError, np.linalg.LinAlgError) as exc:
            rows.append({"model_id": model_id, "method": "quantum", "memory_dim": d, "seed": seed,
                         "status": f"error:{type(exc).__name__}", "message": str(exc)})
            continue
        prev = out.warm_starts
        rows.append({"model_id": model_id, "method": "quantum", "memory_dim": d, "R_C": out.divergence.rate,
                     "fidelity": out.chosen.fidelity, "seed": seed,
                     "status": "ok" if out.verified else "verification-failed"})
    if state_list:
        path = greedy_merge_baseline(model, state_list[0]) if state_list[0] < d_s else []
        by_size = {step.num_states: step.model for step in path}
        by_size[d_s] = model
        gen = model.generator()
        for k in state_list:
            r = cdr(gen, by_size[k].generator())
            rows.append({"model_id": model_id, "method": "classical-merge", "memory_dim": k, "R_C": r.rate,
                         "seed": seed, "status": "ok"})
    for r in rows:
        r["schema_version"] = SCHEMA_VERSION
    return rows


def write_comparison(rows, out_dir) -> None:
    out = Path(out_dir)
    atomic_write_text(out / "comparison.csv", format_csv(COMPARISON_COLUMNS, rows))
    for method in ("quantum", "classical-merge"):
        pts = [(r["memory_dim"], r["R_C"]) for r in rows if r["method"] == method and r["status"] == "ok"]
        atomic_write_text(out / "plots" / f"{method}.csv", _plot_text(pts))


# ----------------------------------------------------------------- certificates

def certify_model(model: Hmm, strategy="sequential", d_list=None, *, model_id: str = "model") -> list[dict]:
    """Bound certificates of the dilated q-sample spectrum for every ``d_tilde >= 2``."""
    strategy = LabellingStrategy.parse(strategy)
    qs = qsample_tensors(dilate(model, make_labelling(model, strategy)))
    _, _, lam = canonical_form(qs)
    if d_list is None:
        d_list = range(2, len(lam) + 1)
    rows = []
    for d in d_list:
        c = certify_bounds(qs, int(d), lam, slack=CERT_SLACK)
        rows.append({"schema_version": SCHEMA_VERSION, "model_id": model_id, "labelling": str(strategy),
                     "d_tilde": c.d_tilde, "H_lambda": c.entropy, "eps_tail": c.tail, "rank_K": c.rank,
                     "entropy_bound": c.entropy_bound, "tail_ok": c.tail_ok,
                     "entropy_rank_ok": c.entropy_rank_ok})
    return rows


# ----------------------------------------------------------------- training

@dataclass
class TrainOutput:
    model: Hmm
    log_likelihood: list[float]
    converged: bool
    diagnostics: dict
    codebook: np.ndarray | None = None


def train_model(data_file, num_states: int, *, features: bool = False, codebook_size: int | None = None,
                header: bool = False, segment_length: int | None = None, max_iterations: int = 200,
                tol: float = 1e-6, seed: int = 0, init: str = "random") -> TrainOutput:
    """Fit an HMM to a symbol file, or to a feature CSV after k-means quantization.

    Feature rows form one sequence unless ``segment_length`` splits them.
    """
    codebook = None
    if features:
        if codebook_size is None:
            raise InputError("feature input needs a codebook size")
        X = read_features(data_file, header=header)
        codebook, labels = kmeans_quantize(X, int(codebook_size), seed)
        symbols = [str(int(v)) for v in labels]
        step = segment_length or len(symbols)
        seqs = [symbols[i : i + step] for i in range(0, len(symbols), step)]
        alphabet = [str(i) for i in range(int(codebook_size))]
    else:
        seqs = read_sequences(data_file)
        alphabet = None
    cfg = TrainingConfig(int(num_states), int(max_iterations), float(tol), int(seed), init)
    res = baum_welch_fit(seqs, cfg, alphabet)
    return TrainOutput(res.model, res.log_likelihood, res.converged, res.diagnostics, codebook)
