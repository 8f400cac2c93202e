"""Command line interface.

Exit codes: 0 success, 1 input/parse error, 2 verification failure, 3 solver failure.

Settings resolve in the order command-line flag, environment variable
(``QDIMRED_OUT_DIR``, ``QDIMRED_THREADS``), ``--config`` JSON file, built-in
default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from ._validation import GaugeError, InputError, SolverError
from .divergence import cdr
from .io import (
    dilated_to_dict,
    dumps,
    hmm_to_dict,
    imps_to_dict,
    qhmm_to_dict,
    read_hmm,
    read_json,
    read_model,
    truncation_to_dict,
    write_json,
    write_sequences,
    atomic_write_text,
)
from .models import sample_hmm
from .pipeline import (
    CERTIFICATE_COLUMNS,
    RESULT_COLUMNS,
    SweepConfig,
    resolve_labelling,
    certify_model,
    compare_baseline,
    compress,
    format_csv,
    result_row,
    run_sweep,
    train_model,
    write_comparison,
)
from .qhmm import QhmmModel, sample_sequence

__all__ = ["main", "build_parser", "parse_int_list"]

logger = logging.getLogger("qdimred")

EXIT_OK, EXIT_INPUT, EXIT_VERIFY, EXIT_SOLVER = 0, 1, 2, 3
DEFAULTS = {"seed": 0, "out_dir": "qdimred-out", "threads": 1, "tolerance": 1e-12,
            "restarts": 3, "max_sweeps": 500, "labelling": "sequential"}
ENV = {"out_dir": "QDIMRED_OUT_DIR", "threads": "QDIMRED_THREADS"}


class VerificationFailure(Exception):
    pass


def parse_int_list(text: str) -> list[int]:
    """Parse ``"2-5,8"`` into ``[2, 3, 4, 5, 8]``."""
    out = []
    try:
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            lo, sep, hi = part.partition("-")
            out.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdimred", description="Quantum dimension reduction of hidden Markov models.")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--out-dir", help="output directory (env QDIMRED_OUT_DIR)")
    p.add_argument("--threads", type=int, help="worker processes for sweeps (env QDIMRED_THREADS)")
    p.add_argument("--tolerance", type=float, help="truncation fidelity-gain tolerance (default 1e-12)")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def trunc_opts(sp):
        sp.add_argument("--labelling", help="labelling strategy, e.g. sequential or random:3")
        sp.add_argument("--restarts", type=int)
        sp.add_argument("--max-sweeps", type=int)

    c = sub.add_parser("compress", help="dilate, truncate and reconstruct one HMM")
    c.add_argument("hmm_file")
    c.add_argument("--d-tilde", type=int, required=True)
    trunc_opts(c)

    s = sub.add_parser("sweep", help="run a sweep described by a JSON config")
    s.add_argument("sweep_config")

    b = sub.add_parser("compare-baseline", help="quantum compression versus greedy state merging")
    b.add_argument("hmm_file")
    b.add_argument("--d-tilde", type=parse_int_list, required=True, help="e.g. 2-29")
    b.add_argument("--states", type=parse_int_list, required=True, help="merge targets, e.g. 2-29")
    trunc_opts(b)

    t = sub.add_parser("train", help="fit an HMM to symbol sequences or feature vectors")
    t.add_argument("data_file")
    t.add_argument("--num-states", type=int, required=True)
    t.add_argument("--features", action="store_true", help="data file is a feature CSV")
    t.add_argument("--codebook-size", type=int, help="k-means codebook size for feature input")
    t.add_argument("--header", action="store_true", help="feature CSV has a header row")
    t.add_argument("--segment-length", type=int, help="split quantized features into sequences")
    t.add_argument("--max-iter", type=int, default=200)
    t.add_argument("--train-tol", type=float, default=1e-6, help="log-likelihood gain per symbol (nats)")

    r = sub.add_parser("certify", help="bound certificates of the dilated q-sample spectrum")
    r.add_argument("hmm_file")
    r.add_argument("--labelling")
    r.add_argument("--d-tilde", type=parse_int_list, help="default: every d_tilde >= 2")

    m = sub.add_parser("sample", help="sample sequences from an HMM or QHMM file")
    m.add_argument("model_file")
    m.add_argument("--length", type=int, required=True)
    m.add_argument("--n-sequences", type=int, default=1)

    d = sub.add_parser("cdr", help="co-emission divergence rate between two model files")
    d.add_argument("model_p")
    d.add_argument("model_q")
    return p


def _settings(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        loaded = read_json(args.config)
        if not isinstance(loaded, dict):
            raise InputError("--config must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, var in ENV.items():
        if os.environ.get(var):
            cfg[key] = os.environ[var]
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    try:
        cfg["threads"] = int(cfg["threads"])
        cfg["seed"] = int(cfg["seed"])
        cfg["tolerance"] = float(cfg["tolerance"])
        cfg["restarts"] = int(cfg["restarts"])
        cfg["max_sweeps"] = int(cfg["max_sweeps"])
    except (TypeError, ValueError):
        raise InputError("threads, seed, restarts, max_sweeps and tolerance must be numbers") from None
    if cfg["threads"] < 1:
        raise InputError("threads must be at least 1")
    return cfg


def _cmd_compress(args, cfg) -> int:
    model = read_hmm(args.hmm_file)
    model_id = Path(args.hmm_file).stem
    strategy = resolve_labelling(cfg["labelling"], cfg["seed"], model_id)
    t0 = time.perf_counter()
    out = compress(model, args.d_tilde, strategy, restarts=cfg["restarts"], seed=cfg["seed"],
                   max_sweeps=cfg["max_sweeps"], tol=cfg["tolerance"])
    wall = time.perf_counter() - t0
    row = result_row(out, model_id=model_id, labelling=str(strategy), d_tilde=args.d_tilde,
                     seed=cfg["seed"], row_key=f"{model_id}/{strategy}/seed={cfg['seed']}/d={args.d_tilde}")
    report = {
        "dilation": {"deterministic": out.report.deterministic,
                     "marginals_preserved": out.report.marginals_preserved,
                     "ergodic": out.report.ergodic,
                     "max_marginal_error": out.report.max_marginal_error,
                     "details": out.report.details},
        "certificate": {"tail_ok": out.tail_ok, "entropy_rank_ok": out.entropy_rank_ok,
                        "entropy_bound": None if out.certificate is None else out.certificate.entropy_bound},
        "candidate_rates": [r if np.isfinite(r) else None for r in out.candidate_rates],
    }
    od = Path(cfg["out_dir"])
    write_json(dilated_to_dict(out.dilated), od / "dilated.json")
    write_json(imps_to_dict(out.chosen.imps), od / "imps.json")
    write_json(truncation_to_dict(out.chosen), od / "truncation.json")
    write_json(qhmm_to_dict(out.qhmm), od / "qhmm.json")
    write_json(report, od / "report.json")
    atomic_write_text(od / "result.csv", format_csv(RESULT_COLUMNS, [row]))
    atomic_write_text(od / "timings.json", json.dumps({"wall_time": wall, "truncation_wall_time":
                                                       out.truncation.wall_time}) + "\n")
    print(f"fidelity={row['fidelity']:.12g} R_C={row['R_C']:.6g} C_q={row['C_q']:.6g} status={row['status']}")
    if not out.verified:
        raise VerificationFailure(row["message"] or "verification failed")
    return EXIT_OK


def _cmd_sweep(args, cfg) -> int:
    sc = SweepConfig.from_file(args.sweep_config)
    out_dir = cfg["out_dir"]
    # a config-file out_dir only applies when neither the flag nor the environment set one
    if args.out_dir is None and not os.environ.get(ENV["out_dir"]) and sc.out_dir is not None:
        out_dir = sc.out_dir
    if args.tolerance is not None:
        sc = SweepConfig(sc.models, sc.labellings, sc.d_tilde, sc.restarts, sc.seeds, sc.out_dir,
                         sc.max_sweeps, cfg["tolerance"])
    rows = run_sweep(sc, out_dir, threads=cfg["threads"])
    bad = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} rows, {len(bad)} not ok -> {out_dir}")
    return EXIT_OK


def _cmd_compare(args, cfg) -> int:
    model = read_hmm(args.hmm_file)
    model_id = Path(args.hmm_file).stem
    rows = compare_baseline(model, args.d_tilde, args.states, model_id=model_id,
                            strategy=resolve_labelling(cfg["labelling"], cfg["seed"], model_id), restarts=cfg["restarts"], seed=cfg["seed"],
                            max_sweeps=cfg["max_sweeps"], tol=cfg["tolerance"])
    write_comparison(rows, cfg["out_dir"])
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} rows -> {cfg['out_dir']}")
    if any(r["status"] == "verification-failed" for r in failed):
        raise VerificationFailure("some quantum rows failed verification")
    if failed:
        raise SolverError(failed[0].get("message", "comparison row failed"))
    return EXIT_OK


def _cmd_train(args, cfg) -> int:
    res = train_model(args.data_file, args.num_states, features=args.features, codebook_size=args.codebook_size,
                      header=args.header, segment_length=args.segment_length, max_iterations=args.max_iter,
                      tol=args.train_tol, seed=cfg["seed"])
    od = Path(cfg["out_dir"])
    write_json(hmm_to_dict(res.model), od / "hmm.json")
    log_rows = [{"iteration": i, "log_likelihood": v} for i, v in enumerate(res.log_likelihood)]
    atomic_write_text(od / "training_log.csv", format_csv(("iteration", "log_likelihood"), log_rows))
    warnings = []
    if not res.converged:
        warnings.append("maximum iterations reached before the tolerance was met")
    if res.diagnostics["floored_columns"]:
        warnings.append(f"{res.diagnostics['floored_columns']} empty columns floored")
    if res.diagnostics["monotone_violations"]:
        warnings.append(f"log-likelihood decreased in {len(res.diagnostics['monotone_violations'])} steps")
    write_json({"converged": res.converged, "iterations": len(res.log_likelihood),
                "warnings": warnings, "initial_distribution": res.diagnostics["initial_distribution"]},
               od / "training_report.json")
    if res.codebook is not None:
        write_json({"codebook": res.codebook}, od / "codebook.json")
    for w in warnings:
        logger.warning(w)
    print(f"trained {res.model.num_states}-state model, final log-likelihood {res.log_likelihood[-1]:.10g}")
    return EXIT_OK


def _cmd_certify(args, cfg) -> int:
    model = read_hmm(args.hmm_file)
    model_id = Path(args.hmm_file).stem
    rows = certify_model(model, resolve_labelling(cfg["labelling"], cfg["seed"], model_id), args.d_tilde,
                         model_id=model_id)
    od = Path(cfg["out_dir"])
    atomic_write_text(od / "certificates.json",
                      dumps([{c: r[c] for c in CERTIFICATE_COLUMNS} for r in rows]))
    bad = [r for r in rows if not (r["tail_ok"] and r["entropy_rank_ok"])]
    print(f"{len(rows)} certificates, {len(bad)} violations")
    if bad:
        raise VerificationFailure(f"bound certificate violated at d_tilde={bad[0]['d_tilde']}")
    return EXIT_OK


def _cmd_sample(args, cfg) -> int:
    model = read_model(args.model_file)
    if args.length < 0 or args.n_sequences < 1:
        raise InputError("length must be non-negative and n-sequences positive")
    if isinstance(model, QhmmModel):
        seqs = [sample_sequence(model, args.length, seed=[cfg["seed"], i]) for i in range(args.n_sequences)]
    else:
        seqs = sample_hmm(model, args.length, cfg["seed"], n_sequences=args.n_sequences)
    write_sequences(seqs, Path(cfg["out_dir"]) / "samples.txt")
    print(f"{len(seqs)} sequence(s) of length {args.length}")
    return EXIT_OK


def _cmd_cdr(args, cfg) -> int:
    p, q = read_model(args.model_p), read_model(args.model_q)
    gp = p.generator()
    gq = gp if args.model_q == args.model_p else q.generator()
    r = cdr(gp, gq)
    out = {"R_C": r.rate, "mu_p": r.mu_p, "mu_q": r.mu_q, "mu_pq": r.mu_pq, "nonreal": r.nonreal,
           "negative": r.negative}
    write_json(out, Path(cfg["out_dir"]) / "cdr.json")
    print(f"R_C = {r.rate + 0.0:.12g} bits/symbol")
    return EXIT_OK


COMMANDS = {"compress": _cmd_compress, "sweep": _cmd_sweep, "compare-baseline": _cmd_compare,
            "train": _cmd_train, "certify": _cmd_certify, "sample": _cmd_sample, "cdr": _cmd_cdr}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _settings(args)
        return COMMANDS[args.command](args, cfg)
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if getattr(exc, "diagnostics", None):
            print(json.dumps(exc.diagnostics, default=str)[:2000], file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, GaugeError, OSError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except np.linalg.LinAlgError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
