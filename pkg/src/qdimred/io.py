"""JSON and text formats for models, tensors and data files.

Floats are written with 17 significant digits, so every float64 survives a
write/read cycle unchanged and repeated writes are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from ._validation import InputError
from .dilation import DilatedHmm, Labelling, LabellingStrategy, dilate, split_composite
from .imps import Imps
from .models import Hmm
from .qhmm import QhmmModel

__all__ = [
    "dumps",
    "write_json",
    "read_json",
    "atomic_write_text",
    "hmm_to_dict",
    "hmm_from_dict",
    "dilated_to_dict",
    "dilated_from_dict",
    "imps_to_dict",
    "imps_from_dict",
    "qhmm_to_dict",
    "qhmm_from_dict",
    "truncation_to_dict",
    "read_hmm",
    "read_model",
    "read_sequences",
    "write_sequences",
    "read_features",
]


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise InputError(f"cannot serialize non-finite value {x!r}")
    s = "%.17g" % x
    if s == "-0":
        s = "0"
    return s


def _is_scalar(v) -> bool:
    return isinstance(v, (int, float, bool, str, np.integer, np.floating, np.bool_)) or v is None


def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    return json.dumps(v, ensure_ascii=False)


def _emit(obj, level: int) -> str:
    pad = "  " * (level + 1)
    end = "  " * level
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if _is_scalar(obj):
        return _scalar(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_emit(v, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(_is_scalar(v) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, level + 1) for v in obj) + "\n" + end + "]"
    raise InputError(f"cannot serialize object of type {type(obj).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON text with ``%.17g`` floats and one matrix row per line."""
    return _emit(obj, 0) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(obj, path) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON ({exc})") from None
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None


def _matrix(value, name) -> np.ndarray:
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{name} is not a numeric matrix") from None
    if M.ndim != 2:
        raise InputError(f"{name} must be a matrix")
    return M


def _require(d: dict, *keys):
    if not isinstance(d, dict):
        raise InputError("expected a JSON object")
    missing = [k for k in keys if k not in d]
    if missing:
        raise InputError(f"missing field(s): {', '.join(missing)}")


# ----------------------------------------------------------------- HMM

def hmm_to_dict(model: Hmm) -> dict:
    return {
        "alphabet": list(model.alphabet),
        "num_states": model.num_states,
        "transitions": {x: model.transitions[i] for i, x in enumerate(model.alphabet)},
    }


def hmm_from_dict(d: dict) -> Hmm:
    _require(d, "alphabet", "transitions")
    alphabet = [str(a) for a in d["alphabet"]]
    trans = d["transitions"]
    if not isinstance(trans, dict) or set(trans) != set(alphabet):
        raise InputError("transitions must map every alphabet symbol to a matrix")
    T = np.stack([_matrix(trans[x], f"transitions[{x!r}]") for x in alphabet])
    if "num_states" in d and int(d["num_states"]) != T.shape[1]:
        raise InputError("num_states does not match the transition matrices")
    return Hmm(alphabet, T)


def dilated_to_dict(d: DilatedHmm) -> dict:
    out = hmm_to_dict(Hmm(d.composite_alphabet, d.transitions, check_ergodic=False))
    out["base_alphabet"] = list(d.base.alphabet)
    out["strategy"] = str(d.labelling.strategy)
    out["labelling"] = {f"{s},{sn},{x}": y for (s, sn, x), y in d.labelling.as_dict().items()}
    return out


def dilated_from_dict(d: dict) -> DilatedHmm:
    _require(d, "alphabet", "transitions", "labelling", "base_alphabet")
    alphabet = [str(a) for a in d["alphabet"]]
    base_alphabet = tuple(str(a) for a in d["base_alphabet"])
    T = np.stack([_matrix(d["transitions"][a], f"transitions[{a!r}]") for a in alphabet])
    n_x = len(base_alphabet)
    if len(alphabet) % n_x:
        raise InputError("composite alphabet size is not a multiple of the base alphabet size")
    d_y = len(alphabet) // n_x
    base_T = np.zeros((n_x, T.shape[1], T.shape[2]))
    for i, label in enumerate(alphabet):
        x, y = split_composite(label)
        if x not in base_alphabet or alphabet[base_alphabet.index(x) * d_y + y] != label:
            raise InputError(f"composite label {label!r} is out of the expected x|y order")
        base_T[base_alphabet.index(x)] += T[i]
    base = Hmm(base_alphabet, base_T)
    labels = np.full(base_T.shape, -1, dtype=np.int64)
    for key, y in d["labelling"].items():
        try:
            s, sn, x = (int(v) for v in key.split(","))
        except ValueError:
            raise InputError(f"bad labelling key {key!r}; expected 's,s_next,x'") from None
        labels[x, sn, s] = int(y)
    strategy = LabellingStrategy.parse(d.get("strategy", "sequential"))
    out = dilate(base, Labelling(labels, d_y, strategy))
    if not np.array_equal(out.transitions, T):
        raise InputError("composite transitions disagree with the labelling")
    return out


# ----------------------------------------------------------------- iMPS / QHMM

def imps_to_dict(m: Imps) -> dict:
    out = {
        "alphabet": list(m.alphabet),
        "bond_dim": m.bond_dim,
        "gauge": m.gauge,
        "tensors": {a: m.tensors[i] for i, a in enumerate(m.alphabet)},
    }
    if m.schmidt is not None:
        out["schmidt"] = m.schmidt
    return out


def imps_from_dict(d: dict) -> Imps:
    _require(d, "alphabet", "tensors")
    alphabet = [str(a) for a in d["alphabet"]]
    A = np.stack([_matrix(d["tensors"][a], f"tensors[{a!r}]") for a in alphabet])
    if "bond_dim" in d and int(d["bond_dim"]) != A.shape[1]:
        raise InputError("bond_dim does not match the tensors")
    schmidt = d.get("schmidt")
    return Imps(alphabet, A, gauge=d.get("gauge", "none"),
                schmidt=None if schmidt is None else np.array(schmidt, dtype=float))


def qhmm_to_dict(q: QhmmModel) -> dict:
    return {
        "alphabet": list(q.alphabet),
        "bond_dim": q.bond_dim,
        "kraus": {x: [K for K in q.kraus[i]] for i, x in enumerate(q.alphabet)},
        "rho_star": q.rho_star,
    }


def qhmm_from_dict(d: dict) -> QhmmModel:
    _require(d, "alphabet", "kraus", "rho_star")
    alphabet = [str(a) for a in d["alphabet"]]
    kraus = []
    for x in alphabet:
        ops = d["kraus"].get(x)
        if not ops:
            raise InputError(f"no Kraus operators for symbol {x!r}")
        kraus.append(np.stack([_matrix(K, f"kraus[{x!r}]") for K in ops]))
    return QhmmModel(alphabet, kraus, _matrix(d["rho_star"], "rho_star"))


def truncation_to_dict(t, include_timing: bool = False) -> dict:
    out = {
        "fidelity": t.fidelity,
        "fidelity_rate": t.fidelity_rate,
        "sweeps": t.sweeps,
        "restart": t.restart,
        "converged": t.converged,
        "imps": imps_to_dict(t.imps),
    }
    if include_timing:
        out["wall_time"] = t.wall_time
    return out


# ----------------------------------------------------------------- files

def read_hmm(path) -> Hmm:
    return hmm_from_dict(read_json(path))


def read_model(path):
    """Read an HMM or QHMM JSON file, telling them apart by their fields."""
    d = read_json(path)
    if isinstance(d, dict) and "kraus" in d:
        return qhmm_from_dict(d)
    return hmm_from_dict(d)


def read_sequences(path) -> list[list[str]]:
    """One sequence per line, symbols separated by whitespace; blank lines are skipped."""
    try:
        with open(path, encoding="utf-8") as fh:
            seqs = [line.split() for line in fh]
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    seqs = [s for s in seqs if s]
    if not seqs:
        raise InputError(f"{path}: no sequences found")
    return seqs


def write_sequences(seqs, path) -> None:
    atomic_write_text(path, "".join(" ".join(map(str, s)) + "\n" for s in seqs))


def read_features(path, header: bool = False) -> np.ndarray:
    """Feature vectors from a CSV file, one per row."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    if header:
        rows = rows[1:]
    if not rows:
        raise InputError(f"{path}: no feature rows")
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: rows have different numbers of columns")
    try:
        return np.array(rows, dtype=float)
    except ValueError:
        raise InputError(f"{path}: non-numeric feature value (use --header if the file has one)") from None
