import json

import numpy as np
import pytest

from qdimred.cli import main, parse_int_list
from qdimred.io import hmm_to_dict, write_json
from qdimred.models import bernoulli_hmm, build_tns

from conftest import b2_model


@pytest.fixture
def files(tmp_path):
    write_json(hmm_to_dict(bernoulli_hmm(0.5)), tmp_path / "bern.json")
    write_json(hmm_to_dict(b2_model()), tmp_path / "b2.json")
    write_json(hmm_to_dict(build_tns(4, 0.3)), tmp_path / "tns4.json")
    return tmp_path


def read_row(path):
    header, row = path.read_text().splitlines()
    return dict(zip(header.split(","), row.split(",")))


def test_parse_int_list():
    assert parse_int_list("2-4,7") == [2, 3, 4, 7]
    assert parse_int_list("5") == [5]
    with pytest.raises(Exception):
        parse_int_list("4-2")


def test_compress_bernoulli(files):
    out = files / "out"
    assert main(["--out-dir", str(out), "compress", str(files / "bern.json"), "--d-tilde", "1"]) == 0
    row = read_row(out / "result.csv")
    assert float(row["R_C"]) <= 1e-10
    for name in ("dilated.json", "imps.json", "truncation.json", "qhmm.json", "report.json"):
        assert (out / name).exists()


def test_compress_b2_lossless(files):
    out = files / "out"
    assert main(["--out-dir", str(out), "compress", str(files / "b2.json"), "--d-tilde", "2"]) == 0
    assert abs(float(read_row(out / "result.csv")["fidelity"]) - 1) < 1e-10


def test_malformed_json_exit_one(files, capsys):
    bad = files / "bad.json"
    bad.write_text("{oops")
    out = files / "never"
    assert main(["--out-dir", str(out), "compress", str(bad), "--d-tilde", "1"]) == 1
    assert not out.exists()
    assert "error" in capsys.readouterr().err.lower()


def test_bad_d_tilde_exit_one(files):
    assert main(["--out-dir", str(files / "o"), "compress", str(files / "b2.json"), "--d-tilde", "5"]) == 1


def test_certify_and_cdr(files):
    out = files / "o"
    assert main(["--out-dir", str(out), "certify", str(files / "tns4.json")]) == 0
    certs = json.loads((out / "certificates.json").read_text())
    assert certs
    assert main(["--out-dir", str(out), "cdr", str(files / "b2.json"), str(files / "b2.json")]) == 0
    assert abs(json.loads((out / "cdr.json").read_text())["R_C"]) < 1e-10


def test_sample_and_train_round(files):
    out = files / "o"
    assert main(["--seed", "3", "--out-dir", str(out), "sample", str(files / "b2.json"),
                 "--length", "200", "--n-sequences", "3"]) == 0
    lines = (out / "samples.txt").read_text().splitlines()
    assert len(lines) == 3 and all(len(line.split()) == 200 for line in lines)
    assert main(["--out-dir", str(files / "t"), "train", str(out / "samples.txt"), "--num-states", "2",
                 "--max-iter", "10"]) == 0
    assert (files / "t" / "hmm.json").exists() and (files / "t" / "training_log.csv").exists()


def test_train_features(files):
    X = np.random.default_rng(0).normal(size=(200, 2))
    np.savetxt(files / "feat.csv", X, delimiter=",")
    out = files / "f"
    assert main(["--out-dir", str(out), "train", str(files / "feat.csv"), "--features", "--codebook-size", "4",
                 "--num-states", "2", "--max-iter", "5"]) == 0
    hmm = json.loads((out / "hmm.json").read_text())
    assert set(hmm["alphabet"]) <= {"0", "1", "2", "3"}


def test_settings_precedence(files, monkeypatch):
    conf = files / "conf.json"
    conf.write_text(json.dumps({"out_dir": str(files / "from-config")}))
    monkeypatch.setenv("QDIMRED_OUT_DIR", str(files / "from-env"))
    assert main(["--config", str(conf), "compress", str(files / "bern.json"), "--d-tilde", "1"]) == 0
    assert (files / "from-env" / "result.csv").exists()
    assert main(["--config", str(conf), "--out-dir", str(files / "from-flag"),
                 "compress", str(files / "bern.json"), "--d-tilde", "1"]) == 0
    assert (files / "from-flag" / "result.csv").exists()
    monkeypatch.delenv("QDIMRED_OUT_DIR")
    assert main(["--config", str(conf), "compress", str(files / "bern.json"), "--d-tilde", "1"]) == 0
    assert (files / "from-config" / "result.csv").exists()
    conf.write_text(json.dumps({"colour": "blue"}))
    assert main(["--config", str(conf), "compress", str(files / "bern.json"), "--d-tilde", "1"]) == 1


def test_compare_baseline_command(files):
    out = files / "cmp"
    assert main(["--out-dir", str(out), "compare-baseline", str(files / "tns4.json"), "--d-tilde", "2-3",
                 "--states", "2-3", "--restarts", "1"]) == 0
    assert len((out / "comparison.csv").read_text().splitlines()) == 5


def test_sweep_command_uses_config_out_dir(files):
    conf = files / "sweep.json"
    conf.write_text(json.dumps({"model": {"tns": {"N": [3], "p": [0.5]}}, "restarts": 1, "out_dir": "res"}))
    assert main(["sweep", str(conf)]) == 0
    assert (files / "res" / "results.csv").exists()
