import csv
import io
import json

import pytest

from subsketch.cli import run
from subsketch.core import power, read_matrix
from subsketch.spectrum import lambda0_alternating_sum


def _json(capsys, argv):
    assert run(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_spectrum_csv(capsys):
    assert run(["spectrum", "--d", "8", "--p", "1"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert list(rows[0]) == ["d", "kernel", "p", "weight", "coefficient", "multiplicity"]
    assert len(rows) == 9
    assert float(rows[4]["coefficient"]) == lambda0_alternating_sum(power(1), 8)


def test_spectrum_json_routes(capsys):
    rec = _json(capsys, ["spectrum", "--d", "8", "--p", "1.5", "--format", "json", "--dense-check"])
    r = rec["lambda0_routes"]
    assert r["alternating_sum"] == pytest.approx(r["wht"], rel=1e-9)
    assert r["alternating_sum"] == pytest.approx(r["integral"], rel=1e-8)
    assert rec["dense_max_rel_err"] < 1e-10
    assert rec["schema"] == 1


def test_sketch_bench_gram(capsys):
    rec = _json(capsys, ["sketch-bench", "--sketch", "gram", "--d", "6", "--trials", "5"])
    assert rec["size_bits"] == 21 * 64
    assert rec["mean_rel_err"] < 1e-12


def test_sketch_bench_sampling_reports_lewis(capsys):
    rec = _json(capsys, ["sketch-bench", "--sketch", "sampling", "--p", "2", "--trials", "3"])
    assert rec["lewis"]["max_dev_from_leverage"] < 1e-8


def test_recover_d12(capsys):
    rec = _json(capsys, ["recover", "--d", "12", "--p", "1", "--noise", "exact", "--trials", "5", "--seed", "7"])
    for key in ("d", "p", "noise_model", "trials", "per_bit_success_rate", "lambda0", "multiplicity", "kappa"):
        assert key in rec
    assert rec["per_bit_success_rate"] == 1.0


def test_recover_d10_is_a_runtime_failure(capsys):
    assert run(["recover", "--d", "10", "--p", "1", "--trials", "3"]) == 1
    assert "lambda0 = 0" in capsys.readouterr().err


def test_hard_instance_writes_matrix(tmp_path, capsys):
    rec = _json(capsys, ["hard-instance", "--d", "12", "--p", "1.5", "--matrix-out", str(tmp_path / "A.txt")])
    assert all(rec["invariants"].values())
    A = read_matrix(tmp_path / "A.txt")
    assert A.shape == (4096, 12) and A.grain == rec["grain"]


def test_distinguish(capsys):
    rec = _json(capsys, ["hard-instance", "--d", "64", "--p", "2", "--distinguish", "--trials", "3"])
    assert rec["separated"] == 3


def test_tukey_and_median_bench(capsys):
    rec = _json(capsys, ["tukey-bench", "--n", "20000", "--spikes", "200", "--trials", "2"])
    for key in ("exact", "estimate", "rel_err", "r", "beta", "degree", "S1", "S2", "S3"):
        assert key in rec
    rec = _json(capsys, ["median2d-bench", "--n", "2000", "--grid", "100"])
    assert rec["max_rel_err"] <= 0.1
    assert {"coreset_size_plus", "coreset_size_minus", "K_observed"} <= set(rec)


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["spectrum"],
        ["recover", "--d", "7", "--p", "1"],
        ["recover", "--d", "12", "--p", "1", "--noise", "loud"],
        ["sketch-bench", "--sketch", "even", "--p", "3"],
        ["sketch-bench", "--sketch", "stable", "--eps", "2"],
        ["tukey-bench", "--tau", "-1"],
        ["median2d-bench", "--n", "1"],
    ],
)
def test_invalid_flags_exit_2(argv, capsys):
    assert run(argv) == 2


def test_deterministic_and_out(tmp_path, capsys):
    argv = ["sketch-bench", "--sketch", "stable", "--p", "1", "--trials", "20", "--seed", "4"]
    a = _json(capsys, argv)
    assert run(argv + ["--out", str(tmp_path / "r.json")]) == 0
    b = json.loads((tmp_path / "r.json").read_text())
    a.pop("wall_clock"), b.pop("wall_clock")
    assert a == b
