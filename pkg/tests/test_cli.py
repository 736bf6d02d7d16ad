import json
import os
import subprocess
import sys

import pytest

from elastlab.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, main, parse_seeds
from elastlab.config import ConfigError
from elastlab.csvio import read_csv

SMALL_DHOM = """
kind = "dhom"
seeds = [0, 1]
[model]
a = [1.0, 4.0, 9.0]
b = [1.0, 1.0, 1.0]
w0_sq = [0.5, 2.0, 4.0]
w_star = [1.0, 2.0, 3.0]
[curve]
t_stop = 50.0
[sgd]
steps = 3000
record_until = 100
record_every = 10
[distance]
x_prime = [-1.0, -11.0, 1.0]
z_max = 10
t = 20.0
[[pairs]]
x = [1.0, -1.0, 1.0]
x_prime = [1.01, 0.999, 1.2]
"""

SMALL_LASTLAYER = """
kind = "lastlayer"
seeds = [0]
[data]
n_per_class = 50
[model]
steps = 200
record_every = 20
settings = [[5, 4]]
"""

DIVERGING = """
kind = "mlp-regress"
seeds = [0]
[data]
dims = 3
n = 64
[net]
hidden = [8]
[train]
eta = 1e6
epochs = 2
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.mark.parametrize("text,name", [(SMALL_DHOM, "dhom"), (SMALL_LASTLAYER, "ll")])
def test_run_outputs_and_manifest(tmp_path, text, name):
    out = tmp_path / "out"
    assert main(["--quiet", "run", write(tmp_path, text), "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] in ("dhom", "lastlayer")
    assert set(manifest["config"]) >= {"model"}
    for key in ("summary", "version", "backend", "elapsed_seconds", "files"):
        assert key in manifest
    csvs = [f for f in manifest["files"] if f.endswith(".csv")]
    assert csvs
    for f in csvs:
        schema, header, rows = read_csv(out / f)
        assert schema and header and rows


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL_DHOM)
    for d in ("a", "b"):
        assert main(["--quiet", "run", cfg, "--out", str(tmp_path / d)]) == EXIT_OK
    files = sorted(f for f in os.listdir(tmp_path / "a") if f.endswith((".csv", ".svg")))
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_seed_override(tmp_path):
    out = tmp_path / "o"
    assert main(["--quiet", "run", write(tmp_path, SMALL_DHOM), "--out", str(out), "--seeds", "3-5"]) == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["seeds"] == [3, 4, 5]


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("ELASTLAB_OUT", str(tmp_path / "root"))
    assert main(["--quiet", "run", write(tmp_path, SMALL_LASTLAYER, "small.toml")]) == EXIT_OK
    assert (tmp_path / "root" / "small" / "manifest.json").exists()


def test_config_error_exit(tmp_path, capsys):
    bad = SMALL_DHOM.replace("[[pairs]]\nx = [1.0, -1.0, 1.0]\nx_prime = [1.01, 0.999, 1.2]\n", "")
    assert main(["run", write(tmp_path, bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "pairs" in capsys.readouterr().err


def test_missing_config_exit(tmp_path):
    assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_bad_seeds_exit(tmp_path):
    assert main(["run", write(tmp_path, SMALL_DHOM), "--seeds", "a-b"]) == EXIT_CONFIG


def test_numeric_failure_exit(tmp_path, capsys):
    assert main(["run", write(tmp_path, DIVERGING), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC
    assert "diverged" in capsys.readouterr().err


def test_verify_perturbed_exit(tmp_path, capsys):
    code = main(["--quiet", "verify", "--fast", "--out", str(tmp_path), "--perturb", "relu.sqrt2_bound"])
    assert code == EXIT_VERIFY
    assert "relu.sqrt2_bound" in capsys.readouterr().err
    schema, header, rows = read_csv(tmp_path / "verify_report.csv")
    failed = [r for r in rows if r[header.index("passed")] in ("0", "false", "False")]
    assert [r[0] for r in failed] == ["relu.sqrt2_bound"]


def test_verify_unknown_perturb(tmp_path):
    assert main(["--quiet", "verify", "--fast", "--out", str(tmp_path), "--perturb", "no.such"]) == EXIT_CONFIG


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    names = capsys.readouterr().out.split()
    assert {"quad_sgd", "relu_gate", "lastlayer", "mlp-regress", "mlp-classify"} <= set(names)


@pytest.mark.parametrize("text,expected", [("0,1,5", [0, 1, 5]), ("0-3", [0, 1, 2, 3]), ("7, 1-2", [7, 1, 2])])
def test_parse_seeds(text, expected):
    assert parse_seeds(text) == expected


@pytest.mark.parametrize("text", ["", "1,1", "x"])
def test_parse_seeds_errors(text):
    with pytest.raises(ConfigError):
        parse_seeds(text)


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "elastlab", "list"], capture_output=True, text=True)
    assert out.returncode == 0 and "quad_sgd" in out.stdout


SUMMARY_CHECKS = {
    "quad_sgd": lambda s: s["sgd"]["hit_tolerance"] and s["distance_spearman"] < -0.95,
    "relu_gate": lambda s: max(abs(v) for v in s["late_rel_deviation_from_bound"]) <= 0.15,
    "lastlayer": lambda s: s["all_two_phase"],
    "mlp-regress": lambda s: s["profile_spearman_max_after_warmup"] < -0.8,
    "mlp-classify": lambda s: s["intra_win_fraction_min"] >= 0.9 and s["inter_trend_max"] < -0.5,
}


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(SUMMARY_CHECKS))
def test_bundled_configs_run(tmp_path, name):
    assert main(["--quiet", "run", name, "--out", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert SUMMARY_CHECKS[name](manifest["summary"]), manifest["summary"]
    for f in manifest["files"]:
        assert (tmp_path / f).stat().st_size > 0
