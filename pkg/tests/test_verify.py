import math

import pytest

from elastlab.errors import ParameterError
from elastlab.verify import CHECKS, CheckResult, parse_perturb, run_checks, write_report
from elastlab.csvio import read_csv

NAMES = [c[0] for c in CHECKS]


@pytest.fixture(scope="module")
def fast_results():
    return run_checks(slow=False)


def test_names_unique():
    assert len(NAMES) == len(set(NAMES))


def test_fast_checks_pass(fast_results):
    failed = [r.line() for r in fast_results if not r.passed]
    assert not failed, "\n".join(failed)
    assert len(fast_results) == sum(1 for c in CHECKS if not c[3])


@pytest.mark.parametrize("name", [c[0] for c in CHECKS if not c[3]])
def test_perturbation_fails_only_that_check(name):
    results = run_checks(slow=False, perturb=name, only={name})
    assert len(results) == 1 and not results[0].passed and results[0].name == name


def test_perturb_with_value():
    r = run_checks(perturb="relu.sqrt2_bound=1e-300", only={"relu.sqrt2_bound"})[0]
    assert r.tolerance == 1e-300


def test_parse_perturb():
    assert parse_perturb("relu.sqrt2_bound, linalg.expm_vs_taylor=0.5") == {
        "relu.sqrt2_bound": None, "linalg.expm_vs_taylor": 0.5}
    assert parse_perturb(None) == {}


def test_unknown_perturb():
    with pytest.raises(ParameterError, match="unknown check"):
        parse_perturb("relu.nope")


def test_nan_measurement_fails():
    r = CheckResult("x", math.nan, "<=", 1.0, False)
    assert r.line().startswith("FAIL")


def test_report(tmp_path, fast_results):
    write_report(fast_results, tmp_path / "r.csv")
    schema, header, rows = read_csv(tmp_path / "r.csv")
    assert schema == "verify_report/1"
    assert [r[0] for r in rows] == [r.name for r in fast_results]
    assert all(r[header.index("passed")] == "1" for r in rows)
