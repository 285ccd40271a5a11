import json
from pathlib import Path

import numpy as np
import pytest

from dichotomia.cli import cmd_verify, main
from dichotomia.config import RunConfig, build_system, load_config, parse_grid
from dichotomia.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CANONICAL = ["constant_diag", "periodic", "nonuniform_scalar", "random"]


def cfg(name):
    return str(CONFIGS / f"{name}.json")


def run(cmd, name, out, *extra):
    return main([cmd, "--config", cfg(name) if not name.endswith(".json") else name,
                 "--out", str(out), *extra])


# ---------------------------------------------------------------------------
# configuration


def test_canonical_configs_load():
    for name in CANONICAL:
        c = load_config(cfg(name))
        assert c.system.dimension == c.document["dimension"]


def test_missing_generator_rejected():
    with pytest.raises(ConfigError, match="generator"):
        build_system({"dimension": 2})


@pytest.mark.parametrize("doc", [
    {"dimension": 0, "generator": {"kind": "constant", "params": {"diag": [1.0]}}},
    {"dimension": 2, "generator": {"kind": "constant", "params": {"diag": [0.5]}}},
    {"dimension": 1, "generator": {"kind": "spline", "params": {}}},
    {"dimension": 1, "generator": {"kind": "nonuniform-scalar", "params": {"lam": 0.1, "eps": 0.2}}},
    {"dimension": 1, "generator": {"kind": "constant", "params": {"diag": [2.0]}},
     "nonlinearity": {"kind": "cubic"}},
    {"dimension": 1, "generator": {"kind": "constant", "params": {"diag": [2.0]}},
     "nonlinearity": {"kind": "tanh2", "eta": 0.1, "B": 0.01}},
    {"dimension": 1, "generator": {"kind": "constant", "params": {"diag": [2.0]}}, "extra": 1},
])
def test_bad_documents(doc):
    with pytest.raises(ConfigError):
        build_system(doc)


def test_run_config_invariants():
    with pytest.raises(ConfigError):
        RunConfig(tol=0.0)
    with pytest.raises(ConfigError):
        RunConfig(window=30, horizon=40)
    with pytest.raises(ConfigError):
        RunConfig(m_range=(3, 1))


def test_parse_grid():
    assert parse_grid("0.2:8:16") == (0.2, 8.0, 16)
    for bad in ("1:2", "2:1:5", "a:b:c", "0:1:5"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_generator_kinds(tmp_path):
    docs = [
        {"kind": "tabulated", "params": {"matrices": [[[0.5]], [[0.6]]], "extension": "freeze"}},
        {"kind": "diagonal-exponential", "params": {"log_rates": [-0.7, 1.0], "epsilons": 0.1}},
    ]
    for gen in docs:
        s = build_system({"dimension": len(gen["params"].get("log_rates", [0])), "generator": gen})
        assert np.all(np.isfinite(s.linear.matrix(5)))


# ---------------------------------------------------------------------------
# commands and exit codes


def test_spectrum_command(tmp_path):
    assert run("spectrum", "constant_diag", tmp_path) == 0
    doc = json.loads((tmp_path / "spectrum.json").read_text())
    ends = [[iv["a"], iv["b"]] for iv in doc["intervals"]]
    assert np.allclose(ends, [[0.5, 0.5], [3.0, 3.0]], atol=1e-3)
    assert doc["schema_version"] == 1 and doc["run"]["spectrum_tol"] > 0
    assert (tmp_path / "spectrum.csv").read_text().startswith("a,dim,accept\n")


def test_spectrum_nonuniform(tmp_path):
    assert run("spectrum", "nonuniform_scalar", tmp_path) == 0
    iv = json.loads((tmp_path / "spectrum.json").read_text())["intervals"]
    assert len(iv) == 1
    assert abs(iv[0]["a"] - np.exp(-0.8)) < 2e-2 and abs(iv[0]["b"] - np.exp(-0.6)) < 2e-2


def test_config_errors_exit_64(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dimension": 2}')
    assert main(["spectrum", "--config", str(bad), "--out", str(tmp_path)]) == 64
    bad.write_text("{not json")
    assert main(["spectrum", "--config", str(bad)]) == 64
    assert main(["spectrum", "--config", str(tmp_path / "missing.json")]) == 64
    assert main(["spectrum", "--config", cfg("constant_diag"), "--grid", "3:1:4"]) == 64
    with pytest.raises(SystemExit) as exc:
        main(["spectrum"])
    assert exc.value.code == 64


def test_coverage_exit_2(tmp_path):
    assert run("spectrum", "constant_diag", tmp_path, "--grid", "1:2:5") == 2


def test_gap_check_codes(tmp_path):
    assert run("gap-check", "constant_diag", tmp_path / "a") == 0
    assert json.loads((tmp_path / "a" / "gap.json").read_text())["all_pass"] is True
    assert run("gap-check", "gap_fail", tmp_path / "b") == 3
    doc = json.loads((tmp_path / "b" / "gap.json").read_text())
    assert doc["gb_main"] is False and doc["source"] == "config"
    assert run("gap-check", "one_sided", tmp_path / "c") == 4


def test_conjugate_canonical(tmp_path):
    assert run("conjugate", "constant_diag", tmp_path) == 0
    doc = json.loads((tmp_path / "residuals.json").read_text())
    assert doc["max_residual"] <= 1e-6 and doc["roundtrip"] <= 1e-6
    rows = (tmp_path / "conjugacy.csv").read_text().splitlines()
    assert rows[0] == "m,x1,x2,h1,h2,residual" and len(rows) == 1 + 11 * 21 * 21


def test_conjugate_refusals(tmp_path):
    assert run("conjugate", "large_nonlinearity", tmp_path / "a") == 5
    assert run("conjugate", "gap_fail", tmp_path / "b") == 3


def test_conjugate_linear_is_identity(tmp_path):
    assert run("conjugate", "linear_only", tmp_path) == 0
    data = np.loadtxt(tmp_path / "conjugacy.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 1:3], data[:, 3:5])


def test_tolerance_drives_exit(tmp_path):
    assert run("conjugate", "linear_only", tmp_path, "--tol", "1e-300") == 0
    assert run("conjugate", "random", tmp_path, "--tol", "1e-30") == 1


def test_reports_byte_identical(tmp_path):
    for sub in ("x", "y"):
        assert run("spectrum", "periodic", tmp_path / sub, "--seed", "3") == 0
        assert run("gap-check", "periodic", tmp_path / sub) == 0
    for name in ("spectrum.json", "spectrum.csv", "gap.json"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_threads_do_not_change_reports(tmp_path, monkeypatch):
    assert run("spectrum", "constant_diag", tmp_path / "one", "--threads", "1") == 0
    monkeypatch.setenv("DICHOTOMIA_THREADS", "4")
    assert run("spectrum", "constant_diag", tmp_path / "four") == 0
    assert ((tmp_path / "one" / "spectrum.json").read_bytes()
            == (tmp_path / "four" / "spectrum.json").read_bytes())


def test_verify_passes(tmp_path):
    assert run("verify", "constant_diag", tmp_path) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert set(doc["checks"]) >= {"cocycle_identity", "projection_commutation",
                                  "dim_monotone", "report_determinism"}


def test_verify_detects_corrupted_cache(tmp_path):
    c = load_config(cfg("constant_diag")).with_overrides(out=str(tmp_path))

    def corrupt(system):
        cache = system.linear.propagator_cache
        for key in list(cache):
            if key[0] != key[1]:
                cache[key] = cache[key] * 1.01

    try:
        assert cmd_verify(c, hook=corrupt) == 1
    finally:
        c.system.linear.clear_cache()
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["checks"]["cocycle_identity"]["passed"] is False
    assert doc["all_pass"] is False
