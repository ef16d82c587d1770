import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from hdridge import cli, io
from hdridge.config import (
    BlockEntry,
    BlpcConfig,
    Overrides,
    RunConfig,
    ScenarioConfig,
    SweepConfig,
    TheoryConfig,
    parse_text,
    render_config,
)
from hdridge.errors import ParseError, ValidationError
from hdridge.estimators import EstimatorSpec

MINIMAL = """
command = "simulate"
[[blocks]]
kind = "identity"
size = 500
[scenario]
n = 500
h2 = 0.5
replications = 10
[[estimators]]
kind = "ridge"
"""

SIM = """
seed = 9
[[blocks]]
kind = "ar1"
size = 20
rho = 0.5
count = 3
[scenario]
n = 60
h2 = 0.5
replications = 2
[[estimators]]
kind = "ridge"
[[estimators]]
kind = "block_ridge"
"""


def test_minimal_config_defaults():
    cfg = parse_text(MINIMAL)
    assert cfg.command == "simulate"
    assert cfg.scenario == ScenarioConfig(n=500, h2=0.5, replications=10)
    assert cfg.estimators == (EstimatorSpec("ridge"),)
    assert cfg.overrides == Overrides() and cfg.format == "csv" and cfg.threads == 1


def test_unknown_key_named():
    with pytest.raises(ParseError, match="heritabilty"):
        parse_text(MINIMAL.replace("h2 = 0.5", "h2 = 0.5\nheritabilty = 0.5"))


def test_sparsity_out_of_range():
    with pytest.raises(ValidationError) as exc:
        parse_text(MINIMAL.replace("h2 = 0.5", "h2 = 0.5\nsparsity = 1.3"))
    assert any("sparsity ∈ (0,1]" in p for p in exc.value.problems)


def test_every_problem_listed():
    text = MINIMAL.replace("n = 500", "n = 2").replace('kind = "ridge"', 'kind = "rige"') + "threads = 0\n"
    with pytest.raises((ValidationError, ParseError)):
        parse_text(text)
    with pytest.raises(ValidationError) as exc:
        parse_text(MINIMAL.replace("n = 500", "n = 2").replace('kind = "ridge"', 'kind = "rige"'))
    assert len(exc.value.problems) >= 2


def test_malformed_toml():
    with pytest.raises(ParseError, match="line"):
        parse_text("[[blocks]\nkind=")


def test_command_mismatch():
    with pytest.raises(ValidationError):
        parse_text(MINIMAL, command="theory")


configs = st.builds(
    RunConfig,
    command=st.just("simulate"),
    blocks=st.lists(
        st.builds(BlockEntry, kind=st.sampled_from(["ar1", "equicorrelated"]), size=st.integers(2, 30),
                  rho=st.floats(0.0, 0.4), count=st.integers(1, 3)),
        min_size=1, max_size=3,
    ).map(tuple),
    scenario=st.builds(ScenarioConfig, n=st.integers(3, 500), h2=st.floats(0.05, 0.95),
                       n_w=st.one_of(st.none(), st.integers(3, 500)), sparsity=st.floats(0.01, 1.0),
                       lam=st.one_of(st.none(), st.floats(0.01, 10.0)), replications=st.integers(1, 50)),
    estimators=st.lists(
        st.builds(EstimatorSpec, kind=st.sampled_from(["ridge", "block_ridge", "marginal"]),
                  lam=st.one_of(st.none(), st.floats(0.01, 5.0)), label=st.text("abc", min_size=1, max_size=6)),
        min_size=1, max_size=3, unique_by=lambda e: e.label,
    ).map(tuple),
    sweep=st.one_of(st.none(), st.builds(SweepConfig, axis=st.just("h2"),
                                         values=st.lists(st.floats(0.1, 0.9), min_size=1, max_size=3).map(tuple))),
    theory=st.one_of(st.none(), st.builds(TheoryConfig)),
    blpc=st.one_of(st.none(), st.builds(BlpcConfig)),
    threads=st.integers(1, 8),
    seed=st.integers(0, 2**64 - 1),
    overrides=st.builds(Overrides, xty_norm=st.sampled_from(["panel", "training"])),
)


@given(configs)
def test_render_parse_round_trip(cfg):
    assert parse_text(render_config(cfg)) == cfg


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_theory_identity_grid(tmp_path):
    cfg = _write(tmp_path, '[[blocks]]\nkind = "identity"\nsize = 400\n[theory]\nh2 = [0.5]\nomega = [0.5, 2.0]\n')
    out = tmp_path / "th"
    assert cli.main(["theory", "--config", cfg, "--out", str(out)]) == 0
    rows = io.read_csv(out / "theory.csv")
    s_rows = [r for r in rows if r["formula_id"] == "A2_S" and r["omega"] == "0.5"]
    assert float(s_rows[0]["a2"]) == pytest.approx(0.25)
    for r in rows:
        assert float(r["lambda"]) == pytest.approx(float(r["omega"]) * 0.5 / 0.5)
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["command"] == "theory" and "timestamp" in meta


def test_theory_empty_grid_no_files(tmp_path):
    cfg = _write(tmp_path, '[[blocks]]\nkind = "identity"\nsize = 40\n[theory]\nomega = []\n')
    out = tmp_path / "none"
    assert cli.main(["theory", "--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()


def test_simulate_byte_identical(tmp_path):
    cfg = _write(tmp_path, SIM)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(b), "--threads", "2"]) == 0
    for name in ("results.csv", "summary.csv", "theory.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "metadata.json").read_text())
    mb = json.loads((b / "metadata.json").read_text())
    for k in ("seed", "config_sha256", "versions", "beta_policy"):
        assert ma[k] == mb[k]


def test_seed_flag_and_env_threads(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SIM)
    monkeypatch.setenv("HDRIDGE_THREADS", "2")
    out = tmp_path / "s"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out), "--seed", "123"]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["seed"] == 123 and meta["threads"] == 2


def test_sweep_three_points(tmp_path):
    cfg = _write(tmp_path, SIM + '[sweep]\naxis = "omega"\nvalues = [0.5, 1.0, 2.0]\n')
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    ids = {r["scenario_id"] for r in io.read_csv(out / "summary.csv")}
    assert len(ids) == 3


def test_blpc_rows_per_pair(tmp_path):
    text = SIM.split("[[estimators]]")[0] + "[blpc]\ntau = [0.35, 0.5, 0.8]\nlam_scale = [10.0, 1.0, 0.1, 0.01, 0.0]\n"
    cfg = _write(tmp_path, text)
    out = tmp_path / "pc"
    assert cli.main(["blpc", "--config", cfg, "--out", str(out)]) == 0
    rows = io.read_csv(out / "summary.csv")
    assert len(rows) == 15
    assert all(r["formula_id"] == "A2_PC_R" for r in rows)


def test_json_format(tmp_path):
    cfg = _write(tmp_path, 'format = "json"\n' + SIM)
    out = tmp_path / "j"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    data = json.loads((out / "summary.json").read_text())
    assert {d["estimator"] for d in data} == {"ridge", "block_ridge"}


def test_runtime_error_removes_partial_files(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SIM)
    out = tmp_path / "err"

    def boom(*a, **k):
        raise cli.HdRidgeError("injected")

    monkeypatch.setattr(io, "theory_rows", boom)
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 1
    assert not out.exists()


def test_round_trip_of_coefficients_and_cohort(tmp_path):
    import numpy as np
    from hdridge.datagen import gen_design, rng_stream
    from hdridge.estimators import ridge
    from hdridge.spectrum import BlockSpec, build_block_covariance

    X = gen_design(10, build_block_covariance([BlockSpec.identity(4)]), rng=rng_stream(0, 0, "X"))
    fit = ridge(X, np.arange(10.0), 1.0)
    p = io.write_rows(tmp_path / "coef.csv", io.coefficient_rows(fit), io.COEF_COLUMNS)
    back = np.array([float(r["value"]) for r in io.read_csv(p)])
    assert back.tobytes() == fit.coefficients.tobytes()
    c = io.write_cohort(tmp_path / "X.csv", X)
    assert np.loadtxt(c, delimiter=",").tobytes() == X.design.tobytes()
