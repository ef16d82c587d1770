import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdridge import harness, rmt
from hdridge.estimators import EstimatorOutput, EstimatorSpec as E
from hdridge.errors import ValidationError, ZeroPrediction
from hdridge.spectrum import BlockSpec


def _fit(coef):
    return EstimatorOutput(np.asarray(coef, dtype=float), "marginal")


def test_a2_trivial_cases(rng):
    Z = np.eye(4)
    y = rng.standard_normal(4)
    assert harness.out_of_sample_a2(Z, y, _fit(y)) == pytest.approx(1.0)
    assert harness.out_of_sample_a2(Z, y, _fit(-3 * y)) == pytest.approx(1.0)
    perp = np.array([y[1], -y[0], 0.0, 0.0])
    assert harness.out_of_sample_a2(Z, y, _fit(perp)) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ZeroPrediction):
        harness.out_of_sample_a2(Z, y, _fit(np.zeros(4)))


@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_a2_scale_invariant(seed, c1, c2):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((20, 5))
    y = rng.standard_normal(20)
    b = rng.standard_normal(5)
    a = harness.out_of_sample_a2(Z, y, _fit(b))
    assert 0.0 <= a <= 1.0
    assert harness.out_of_sample_a2(Z, c2 * y, _fit(c1 * b)) == pytest.approx(a, rel=1e-10)


def small(**kw):
    base = dict(
        blocks=(BlockSpec.ar1(0.5, 20),) * 3,
        n=80,
        h2=0.5,
        estimators=(E("ridge"), E("block_ridge"), E("block_ref_ridge", cov_source="W", label="BW"), E("marginal")),
        replications=2,
        base_seed=11,
    )
    base.update(kw)
    return harness.Scenario(**base)


def test_run_deterministic():
    assert harness.run_scenario(small()) == harness.run_scenario(small())


def test_workers_do_not_change_results():
    a = harness.run_scenario(small(replications=4), workers=1)
    b = harness.run_scenario(small(replications=4), workers=3)
    assert a == b


def test_mc_se_and_aggregation():
    s = harness.run_scenario(small(replications=5))
    for e in s.estimators:
        v = s.values(e.name)
        assert e.mean == pytest.approx(sum(v) / len(v), abs=1e-12)
        assert e.sd == pytest.approx(np.sqrt(np.sum((v - v.mean()) ** 2) / (len(v) - 1)), abs=1e-12)
        assert e.mc_se == pytest.approx(e.sd / np.sqrt(5), abs=1e-15)


def test_theory_attached():
    s = harness.run_scenario(small())
    assert s["ridge"].formula_id == "A2_R"
    assert s["block_ridge"].formula_id == "A2_B"
    assert s["BW"].formula_id == "A2_BW"
    assert s["marginal"].formula_id == "A2_S_cond"
    assert s["ridge"].gap == pytest.approx(abs(s["ridge"].mean - s["ridge"].a2_theory))


def test_mismatched_panel_has_no_theory():
    s = harness.run_scenario(small(panel_blocks=(BlockSpec.ar1(0.8, 20),) * 3))
    assert s["BW"].theory is None


def test_validation_collects_everything():
    bad = small(n=2, sparsity=1.3, h2=1.5, estimators=(E("rige"),))
    with pytest.raises(ValidationError) as exc:
        bad.validate()
    text = " ".join(exc.value.problems)
    assert "sparsity ∈ (0,1]" in text and "h2" in text and "rige" in text and "n must" in text
    with pytest.raises(ValidationError):
        small(panel_blocks=(BlockSpec.ar1(0.5, 10),)).validate()


def test_identity_marginal_matches_closed_form():
    s = harness.Scenario((BlockSpec.identity(500),), 1000, 0.5, (E("marginal"),), replications=60, base_seed=2)
    out = harness.run_scenario(s)["marginal"]
    assert out.a2_theory == pytest.approx(0.25)
    assert abs(out.mean - 0.25) <= max(3 * out.mc_se, 0.01)


def test_single_point_sweep_equals_run():
    base = small()
    pts = harness.sweep("omega", [base.omega], base)
    direct = harness.run_scenario(harness.sweep_point(base, "omega", base.omega))
    assert len(pts) == 1 and pts[0] == direct


def test_sweep_axes_and_ids():
    base = small()
    for axis, vals in (("h2", [0.3, 0.6]), ("lambda", [0.5, 2.0]), ("panel_size", [40, 80]), ("panel_rho", [0.2, 0.8])):
        pts = [harness.sweep_point(base, axis, v) for v in vals]
        assert len({p.scenario_id for p in pts}) == 2
    assert harness.sweep_point(base, "omega", 2.0).n == 30
    assert harness.sweep_point(base, "panel_rho", 0.8).panel_blocks[0].rho == 0.8
    with pytest.raises(ValidationError):
        harness.sweep("omega", [], base)
    with pytest.raises(ValidationError):
        harness.sweep_point(base, "depth", 1)


def test_xty_norm_does_not_change_a2():
    a = harness.run_scenario(small(xty_norm="panel"))
    b = harness.run_scenario(small(xty_norm="training"))
    np.testing.assert_allclose(a.values("BW"), b.values("BW"), rtol=1e-10)


def test_panel_subsample_and_z_source():
    ests = (E("block_ref_ridge", cov_source="W", panel_n=30, label="small"),
            E("block_ref_ridge", cov_source="Z", label="BZ"),
            E("ref_ridge", cov_source="W", label="RW"))
    s = harness.run_scenario(small(estimators=ests))
    assert s["small"].formula_id == "A2_BW"
    assert s["BZ"].formula_id == "A2_BZ"
    assert s["RW"].a2_theory is not None


def test_blpc_conditional_theory():
    ests = (E("blpc_marginal", tau=0.5), E("blpc_block_ridge", tau=0.5, lam_scale=1.0, label="pcr"))
    s = harness.run_scenario(small(estimators=ests))
    assert s["blpc_marginal"].formula_id == "A2_PC_S"
    assert s["pcr"].formula_id == "A2_PC_R"
    q = s.results[0].lam["pcr"] * 80
    assert q == pytest.approx(round(q))


def test_ref_ridge_below_marginal_identity():
    ests = (E("marginal"), E("ref_ridge", cov_source="W", label="RW"))
    s = harness.Scenario((BlockSpec.identity(300),), 300, 0.5, ests, replications=30, base_seed=3)
    out = harness.run_scenario(s)
    assert out["RW"].mean < out["marginal"].mean
    cf = rmt.a2_identity_closed_forms(0.5, 1.0)
    assert out["RW"].a2_theory == pytest.approx(cf["RW"].a2, rel=1e-9)
