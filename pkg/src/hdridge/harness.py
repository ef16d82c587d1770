"""Replicated simulations pairing empirical out-of-sample accuracy with theory.

Each replication draws fresh training (X), panel (W) and testing (Z) cohorts,
a fresh effect vector and fresh traits, fits every listed estimator and scores
it on Z. Replications run on a thread pool with independent random streams and
are reduced in replication order, so results do not depend on worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import estimators as est
from . import rmt
from .datagen import Cohort, gen_architecture, gen_design, gen_trait, rng_stream
from .errors import ValidationError, ZeroPrediction
from .spectrum import BlockCovariance, BlockSpec, SpectralLaw, build_block_covariance

PRED_FLOOR = 1e-14
DESIGN_MODES = ("gaussian", "genotype")
SWEEP_AXES = ("omega", "h2", "lambda", "panel_size", "panel_rho")
BETA_POLICY = "redrawn per replication"


def out_of_sample_a2(Z, y_z, fit: est.EstimatorOutput) -> float:
    """Squared cosine between the testing trait and the prediction ``Z beta``."""
    s = fit.predict(Z)
    y_z = np.asarray(y_z, dtype=float)
    ns = float(np.linalg.norm(s))
    if ns < PRED_FLOOR:
        raise ZeroPrediction(f"prediction norm {ns:.3e} is below {PRED_FLOOR:g}; A2 undefined")
    c = float(y_z @ s) / (float(np.linalg.norm(y_z)) * ns)
    return min(c * c, 1.0)


@dataclass(frozen=True)
class Scenario:
    """One simulation condition.

    ``lam=None`` applies lambda* = omega (1 - h2) / h2 with omega = p / n to
    every estimator without its own lambda. ``panel_blocks`` gives W a
    covariance with the same block sizes but different correlation.
    """

    blocks: tuple
    n: int
    h2: float
    estimators: tuple
    n_w: int | None = None
    n_z: int | None = None
    sparsity: float = 1.0
    design_mode: str = "gaussian"
    effect_variance: float = 1.0
    lam: float | None = None
    replications: int = 10
    base_seed: int = 0
    panel_blocks: tuple | None = None
    scenario_id: str = "scenario"
    xty_norm: str = "panel"
    thm3_inner_n: str = "panel"
    r3_form: str = "pair"

    @property
    def p(self) -> int:
        return int(sum(b.size for b in self.blocks))

    @property
    def omega(self) -> float:
        return self.p / self.n

    @property
    def nw(self) -> int:
        return self.n if self.n_w is None else self.n_w

    @property
    def nz(self) -> int:
        return self.n if self.n_z is None else self.n_z

    @property
    def lam_star(self) -> float:
        return rmt.optimal_lambda(self.h2, self.omega)

    def default_lambda(self) -> float:
        return self.lam_star if self.lam is None else float(self.lam)

    def problems(self) -> list[str]:
        out = []
        if not self.blocks:
            out.append("need at least one block")
        for i, b in enumerate(self.blocks):
            try:
                b.validate()
            except Exception as exc:  # collect every block problem
                out.append(f"block {i}: {exc}")
        for name, v in (("n", self.n), ("n_w", self.nw), ("n_z", self.nz)):
            if not (isinstance(v, (int, np.integer)) and v >= 3):
                out.append(f"{name} must be an integer >= 3, got {v!r}")
        if not 0.0 < self.h2 < 1.0:
            out.append(f"h2 must lie in (0, 1), got {self.h2}")
        if not 0.0 < self.sparsity <= 1.0:
            out.append(f"sparsity ∈ (0,1], got {self.sparsity}")
        if self.design_mode not in DESIGN_MODES:
            out.append(f"design_mode must be one of {DESIGN_MODES}, got {self.design_mode!r}")
        if not self.effect_variance > 0:
            out.append("effect_variance must be > 0")
        if self.lam is not None and not self.lam > 0:
            out.append(f"lambda must be > 0, got {self.lam}")
        if not (isinstance(self.replications, (int, np.integer)) and self.replications >= 1):
            out.append("replications must be a positive integer")
        if not self.estimators:
            out.append("need at least one estimator")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            out.append(f"estimator names must be unique, got {names}")
        for e in self.estimators:
            out.extend(f"estimator {e.name}: {msg}" for msg in e.problems())
            if e.panel_n is not None:
                size = self.nw if e.cov_source == "W" else self.nz
                if e.panel_n > size:
                    out.append(f"estimator {e.name}: panel_n={e.panel_n} exceeds panel size {size}")
        if self.panel_blocks is not None:
            if [b.size for b in self.panel_blocks] != [b.size for b in self.blocks]:
                out.append("panel_blocks must have the same block sizes as blocks")
            for i, b in enumerate(self.panel_blocks):
                try:
                    b.validate()
                except Exception as exc:
                    out.append(f"panel block {i}: {exc}")
        if self.xty_norm not in ("panel", "training"):
            out.append(f"xty_norm must be 'panel' or 'training', got {self.xty_norm!r}")
        if self.thm3_inner_n not in ("panel", "training"):
            out.append(f"thm3_inner_n must be 'panel' or 'training', got {self.thm3_inner_n!r}")
        if self.r3_form not in rmt.CROSS_TERMS:
            out.append(f"r3_form must be one of {rmt.CROSS_TERMS}, got {self.r3_form!r}")
        return out

    def validate(self) -> None:
        probs = self.problems()
        if probs:
            raise ValidationError(probs)


@dataclass(frozen=True)
class ReplicationResult:
    rep_index: int
    a2: dict
    lam: dict
    realized_h2: float
    timing: float = field(default=0.0, compare=False)
    conditional_theory: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class EstimatorSummary:
    name: str
    mean: float
    sd: float
    mc_se: float
    theory: rmt.AsymptoticPrediction | None = None

    @property
    def a2_theory(self) -> float | None:
        return None if self.theory is None else self.theory.a2

    @property
    def formula_id(self) -> str | None:
        return None if self.theory is None else self.theory.formula_id

    @property
    def gap(self) -> float | None:
        return None if self.theory is None else abs(self.mean - self.theory.a2)


@dataclass(frozen=True)
class ScenarioSummary:
    scenario: Scenario
    estimators: tuple
    results: tuple

    def __getitem__(self, name: str) -> EstimatorSummary:
        for s in self.estimators:
            if s.name == name:
                return s
        raise KeyError(name)

    def values(self, name: str) -> np.ndarray:
        return np.array([r.a2[name] for r in self.results])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScenarioSummary):
            return NotImplemented
        return (
            self.scenario == other.scenario
            and self.results == other.results
            and [(s.name, s.mean, s.sd, s.mc_se, s.a2_theory) for s in self.estimators]
            == [(s.name, s.mean, s.sd, s.mc_se, s.a2_theory) for s in other.estimators]
        )


def tolerance(mc_se: float, floor: float = 0.03) -> float:
    """Empirical-vs-theory tolerance ``max(floor, 3 mc_se)``."""
    return max(floor, 3.0 * mc_se)


# ---------------------------------------------------------------------------
# one replication


def _covariances(s: Scenario) -> tuple[BlockCovariance, BlockCovariance]:
    cov = build_block_covariance(list(s.blocks))
    panel = cov if s.panel_blocks is None else build_block_covariance(list(s.panel_blocks))
    return cov, panel


def _estimator_lambda(s: Scenario, spec: est.EstimatorSpec, basis=None) -> float | None:
    if spec.kind == "marginal" or spec.kind == "blpc_marginal":
        return None
    if spec.lam is not None:
        return float(spec.lam)
    if spec.kind == "blpc_block_ridge":
        return spec.lam_scale * basis.q / s.n
    return s.default_lambda()


def _reference(spec: est.EstimatorSpec, W: Cohort | None, Z: Cohort) -> Cohort:
    ref = W if spec.cov_source == "W" else Z
    if spec.panel_n is not None and spec.panel_n < ref.n:
        ref = ref.subsample(spec.panel_n)
    return ref


def _groups(spec: est.EstimatorSpec, boundaries) -> list[np.ndarray]:
    if spec.kind in ("ridge", "ref_ridge"):
        return est.single_group(int(boundaries[-1]))
    return spec.groups_for(boundaries)


def _fit(s, spec, X, y, W, Z, bases):
    """Fit one estimator; returns (output, lambda)."""
    groups = _groups(spec, X.boundaries)
    kind = spec.kind
    if kind in ("ridge", "block_ridge") and spec.cov_source != "X":
        kind = "ref_ridge" if kind == "ridge" else "block_ref_ridge"
    if kind in ("ref_ridge", "block_ref_ridge") and spec.cov_source == "X":
        kind = "ridge" if kind == "ref_ridge" else "block_ridge"
    if kind == "marginal":
        return est.marginal(X, y), None
    if kind in est.BLPC_KINDS:
        key = (spec.tau, spec.grouping)
        if key not in bases:
            bases[key] = est.fit_blpc_basis(X, groups, est.VarianceThreshold(spec.tau))
        basis = bases[key]
        if kind == "blpc_marginal":
            return est.blpc_marginal(X, y, basis), None
        lam = _estimator_lambda(s, spec, basis)
        return est.blpc_block_ridge(X, y, basis, lam), lam
    lam = _estimator_lambda(s, spec)
    if kind == "ridge":
        return est.ridge(X, y, lam), lam
    if kind == "block_ridge":
        return est.block_ridge(X, y, lam, groups), lam
    ref = _reference(spec, W, Z)
    xty = X.design.T @ y
    return est.block_ref_ridge(xty, ref, lam, groups, s.xty_norm, X.n), lam


def _needs_panel(s: Scenario) -> bool:
    return any(
        e.cov_source == "W" and e.kind in ("ridge", "block_ridge", "ref_ridge", "block_ref_ridge")
        for e in s.estimators
    )


def run_replication(s: Scenario, rep: int, cov: BlockCovariance, panel_cov: BlockCovariance) -> ReplicationResult:
    t0 = time.perf_counter()
    seed = s.base_seed
    X = gen_design(s.n, cov, s.design_mode, rng_stream(seed, rep, "X"), "X", seed_tag=(seed, rep))
    Z = gen_design(s.nz, cov, s.design_mode, rng_stream(seed, rep, "Z"), "Z", seed_tag=(seed, rep))
    W = None
    if _needs_panel(s):
        W = gen_design(s.nw, panel_cov, s.design_mode, rng_stream(seed, rep, "W"), "W", seed_tag=(seed, rep))
    m = max(1, int(round(s.sparsity * s.p)))
    arch = gen_architecture(s.p, m, s.effect_variance, rng_stream(seed, rep, "beta"), s.h2)
    tx = gen_trait(X, arch, rng_stream(seed, rep, "eps_X"))
    tz = gen_trait(Z, arch, rng_stream(seed, rep, "eps_Z"))
    a2, lams, bases = {}, {}, {}
    cond = {}
    for spec in s.estimators:
        fit, lam = _fit(s, spec, X, tx.y, W, Z, bases)
        a2[spec.name] = out_of_sample_a2(Z, tz.y, fit)
        lams[spec.name] = lam
        if rep == 0:
            pred = _conditional_theory(s, spec, X, cov, fit, lam)
            if pred is not None:
                cond[spec.name] = pred
    return ReplicationResult(rep, a2, lams, tx.realized_h2, time.perf_counter() - t0, cond)


# ---------------------------------------------------------------------------
# theory


def _group_laws(cov: BlockCovariance, groups) -> list[SpectralLaw] | None:
    """Pooled law per group, or None if a group cuts through a covariance block."""
    bounds = [int(b) for b in cov.boundaries]
    laws = []
    for g in groups:
        lo, hi = int(g[0]), int(g[-1]) + 1
        if lo not in bounds or hi not in bounds or g.size != hi - lo:
            return None
        i, j = bounds.index(lo), bounds.index(hi)
        laws.append(SpectralLaw(np.concatenate(cov.eigvals[i:j])))
    return laws


def _conditional_theory(s, spec, X, cov, fit, lam) -> rmt.AsymptoticPrediction | None:
    """Theory that needs a realized design, evaluated on replication 0."""
    if spec.cov_source != "X" and spec.kind not in est.BLPC_KINDS:
        return None
    if spec.kind == "marginal" and not cov.is_identity():
        return rmt.a2_marginal_conditional(s.h2, s.omega, X, cov)
    if spec.kind in est.BLPC_KINDS:
        if _group_laws(cov, fit.projection.groups) is None:
            return None
        P = rmt.blpc_traces(X, cov, fit.projection, 0.0 if lam is None else lam)
        return rmt.a2_blpc(s.h2, s.omega, P, "marginal" if spec.kind == "blpc_marginal" else "ridge")
    return None


def scenario_theory(s: Scenario, spec: est.EstimatorSpec, cov: BlockCovariance, panel_cov: BlockCovariance):
    """Data-free theory for one estimator, or None where no formula applies."""
    h2, om = s.h2, s.omega
    laws = _group_laws(cov, _groups(spec, cov.boundaries))
    kind = spec.kind
    if kind == "marginal":
        if cov.is_identity():
            return rmt.a2_identity_closed_forms(h2, om, om, om, s.default_lambda())["S"]
        return None
    if kind in est.BLPC_KINDS or laws is None:
        return None
    lam = float(spec.lam) if spec.lam is not None else s.default_lambda()
    if spec.cov_source == "X":
        if len(laws) == 1 and abs(lam - s.lam_star) <= 1e-12 * max(1.0, s.lam_star):
            return rmt.a2_ridge(h2, om, laws[0])
        return rmt.a2_block_ridge(h2, om, laws, lam, cross_term=s.r3_form)
    if spec.cov_source == "W" and s.panel_blocks is not None:
        # mismatched panel: no formula covers Sigma_W != Sigma_X
        if any(not np.array_equal(a, b) for a, b in zip(cov.blocks, panel_cov.blocks)):
            return None
    size = s.nw if spec.cov_source == "W" else s.nz
    if spec.panel_n is not None:
        size = min(size, spec.panel_n)
    return rmt.a2_block_ref(h2, om, laws, lam, spec.cov_source, s.p / size, s.thm3_inner_n)


# ---------------------------------------------------------------------------
# scenarios and sweeps


def _summarize(name: str, values: np.ndarray, theory) -> EstimatorSummary:
    R = values.size
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if R > 1 else float("nan")
    return EstimatorSummary(name, mean, sd, sd / np.sqrt(R) if R > 1 else float("nan"), theory)


def run_scenario(s: Scenario, workers: int = 1) -> ScenarioSummary:
    """Run all replications of ``s`` and aggregate them in replication order."""
    s.validate()
    cov, panel_cov = _covariances(s)
    theory = {e.name: scenario_theory(s, e, cov, panel_cov) for e in s.estimators}
    reps = range(s.replications)
    if workers > 1 and s.replications > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            results = list(pool.map(lambda r: run_replication(s, r, cov, panel_cov), reps))
    else:
        results = [run_replication(s, r, cov, panel_cov) for r in reps]
    for name, pred in results[0].conditional_theory.items():
        if theory[name] is None:
            theory[name] = pred
    summaries = tuple(
        _summarize(e.name, np.array([r.a2[e.name] for r in results]), theory[e.name]) for e in s.estimators
    )
    return ScenarioSummary(s, summaries, tuple(results))


def _with_rho(specs: Sequence[BlockSpec], rho: float) -> tuple:
    out = []
    for b in specs:
        if b.kind == "custom":
            raise ValidationError("panel_rho sweeps need ar1 or equicorrelated blocks")
        out.append(BlockSpec(b.kind, b.size, float(rho)))
    return tuple(out)


def sweep_point(base: Scenario, axis: str, value) -> Scenario:
    """Copy of ``base`` with one grid coordinate set."""
    sid = f"{base.scenario_id}/{axis}={value!r}"
    if axis == "omega":
        return replace(base, n=max(3, int(round(base.p / float(value)))), scenario_id=sid)
    if axis == "h2":
        return replace(base, h2=float(value), scenario_id=sid)
    if axis == "lambda":
        return replace(base, lam=float(value), scenario_id=sid)
    if axis == "panel_size":
        return replace(base, n_w=int(value), scenario_id=sid)
    if axis == "panel_rho":
        return replace(base, panel_blocks=_with_rho(base.blocks, value), scenario_id=sid)
    raise ValidationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")


def sweep(axis: str, values: Sequence, base: Scenario, workers: int = 1) -> list[ScenarioSummary]:
    if len(values) == 0:
        raise ValidationError("sweep grid is empty")
    points = [sweep_point(base, axis, v) for v in values]
    for p in points:
        p.validate()
    return [run_scenario(p, workers) for p in points]
