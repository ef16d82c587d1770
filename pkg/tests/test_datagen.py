import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdridge.datagen import (
    gen_architecture,
    gen_design,
    gen_trait,
    realized_block_correlation,
    rng_stream,
    sample_genotypes,
    standardize,
)
from hdridge.errors import DegenerateColumn, DimensionMismatch, InvalidSparsity, ValidationError, ZeroGeneticVariance
from hdridge.datagen import GeneticArchitecture
from hdridge.spectrum import BlockSpec, build_block_covariance


def test_gaussian_design_standardized():
    cov = build_block_covariance([BlockSpec.identity(50)])
    X = gen_design(1000, cov, rng=rng_stream(1, 0, "X"))
    assert np.max(np.abs(X.design.mean(axis=0))) < 1e-10
    np.testing.assert_allclose(X.design.var(axis=0, ddof=1), 1.0, rtol=1e-12)


def test_genotype_mean_with_fixed_maf():
    G = sample_genotypes(2000, np.full(40, 0.25), rng_stream(2, 0, "X"))
    se = np.sqrt(2 * 0.25 * 0.75 / 2000)
    assert np.all(np.abs(G.mean(axis=0) - 0.5) < 4 * se)
    assert set(np.unique(G)) <= {0.0, 1.0, 2.0}


def test_genotype_mode_correlated_is_attenuated_but_positive():
    cov = build_block_covariance([BlockSpec.ar1(0.5, 20)])
    X = gen_design(3000, cov, "genotype", rng_stream(3, 0, "X"), maf=0.3)
    C = realized_block_correlation(X)[0]
    adj = np.diag(C, 1)
    assert 0.25 < adj.mean() < 0.5


def test_block_correlations_recovered():
    cov = build_block_covariance([BlockSpec.ar1(0.5, 50)] * 2)
    X = gen_design(4000, cov, rng=rng_stream(4, 0, "X")).design
    C = X.T @ X / (X.shape[0] - 1)
    assert np.all(np.abs(np.diag(C[:50, :50], 1) - 0.5) < 0.05)
    assert np.all(np.abs(C[:50, 50:]) < 0.07)
    assert abs(C[:50, 50:].mean()) < 0.01


def test_constant_column_rejected():
    with pytest.raises(DegenerateColumn):
        standardize(np.column_stack([np.arange(5.0), np.ones(5)]))


def test_streams_are_independent_and_reproducible():
    a = rng_stream(7, 3, "X").standard_normal(5)
    b = rng_stream(7, 3, "X").standard_normal(5)
    c = rng_stream(7, 3, "Z").standard_normal(5)
    d = rng_stream(7, 4, "X").standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_design_rejects_bad_role_and_n():
    cov = build_block_covariance([BlockSpec.identity(3)])
    with pytest.raises(ValidationError):
        gen_design(2, cov)
    with pytest.raises(ValidationError):
        gen_design(10, cov, role="Q")


def test_architecture_variance_and_support():
    arch = gen_architecture(10_000, 10_000, 1.0, rng_stream(5, 0, "beta"))
    assert np.var(arch.beta) == pytest.approx(1e-4, rel=0.05)
    one = gen_architecture(100, 1, 1.0, rng_stream(5, 1, "beta"))
    assert np.count_nonzero(one.beta) == 1


def test_per_variant_matches_iid_moments():
    p = 20_000
    a = gen_architecture(p, p, 2.0, rng_stream(6, 0, "beta"))
    b = gen_architecture(p, p, np.full(p, 2.0), rng_stream(6, 1, "beta"))
    assert np.var(b.beta) == pytest.approx(np.var(a.beta), rel=0.05)
    assert abs(b.beta.mean()) < 4 * np.sqrt(2.0 / p / p)


def test_architecture_errors():
    with pytest.raises(InvalidSparsity):
        gen_architecture(10, 0)
    with pytest.raises(InvalidSparsity):
        gen_architecture(10, 11)
    with pytest.raises(DimensionMismatch):
        gen_architecture(10, 3, np.ones(4))
    with pytest.raises(ValidationError):
        gen_architecture(10, 3, h2_target=1.0)


def test_trait_calibration_exact():
    cov = build_block_covariance([BlockSpec.identity(200)])
    X = gen_design(500, cov, rng=rng_stream(8, 0, "X"))
    arch = gen_architecture(200, 50, 1.0, rng_stream(8, 0, "beta"), 0.5)
    t = gen_trait(X, arch, rng_stream(8, 0, "eps"))
    assert t.realized_h2 == pytest.approx(0.5, abs=1e-10)
    np.testing.assert_array_equal(t.y - t.genetic, t.epsilon)


def test_zero_effects_rejected():
    arch = GeneticArchitecture(np.array([0]), np.zeros(5), 1.0, 0.2, 0.5)
    with pytest.raises(ZeroGeneticVariance):
        gen_trait(np.random.default_rng(0).standard_normal((10, 5)), arch)


def test_trait_regression_r2():
    cov = build_block_covariance([BlockSpec.identity(1000)])
    X = gen_design(10_000, cov, rng=rng_stream(9, 0, "X"))
    arch = gen_architecture(1000, 1000, 1.0, rng_stream(9, 0, "beta"), 0.8)
    t = gen_trait(X, arch, rng_stream(9, 0, "eps"))
    # independent check: least-squares fit of y on g
    A = np.column_stack([np.ones_like(t.genetic), t.genetic])
    coef, *_ = np.linalg.lstsq(A, t.y, rcond=None)
    resid = t.y - A @ coef
    r2 = 1 - resid @ resid / np.sum((t.y - t.y.mean()) ** 2)
    assert r2 == pytest.approx(0.8, abs=0.02)


def test_same_seed_bitwise_identical():
    cov = build_block_covariance([BlockSpec.ar1(0.3, 10)])
    a = gen_design(20, cov, rng=rng_stream(1, 2, "X"))
    b = gen_design(20, cov, rng=rng_stream(1, 2, "X"))
    assert a.design.tobytes() == b.design.tobytes()


def test_subsample_restandardizes():
    cov = build_block_covariance([BlockSpec.identity(5)])
    X = gen_design(50, cov, rng=rng_stream(1, 0, "W"), role="W")
    s = X.subsample(20)
    assert s.n == 20
    np.testing.assert_allclose(s.design.var(axis=0, ddof=1), 1.0)


@given(st.integers(3, 30), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_standardize_property(n, p, seed):
    X = np.random.default_rng(seed).standard_normal((n, p)) * 3 + 1
    Z = standardize(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=0, ddof=1), 1, rtol=1e-12)


@given(st.floats(0.05, 0.95), st.integers(0, 1000))
def test_calibration_property(h2, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 8))
    arch = gen_architecture(8, 4, 1.0, rng, h2)
    t = gen_trait(X, arch, rng)
    assert t.realized_h2 == pytest.approx(h2, abs=1e-10)
