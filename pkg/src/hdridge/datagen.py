"""Cohort, effect-size and trait generation under the linear polygenic model."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import (
    DegenerateColumn,
    DimensionMismatch,
    InvalidSparsity,
    ValidationError,
    ZeroGeneticVariance,
)
from .spectrum import BlockCovariance

ROLES = ("X", "W", "Z")
MAF_RANGE = (0.05, 0.45)


def rng_stream(base_seed: int, replication: int, role: str) -> np.random.Generator:
    """Counter-based generator for the stream ``(base_seed, replication, role)``.

    The role name is folded to an integer with CRC32, so streams for different
    roles or replications never share state and can be drawn in any order.
    """
    key = [int(base_seed), int(replication), zlib.crc32(role.encode())]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def standardize(X: np.ndarray) -> np.ndarray:
    """Center each column and scale it to unit sample (ddof=1) variance."""
    X = np.asarray(X, dtype=float)
    centered = X - X.mean(axis=0)
    sd = np.sqrt(np.sum(centered**2, axis=0) / (X.shape[0] - 1))
    bad = np.nonzero(sd <= 1e-12)[0]
    if bad.size:
        raise DegenerateColumn(f"columns with zero variance: {bad[:10].tolist()}")
    return centered / sd


@dataclass(frozen=True, eq=False)
class Cohort:
    design: np.ndarray
    role: str
    boundaries: np.ndarray
    seed_tag: tuple = ()

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def block(self, l: int) -> np.ndarray:
        return self.design[:, self.boundaries[l] : self.boundaries[l + 1]]

    def subsample(self, n: int) -> "Cohort":
        """First ``n`` rows, re-standardized (used for small reference panels)."""
        return Cohort(standardize(self.design[:n]), self.role, self.boundaries, self.seed_tag + (("rows", n),))


def _hwe_genotypes(u: np.ndarray, maf: np.ndarray) -> np.ndarray:
    """Map uniforms to {0, 1, 2} with Hardy-Weinberg probabilities per column."""
    p0 = (1.0 - maf) ** 2
    p1 = p0 + 2.0 * maf * (1.0 - maf)
    return (u >= p0).astype(float) + (u >= p1).astype(float)


def sample_genotypes(n: int, maf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent raw genotype counts, one MAF per column."""
    maf = np.asarray(maf, dtype=float)
    return _hwe_genotypes(rng.random((n, maf.size)), maf)


def gen_design(
    n: int,
    cov: BlockCovariance,
    mode: str = "gaussian",
    rng: np.random.Generator | None = None,
    role: str = "X",
    maf=None,
    seed_tag: tuple = (),
) -> Cohort:
    """Draw a column-standardized n x p design with population covariance ``cov``.

    ``mode="gaussian"`` uses ``X0 @ cov**0.5`` with standard normal ``X0``.
    ``mode="genotype"`` draws {0, 1, 2} counts with per-column MAF (fixed by
    ``maf`` or sampled from Uniform[0.05, 0.45]); for non-identity ``cov`` the
    counts are obtained by thresholding correlated latent Gaussians, which
    attenuates the realized correlations relative to ``cov``.
    """
    if n < 3:
        raise ValidationError("n must be at least 3 to standardize columns")
    if role not in ROLES:
        raise ValidationError(f"role must be one of {ROLES}, got {role!r}")
    rng = rng if rng is not None else np.random.default_rng()
    p = cov.total_dim
    if mode == "gaussian":
        X = cov.apply_power(rng.standard_normal((n, p)), 0.5)
    elif mode == "genotype":
        if maf is None:
            maf = rng.uniform(*MAF_RANGE, size=p)
        maf = np.broadcast_to(np.asarray(maf, dtype=float), (p,))
        if cov.is_identity():
            X = sample_genotypes(n, maf, rng)
        else:
            latent = cov.apply_power(rng.standard_normal((n, p)), 0.5)
            X = _hwe_genotypes(ndtr(latent), maf)
        # constant columns get one fresh draw from their marginal, then fail
        flat = np.nonzero(np.ptp(X, axis=0) == 0)[0]
        if flat.size:
            X[:, flat] = sample_genotypes(n, maf[flat], rng)
            still = flat[np.ptp(X[:, flat], axis=0) == 0]
            if still.size:
                raise DegenerateColumn(f"columns {still[:10].tolist()} constant after resampling")
    else:
        raise ValidationError(f"unknown design mode {mode!r}")
    return Cohort(standardize(X), role, np.asarray(cov.boundaries), seed_tag)


def realized_block_correlation(cohort: Cohort) -> list[np.ndarray]:
    """Per-block sample correlation of a standardized cohort."""
    return [cohort.block(l).T @ cohort.block(l) / (cohort.n - 1) for l in range(len(cohort.boundaries) - 1)]


@dataclass(frozen=True, eq=False)
class GeneticArchitecture:
    causal_idx: np.ndarray
    beta: np.ndarray
    sigma_beta_sq: float | np.ndarray
    gamma: float
    h2_target: float

    @property
    def m(self) -> int:
        return self.causal_idx.size


def gen_architecture(
    p: int,
    m: int,
    sigma2=1.0,
    rng: np.random.Generator | None = None,
    h2_target: float = 0.5,
) -> GeneticArchitecture:
    """Causal set uniform without replacement; effects Normal(0, sigma2 / p).

    ``sigma2`` is a scalar (i.i.d. effects) or a length-m vector of per-variant
    variances (independent random effects).
    """
    if not 1 <= m <= p:
        raise InvalidSparsity(f"need 1 <= m <= p, got m={m}, p={p}")
    if not 0.0 < h2_target < 1.0:
        raise ValidationError(f"h2 must lie in (0, 1), got {h2_target}")
    rng = rng if rng is not None else np.random.default_rng()
    s2 = np.asarray(sigma2, dtype=float)
    if s2.ndim and s2.size != m:
        raise DimensionMismatch(f"per-variant variances need length m={m}, got {s2.size}")
    if np.any(s2 < 0):
        raise ValidationError("effect variances must be nonnegative")
    causal = np.sort(rng.choice(p, size=m, replace=False))
    beta = np.zeros(p)
    beta[causal] = rng.standard_normal(m) * np.sqrt(s2 / p)
    return GeneticArchitecture(causal, beta, sigma2 if s2.ndim == 0 else s2, m / p, float(h2_target))


@dataclass(frozen=True, eq=False)
class TraitData:
    y: np.ndarray
    genetic: np.ndarray
    epsilon: np.ndarray
    realized_h2: float
    noise_var_used: float


def gen_trait(X: Cohort | np.ndarray, arch: GeneticArchitecture, rng: np.random.Generator | None = None) -> TraitData:
    """``y = X beta + eps`` with eps rescaled so the realized h2 hits the target."""
    design = X.design if isinstance(X, Cohort) else np.asarray(X)
    if design.shape[1] != arch.beta.size:
        raise DimensionMismatch(f"design has {design.shape[1]} columns, beta has {arch.beta.size}")
    rng = rng if rng is not None else np.random.default_rng()
    g = design @ arch.beta
    gg = float(g @ g)
    if gg == 0.0:
        raise ZeroGeneticVariance("genetic component X beta is identically zero")
    e = rng.standard_normal(design.shape[0])
    h2 = arch.h2_target
    scale = np.sqrt(gg * (1.0 - h2) / h2) / np.linalg.norm(e)
    y = g + e * scale
    # stored noise is y - g so the decomposition holds bitwise
    eps = y - g
    realized = gg / (gg + float(eps @ eps))
    return TraitData(y, g, eps, realized, float(scale**2))
