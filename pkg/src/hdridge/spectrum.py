"""Block-diagonal population covariance matrices and their spectra.

The covariance is kept as an ordered list of dense blocks, each factorized on its
own with a symmetric eigensolver. The full p x p matrix is never built, except by
``BlockCovariance.to_dense`` which exists for small-scale checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, InvalidBlock, NonPositiveDefinite

EIG_FLOOR = 1e-12
UNIT_DIAG_TOL = 1e-8

BLOCK_KINDS = ("ar1", "equicorrelated", "custom")


@dataclass(frozen=True)
class BlockSpec:
    """Recipe for one diagonal block.

    ``kind`` is one of ``"ar1"`` (Toeplitz ``rho**|i-j|``), ``"equicorrelated"``
    (all off-diagonals ``rho``) or ``"custom"`` (an explicit dense matrix).
    """

    kind: str
    size: int
    rho: float = 0.0
    matrix: np.ndarray | None = field(default=None, compare=False, repr=False)

    @classmethod
    def ar1(cls, rho: float, size: int) -> "BlockSpec":
        return cls("ar1", int(size), float(rho))

    @classmethod
    def equicorrelated(cls, rho: float, size: int) -> "BlockSpec":
        return cls("equicorrelated", int(size), float(rho))

    @classmethod
    def identity(cls, size: int) -> "BlockSpec":
        return cls("ar1", int(size), 0.0)

    @classmethod
    def custom(cls, matrix) -> "BlockSpec":
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"custom block must be square, got shape {m.shape}")
        return cls("custom", m.shape[0], 0.0, m)

    @classmethod
    def from_csv(cls, path: str | Path) -> "BlockSpec":
        """Load a square, comma-separated, header-free matrix."""
        m = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls.custom(m)

    def validate(self) -> None:
        if self.kind not in BLOCK_KINDS:
            raise InvalidBlock(f"unknown block kind {self.kind!r}")
        if self.size < 1:
            raise DimensionMismatch("blocks must have at least one variant")
        if self.kind == "ar1" and not -1.0 < self.rho < 1.0:
            raise InvalidBlock(f"AR1 rho must lie in (-1, 1), got {self.rho}")
        if self.kind == "equicorrelated" and self.size > 1:
            lo = -1.0 / (self.size - 1)
            if not lo < self.rho < 1.0:
                raise InvalidBlock(
                    f"equicorrelated rho must lie in ({lo:.6g}, 1) for size {self.size}, got {self.rho}"
                )
        if self.kind == "custom":
            m = self.matrix
            if m is None or m.shape != (self.size, self.size):
                raise DimensionMismatch("custom block matrix does not match its size")
            if not np.allclose(m, m.T, rtol=0.0, atol=UNIT_DIAG_TOL):
                raise InvalidBlock("custom block must be symmetric")
            if np.max(np.abs(np.diag(m) - 1.0)) > UNIT_DIAG_TOL:
                raise InvalidBlock("custom block must have unit diagonal")

    def materialize(self) -> np.ndarray:
        self.validate()
        if self.kind == "ar1":
            idx = np.arange(self.size)
            return self.rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
        if self.kind == "equicorrelated":
            m = np.full((self.size, self.size), self.rho)
            np.fill_diagonal(m, 1.0)
            return m
        m = 0.5 * (self.matrix + self.matrix.T)
        np.fill_diagonal(m, 1.0)
        return m


@dataclass(frozen=True)
class SpectralLaw:
    """Discrete spectral law: equal mass on each eigenvalue."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float).ravel()
        if ev.size == 0:
            raise DimensionMismatch("spectral law needs at least one eigenvalue")
        if np.any(ev <= 0):
            raise NonPositiveDefinite("spectral law support must be strictly positive")
        ev = ev.copy()
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    def expect(self, values: np.ndarray) -> float:
        """Expectation of per-eigenvalue ``values`` under the law."""
        return float(np.mean(values))

    @classmethod
    def identity(cls, size: int) -> "SpectralLaw":
        return cls(np.ones(int(size)))

    @classmethod
    def pooled(cls, laws: Sequence["SpectralLaw"]) -> "SpectralLaw":
        return cls(np.concatenate([law.eigenvalues for law in laws]))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BlockCovariance:
    """Block-diagonal symmetric matrix with cached per-block eigendecompositions.

    Eigenvalues are stored in descending order with matching eigenvector columns.
    Instances are immutable and safe to share between workers.
    """

    blocks: tuple
    eigvals: tuple
    eigvecs: tuple
    boundaries: np.ndarray

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.boundaries)

    @property
    def total_dim(self) -> int:
        return int(self.boundaries[-1])

    def block_slice(self, l: int) -> slice:
        return slice(int(self.boundaries[l]), int(self.boundaries[l + 1]))

    def is_identity(self, tol: float = 1e-12) -> bool:
        return all(np.max(np.abs(ev - 1.0)) <= tol for ev in self.eigvals)

    def laws(self) -> list[SpectralLaw]:
        return [SpectralLaw(ev) for ev in self.eigvals]

    def apply_power(self, X: np.ndarray, power: float = 1.0) -> np.ndarray:
        """Return ``X @ M**power`` for an n x p matrix X, block by block."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.total_dim:
            raise DimensionMismatch(f"expected {self.total_dim} columns, got {X.shape[-1]}")
        out = np.empty_like(X)
        for l in range(self.n_blocks):
            sl = self.block_slice(l)
            if power == 1.0:
                M = self.blocks[l]
            else:
                Q, ev = self.eigvecs[l], self.eigvals[l]
                M = (Q * ev**power) @ Q.T
            out[..., sl] = X[..., sl] @ M
        return out

    def submatrix(self, idx: np.ndarray) -> np.ndarray:
        """Dense principal submatrix for an arbitrary (sorted) index set."""
        idx = np.asarray(idx, dtype=int)
        owner = np.searchsorted(self.boundaries, idx, side="right") - 1
        out = np.zeros((idx.size, idx.size))
        for l in np.unique(owner):
            pos = np.nonzero(owner == l)[0]
            local = idx[pos] - self.boundaries[l]
            out[np.ix_(pos, pos)] = self.blocks[l][np.ix_(local, local)]
        return out

    def to_dense(self) -> np.ndarray:
        return scipy.linalg.block_diag(*self.blocks)


def _factorize(block: np.ndarray, label: str) -> tuple[np.ndarray, np.ndarray]:
    ev, Q = scipy.linalg.eigh(block)
    if ev[0] <= EIG_FLOOR:
        raise NonPositiveDefinite(f"{label} has eigenvalue {ev[0]:.3e} <= {EIG_FLOOR:g}")
    order = np.argsort(ev)[::-1]
    return ev[order], Q[:, order]


def _from_blocks(blocks: Sequence[np.ndarray]) -> BlockCovariance:
    eigvals, eigvecs = [], []
    for l, b in enumerate(blocks):
        ev, Q = _factorize(b, f"block {l}")
        eigvals.append(_readonly(ev))
        eigvecs.append(_readonly(Q))
    sizes = [b.shape[0] for b in blocks]
    bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return BlockCovariance(
        blocks=tuple(_readonly(b) for b in blocks),
        eigvals=tuple(eigvals),
        eigvecs=tuple(eigvecs),
        boundaries=_readonly(bounds),
    )


def build_block_covariance(specs: Sequence[BlockSpec]) -> BlockCovariance:
    if len(specs) == 0:
        raise DimensionMismatch("need at least one block")
    return _from_blocks([s.materialize() for s in specs])


def block_sqrt(cov: BlockCovariance) -> BlockCovariance:
    """Symmetric square root of every block (no unit-diagonal requirement)."""
    roots = [(Q * np.sqrt(ev)) @ Q.T for ev, Q in zip(cov.eigvals, cov.eigvecs)]
    return _from_blocks([0.5 * (r + r.T) for r in roots])


def spectral_law(cov: BlockCovariance, block_index: int) -> SpectralLaw:
    if not 0 <= block_index < cov.n_blocks:
        raise IndexError(f"block index {block_index} out of range for {cov.n_blocks} blocks")
    return SpectralLaw(cov.eigvals[block_index])


def repeat_spec(spec: BlockSpec, count: int) -> list[BlockSpec]:
    return [spec] * int(count)
