"""Marginal, ridge, block-wise, reference-panel and BLPC coefficient estimators.

All estimators are pure functions of their inputs. Designs may be passed as a
``Cohort`` or as a plain ``n x p`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .datagen import Cohort
from .errors import BadGrouping, DimensionMismatch, RankDeficient, SolveFailure, ValidationError

KINDS = (
    "marginal",
    "ridge",
    "block_ridge",
    "ref_ridge",
    "block_ref_ridge",
    "blpc_marginal",
    "blpc_block_ridge",
)
RIDGE_KINDS = ("ridge", "block_ridge", "ref_ridge", "block_ref_ridge")
BLPC_KINDS = ("blpc_marginal", "blpc_block_ridge")
COV_SOURCES = ("X", "W", "Z")
MIN_LAMBDA = 1e-10


def _design(X) -> np.ndarray:
    return X.design if isinstance(X, Cohort) else np.asarray(X, dtype=float)


# ---------------------------------------------------------------------------
# groupings


def grouping_from_boundaries(boundaries) -> list[np.ndarray]:
    b = np.asarray(boundaries, dtype=int)
    return [np.arange(b[i], b[i + 1]) for i in range(b.size - 1)]


def single_group(p: int) -> list[np.ndarray]:
    return [np.arange(p)]


def merge_groups(groups: Sequence[np.ndarray], per_group: int) -> list[np.ndarray]:
    """Merge consecutive groups ``per_group`` at a time (chromosome-style)."""
    if per_group < 1:
        raise BadGrouping("per_group must be positive")
    return [np.concatenate(groups[i : i + per_group]) for i in range(0, len(groups), per_group)]


def validate_grouping(groups: Sequence[np.ndarray], p: int) -> list[np.ndarray]:
    groups = [np.asarray(g, dtype=int) for g in groups]
    if not groups or any(g.size == 0 for g in groups):
        raise BadGrouping("groups must be nonempty")
    allidx = np.concatenate(groups)
    counts = np.bincount(allidx, minlength=p) if allidx.min() >= 0 else None
    if counts is None or counts.size != p:
        raise BadGrouping(f"group indices fall outside 0..{p - 1}")
    if np.any(counts > 1):
        raise BadGrouping(f"groups overlap at indices {np.nonzero(counts > 1)[0][:10].tolist()}")
    if np.any(counts == 0):
        raise BadGrouping(f"groups miss indices {np.nonzero(counts == 0)[0][:10].tolist()}")
    return groups


# ---------------------------------------------------------------------------
# specs and outputs


@dataclass(frozen=True)
class EstimatorSpec:
    """What to fit.

    ``lam=None`` defers to the scenario's lambda policy. For BLPC kinds,
    ``lam_scale`` (c) sets lambda = c * q / n when ``lam`` is None, and ``tau``
    is the cumulative variance threshold for component selection. ``grouping``
    is ``"blocks"``, ``"single"`` or ``"merge:k"``. ``panel_n`` subsamples the
    reference cohort to its first ``panel_n`` rows.
    """

    kind: str
    lam: float | None = None
    cov_source: str = "X"
    grouping: str = "blocks"
    label: str = ""
    tau: float = 0.5
    lam_scale: float = 1.0
    panel_n: int | None = None

    @property
    def name(self) -> str:
        return self.label or self.kind

    def problems(self) -> list[str]:
        out = []
        if self.kind not in KINDS:
            out.append(f"estimator kind must be one of {KINDS}, got {self.kind!r}")
        if self.cov_source not in COV_SOURCES:
            out.append(f"cov_source must be one of {COV_SOURCES}, got {self.cov_source!r}")
        if self.kind in ("ref_ridge", "block_ref_ridge") and self.cov_source == "X" and self.panel_n:
            out.append("panel_n only applies to W or Z covariance sources")
        if self.lam is not None:
            if self.kind == "blpc_block_ridge" and self.lam < 0:
                out.append("BLPC ridge lambda must be >= 0")
            elif self.kind in RIDGE_KINDS and self.lam <= 0:
                out.append(f"{self.kind} lambda must be > 0")
        if self.kind in BLPC_KINDS and not 0.0 < self.tau <= 1.0:
            out.append("tau must lie in (0, 1]")
        if self.lam_scale < 0:
            out.append("lam_scale must be >= 0")
        if not (self.grouping in ("blocks", "single") or self.grouping.startswith("merge:")):
            out.append(f"grouping must be 'blocks', 'single' or 'merge:k', got {self.grouping!r}")
        elif self.grouping.startswith("merge:"):
            try:
                if int(self.grouping.split(":", 1)[1]) < 1:
                    raise ValueError
            except ValueError:
                out.append(f"bad merge grouping {self.grouping!r}")
        if self.panel_n is not None and self.panel_n < 3:
            out.append("panel_n must be at least 3")
        return out

    def groups_for(self, boundaries) -> list[np.ndarray]:
        base = grouping_from_boundaries(boundaries)
        if self.grouping == "single":
            return single_group(int(boundaries[-1]))
        if self.grouping.startswith("merge:"):
            return merge_groups(base, int(self.grouping.split(":", 1)[1]))
        return base


@dataclass(frozen=True)
class VarianceThreshold:
    tau: float


@dataclass(frozen=True)
class FixedCount:
    counts: tuple


@dataclass(frozen=True, eq=False)
class BlpcBasis:
    """Per-group right singular vectors kept for prediction."""

    groups: list
    V: list
    singular_values: list
    variance_explained: list
    p: int

    @property
    def q_per_group(self) -> list[int]:
        return [v.shape[1] for v in self.V]

    @property
    def q(self) -> int:
        return int(sum(self.q_per_group))

    def scores(self, X) -> list[np.ndarray]:
        D = _design(X)
        return [D[:, g] @ v for g, v in zip(self.groups, self.V)]

    def project(self, X) -> np.ndarray:
        """``X @ V`` as an n x q matrix, computed group by group."""
        return np.hstack(self.scores(X))

    def dense(self) -> np.ndarray:
        out = np.zeros((self.p, self.q))
        col = 0
        for g, v in zip(self.groups, self.V):
            out[np.ix_(g, np.arange(col, col + v.shape[1]))] = v
            col += v.shape[1]
        return out


@dataclass(frozen=True, eq=False)
class EstimatorOutput:
    coefficients: np.ndarray
    kind: str
    lam: float | None = None
    projection: BlpcBasis | None = field(default=None, repr=False)

    @property
    def space(self) -> str:
        return "variant" if self.projection is None else "pc"

    def predict(self, Z) -> np.ndarray:
        D = _design(Z)
        if self.projection is None:
            return D @ self.coefficients
        return self.projection.project(D) @ self.coefficients

    def scaled(self, c: float) -> "EstimatorOutput":
        return EstimatorOutput(self.coefficients * c, self.kind, self.lam, self.projection)


# ---------------------------------------------------------------------------
# solvers


def _check_xy(D: np.ndarray, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if D.ndim != 2 or y.shape[0] != D.shape[0]:
        raise DimensionMismatch(f"design {D.shape} and response {y.shape} disagree")
    return y


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam >= MIN_LAMBDA:
        raise ValidationError(f"ridge lambda must be >= {MIN_LAMBDA:g}, got {lam}")
    return lam


def _spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(f"regularized system is not positive definite: {exc}") from exc
    return scipy.linalg.cho_solve(c, b, check_finite=False)


def _ridge_solve(R: np.ndarray, v: np.ndarray, lam: float, route: str = "auto") -> np.ndarray:
    """Solve ``(R'R / n_r + lam I) b = v`` with the cheaper of primal or dual form.

    The dual uses ``(R'R/n + lam I)^{-1} = (I - R'(RR' + n lam I)^{-1} R) / lam``.
    """
    n_r, k = R.shape
    if route == "auto":
        route = "dual" if n_r < k else "primal"
    if route == "primal":
        A = R.T @ R / n_r
        A[np.diag_indices_from(A)] += lam
        return _spd_solve(A, v)
    if route == "dual":
        G = R @ R.T
        G[np.diag_indices_from(G)] += n_r * lam
        return (v - R.T @ _spd_solve(G, R @ v)) / lam
    raise ValueError(f"unknown route {route!r}")


def marginal(X, y) -> EstimatorOutput:
    D = _design(X)
    y = _check_xy(D, y)
    return EstimatorOutput(D.T @ y / D.shape[0], "marginal")


def ridge(X, y, lam: float, route: str = "auto") -> EstimatorOutput:
    """Ridge coefficients ``(X'X/n + lam I)^{-1} X'y / n``.

    ``route`` forces the primal p x p or dual n x n solve; ``"auto"`` picks dual
    when n < p. Both routes are algebraically identical.
    """
    D = _design(X)
    y = _check_xy(D, y)
    lam = _check_lambda(lam)
    n = D.shape[0]
    if route == "dual" or (route == "auto" and n < D.shape[1]):
        G = D @ D.T / n
        G[np.diag_indices_from(G)] += lam
        beta = D.T @ _spd_solve(G, y) / n
    else:
        beta = _ridge_solve(D, D.T @ y / n, lam, "primal")
    return EstimatorOutput(beta, "ridge", lam)


def block_ridge(X, y, lam: float, grouping=None) -> EstimatorOutput:
    D = _design(X)
    y = _check_xy(D, y)
    lam = _check_lambda(lam)
    if grouping is None:
        grouping = grouping_from_boundaries(X.boundaries) if isinstance(X, Cohort) else single_group(D.shape[1])
    groups = validate_grouping(grouping, D.shape[1])
    beta = np.empty(D.shape[1])
    for g in groups:
        beta[g] = ridge(D[:, g], y, lam).coefficients
    return EstimatorOutput(beta, "block_ridge", lam)


def block_ref_ridge(
    xty: np.ndarray,
    ref,
    lam: float,
    grouping=None,
    xty_norm: str = "panel",
    n_train: int | None = None,
) -> EstimatorOutput:
    """Block-wise ridge with covariance taken from a reference cohort.

    ``xty`` is the unnormalized ``X'y``. Per group the solve is
    ``(R_g'R_g / n_ref + lam I)^{-1} X_g'y / n_norm`` where ``n_norm`` is the
    panel size (``xty_norm="panel"``) or the training size (``"training"``).
    The choice only rescales the coefficients.
    """
    R = _design(ref)
    xty = np.asarray(xty, dtype=float)
    if xty.shape != (R.shape[1],):
        raise DimensionMismatch(f"X'y has shape {xty.shape}, reference has {R.shape[1]} columns")
    lam = _check_lambda(lam)
    if xty_norm == "panel":
        norm = R.shape[0]
    elif xty_norm == "training":
        if n_train is None:
            raise ValidationError("xty_norm='training' needs n_train")
        norm = n_train
    else:
        raise ValidationError(f"xty_norm must be 'panel' or 'training', got {xty_norm!r}")
    if grouping is None:
        grouping = grouping_from_boundaries(ref.boundaries) if isinstance(ref, Cohort) else single_group(R.shape[1])
    groups = validate_grouping(grouping, R.shape[1])
    beta = np.empty(R.shape[1])
    for g in groups:
        beta[g] = _ridge_solve(R[:, g], xty[g] / norm, lam)
    return EstimatorOutput(beta, "block_ref_ridge", lam)


def ref_ridge(xty: np.ndarray, ref, lam: float, xty_norm: str = "panel", n_train: int | None = None) -> EstimatorOutput:
    R = _design(ref)
    out = block_ref_ridge(xty, R, lam, single_group(R.shape[1]), xty_norm, n_train)
    return EstimatorOutput(out.coefficients, "ref_ridge", out.lam)


# ---------------------------------------------------------------------------
# block-wise local principal components


def _numerical_rank(d: np.ndarray, shape) -> int:
    if d.size == 0 or d[0] == 0:
        return 0
    tol = max(shape) * np.finfo(float).eps * d[0]
    return int(np.sum(d > tol))


def fit_blpc_basis(X, grouping=None, selection=VarianceThreshold(0.5)) -> BlpcBasis:
    """Per-group thin SVD keeping the leading right singular vectors.

    With ``VarianceThreshold(tau)`` the smallest q_l whose cumulative squared
    singular values reach ``tau`` of the group total is kept; ``FixedCount``
    gives q_l directly.
    """
    D = _design(X)
    if grouping is None:
        grouping = grouping_from_boundaries(X.boundaries) if isinstance(X, Cohort) else single_group(D.shape[1])
    groups = validate_grouping(grouping, D.shape[1])
    if isinstance(selection, VarianceThreshold):
        if not 0.0 < selection.tau <= 1.0:
            raise ValidationError(f"tau must lie in (0, 1], got {selection.tau}")
    elif isinstance(selection, FixedCount):
        if len(selection.counts) != len(groups):
            raise DimensionMismatch("need one component count per group")
    else:
        raise ValidationError(f"unknown selection {selection!r}")

    Vs, ds, ves = [], [], []
    for i, g in enumerate(groups):
        Xg = D[:, g]
        _, d, Vt = np.linalg.svd(Xg, full_matrices=False)
        rank = _numerical_rank(d, Xg.shape)
        if rank == 0:
            raise RankDeficient(f"group {i} has no positive singular values")
        d2 = d[:rank] ** 2
        cum = np.cumsum(d2) / d2.sum()
        if isinstance(selection, VarianceThreshold):
            q = int(np.searchsorted(cum, selection.tau - 1e-12) + 1)
            q = min(q, rank)
        else:
            q = int(selection.counts[i])
            if q < 1:
                raise ValidationError(f"group {i}: component count must be >= 1")
            if q > rank:
                raise RankDeficient(f"group {i}: requested {q} components but rank is {rank}")
        Vs.append(Vt[:q].T.copy())
        ds.append(d[:q].copy())
        ves.append(cum[:q].copy())
    return BlpcBasis(groups, Vs, ds, ves, D.shape[1])


def blpc_marginal(X, y, basis: BlpcBasis) -> EstimatorOutput:
    D = _design(X)
    y = _check_xy(D, y)
    if D.shape[1] != basis.p:
        raise DimensionMismatch("basis was fit on a different number of variants")
    eta = basis.project(D).T @ y / D.shape[0]
    return EstimatorOutput(eta, "blpc_marginal", None, basis)


def blpc_block_ridge(X, y, basis: BlpcBasis, lam: float, method: str = "diagonal") -> EstimatorOutput:
    """``eta = R(lam) V'X'y / n`` with ``R = blockdiag((V_l'X_l'X_l V_l + lam I)^{-1})``.

    When ``basis`` was fit on ``X`` the score Gram of each group is
    ``diag(d**2)``, which ``method="diagonal"`` exploits; ``"dense"`` forms and
    solves the Gram explicitly.
    """
    D = _design(X)
    y = _check_xy(D, y)
    lam = float(lam)
    if lam < 0:
        raise ValidationError("BLPC ridge lambda must be >= 0")
    n = D.shape[0]
    parts = []
    for S, d in zip(basis.scores(D), basis.singular_values):
        rhs = S.T @ y / n
        if method == "diagonal":
            denom = d**2 + lam
            if np.any(denom <= np.finfo(float).tiny):
                raise SolveFailure("retained singular value underflows with lambda = 0")
            parts.append(rhs / denom)
        elif method == "dense":
            G = S.T @ S
            G[np.diag_indices_from(G)] += lam
            parts.append(_spd_solve(G, rhs))
        else:
            raise ValueError(f"unknown method {method!r}")
    return EstimatorOutput(np.concatenate(parts), "blpc_block_ridge", lam, basis)
