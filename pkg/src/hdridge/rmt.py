"""Asymptotic prediction accuracy of ridge-type estimators.

Every expectation over a limiting spectral law is the exact average over a
block's eigenvalues. Blocks are described by ``SpectralLaw`` objects; a block's
aspect ratio is ``omega * p_l / p`` where ``p_l`` is the law's size.

Sign convention: ``a_dot`` is the derivative of the companion root with respect
to ``z = -lambda``, so ``a_dot = -da/dlambda`` (it is negative). The trace
formulas below use it in that form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, DivisionDegenerate, NoRoot, ToleranceNotMet, ValidationError
from .spectrum import BlockCovariance, SpectralLaw

BRACKET = (1e-12, 1.0)
MAX_ITER = 200
RESIDUAL_TOL = 1e-10
STIELTJES_TOL = 1e-8
DENOM_FLOOR = 1e-12


def optimal_lambda(h2: float, omega: float) -> float:
    """Accuracy-optimal penalty ``omega (1 - h2) / h2``."""
    return omega * (1.0 - h2) / h2


def _eigs(law) -> np.ndarray:
    if isinstance(law, SpectralLaw):
        return law.eigenvalues
    return SpectralLaw(law).eigenvalues


# ---------------------------------------------------------------------------
# companion fixed point


@dataclass(frozen=True)
class CompanionSolution:
    a: float
    a_dot: float
    m_neg_lambda: float
    v_neg_lambda: float
    residual: float
    omega: float
    lam: float


def _companion_gap(a: float, t: np.ndarray, omega: float, lam: float) -> float:
    return (1.0 - a) - omega * (1.0 - np.mean(lam / (a * t + lam)))


def solve_companion(omega: float, law, lam: float) -> CompanionSolution:
    """Solve ``1 - a = omega (1 - E[lam / (a t + lam)])`` for a in (0, 1] by bisection."""
    if not omega > 0 or not lam > 0:
        raise ValidationError(f"need omega > 0 and lambda > 0, got omega={omega}, lambda={lam}")
    t = _eigs(law)
    lo, hi = BRACKET
    g_lo = _companion_gap(lo, t, omega, lam)
    g_hi = _companion_gap(hi, t, omega, lam)
    if not (g_lo > 0 > g_hi or g_hi == 0):
        raise NoRoot(f"companion gap does not change sign on [{lo}, {hi}]: g={g_lo:.3e}, {g_hi:.3e}")
    if g_hi == 0:
        a = hi
    else:
        for _ in range(MAX_ITER):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if _companion_gap(mid, t, omega, lam) > 0:
                lo = mid
            else:
                hi = mid
        a = 0.5 * (lo + hi)
    residual = _companion_gap(a, t, omega, lam)
    if abs(residual) > RESIDUAL_TOL:
        raise ToleranceNotMet(f"companion residual {residual:.3e} after {MAX_ITER} iterations")

    d2 = (a * t + lam) ** 2
    a_dot = omega * np.mean(a * t / d2) / (-1.0 - omega * lam * np.mean(t / d2))
    m = float(np.mean(1.0 / (a * t + lam)))
    # cross-check against the self-consistent Marchenko-Pastur form at z = -lam
    mp = float(np.mean(1.0 / (t * (1.0 - omega + omega * lam * m) + lam)))
    if abs(m - mp) > STIELTJES_TOL:
        raise ToleranceNotMet(f"Stieltjes self-consistency off by {abs(m - mp):.3e}")
    v = omega * (m - 1.0 / lam) + 1.0 / lam
    return CompanionSolution(float(a), float(a_dot), m, float(v), float(residual), float(omega), float(lam))


# ---------------------------------------------------------------------------
# aspect ratios


@dataclass(frozen=True)
class AspectRatios:
    """Global and per-block ratios p/n, p/n_w, p/n_z."""

    omega: float
    omega_w: float
    omega_z: float
    block_sizes: tuple

    @classmethod
    def from_sizes(cls, block_sizes, n: int, n_w: int | None = None, n_z: int | None = None) -> "AspectRatios":
        p = int(sum(block_sizes))
        n_w = n if n_w is None else n_w
        n_z = n if n_z is None else n_z
        return cls(p / n, p / n_w, p / n_z, tuple(int(s) for s in block_sizes))

    @property
    def p(self) -> int:
        return int(sum(self.block_sizes))

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.block_sizes, dtype=float) / self.p

    def per_block(self, which: str = "train") -> np.ndarray:
        base = {"train": self.omega, "w": self.omega_w, "z": self.omega_z}[which]
        return base * self.weights


def _block_ratios(omega: float, laws: Sequence) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    eigs = [_eigs(law) for law in laws]
    if not eigs:
        raise DimensionMismatch("need at least one block")
    sizes = np.array([e.size for e in eigs], dtype=float)
    w = sizes / sizes.sum()
    return eigs, w, omega * w


# ---------------------------------------------------------------------------
# predictions


@dataclass(frozen=True)
class AsymptoticPrediction:
    a2: float
    formula_id: str
    lam: float | None = None
    omega: float | None = None
    h2: float | None = None
    intermediates: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RTraces:
    R1: float
    R2: float
    R3: float
    solutions: tuple
    R3_resolvent: float = 0.0


def r_traces(lam: float, laws: Sequence, omega: float) -> RTraces:
    """Trace limits R1, R2, R3 of the block-wise ridge estimator.

    ``R3`` is the closed-form pair sum over distinct blocks. ``R3_resolvent`` is
    the limit of ``p^{-1} tr(D G S G D)`` (D the off-block sample covariance,
    G the block resolvent), the cross term that enters ``|S_hat|^2``. Averaging
    over the rows of the other blocks gives
    ``sum_h (omega - omega_h) (p_h/p) {r1_h - lam r2_h}``. The two agree for
    neither block type in general; see the README.
    """
    eigs, w, om = _block_ratios(omega, laws)
    sols, R1, R2, R3r = [], 0.0, 0.0, 0.0
    for t, wl, ol in zip(eigs, w, om):
        s = solve_companion(ol, t, lam)
        d = s.a * t + lam
        r1 = np.mean(t / d)
        r2 = np.mean((1.0 - s.a_dot * t) * t / d**2)
        R1 += wl * r1
        R2 += wl * r2
        R3r += (omega - ol) * wl * (r1 - lam * r2)
        sols.append(s)
    x = np.array([ol * (1.0 - lam * s.m_neg_lambda) for ol, s in zip(om, sols)])
    R3 = (x.sum() ** 2 - np.sum(x**2)) / omega
    return RTraces(float(R1), float(R2), float(max(R3, 0.0)), tuple(sols), float(max(R3r, 0.0)))


def _ratio(num: float, den: float, what: str) -> float:
    if not abs(den) >= 1e-14:
        raise DivisionDegenerate(f"{what}: denominator {den:.3e} is degenerate")
    return num / den


CROSS_TERMS = ("pair", "resolvent")


def a2_block_ridge(
    h2: float, omega: float, laws: Sequence, lam: float | None = None, cross_term: str = "pair"
) -> AsymptoticPrediction:
    """Limit of A^2 for the block-wise ridge estimator; ``lam=None`` means lambda*.

    ``cross_term="pair"`` (default) uses the closed-form pair sum R3;
    ``"resolvent"`` substitutes ``R3_resolvent`` and reports formula id
    ``A2_B_resolvent``.
    """
    _check_h2(h2)
    if cross_term not in CROSS_TERMS:
        raise ValidationError(f"cross_term must be one of {CROSS_TERMS}, got {cross_term!r}")
    at_star = lam is None
    lam = optimal_lambda(h2, omega) if at_star else float(lam)
    r = r_traces(lam, laws, omega)
    R3 = r.R3 if cross_term == "pair" else r.R3_resolvent
    num = (1.0 - lam * r.R1) ** 2 * h2**2
    den = (1.0 + lam**2 * r.R2 - 2.0 * lam * r.R1 + R3) * h2 + (r.R1 - lam * r.R2) * omega * (1.0 - h2)
    fid = "A2_B" if cross_term == "pair" else "A2_B_resolvent"
    a2 = _ratio(num, den, fid)
    inter = {"R1": r.R1, "R2": r.R2, "R3": R3, "R3_pair": r.R3, "R3_resolvent": r.R3_resolvent,
             "a": [s.a for s in r.solutions]}
    if at_star:
        inter["a2_optimal_form"] = h2 * (1.0 - lam * r.R1) ** 2 / (1.0 - lam * r.R1 + R3)
    return AsymptoticPrediction(float(a2), fid, lam, omega, h2, inter)


def a2_ridge(h2: float, omega: float, full_law) -> AsymptoticPrediction:
    """Limit of A^2 for full ridge at lambda*, from the pooled spectral law."""
    _check_h2(h2)
    t = _eigs(full_law)
    lam = optimal_lambda(h2, omega)
    s = solve_companion(omega, t, lam)
    R1 = float(np.mean(t / (s.a * t + lam)))
    return AsymptoticPrediction(h2 * (1.0 - lam * R1), "A2_R", lam, omega, h2, {"R1": R1, "a": s.a})


# ---------------------------------------------------------------------------
# reference panels


@dataclass(frozen=True)
class PanelTraces:
    """Per-block normalized traces ``p_l^{-1} tr{(S_W+lam)^{-1} S (S_W+lam)^{-1} S^k}``."""

    pair: np.ndarray
    pair_sq: np.ndarray
    solutions: tuple


def ref_panel_traces(lam: float, laws: Sequence, omega_w_blocks, inner_ratios=None) -> PanelTraces:
    """Deterministic equivalents of the two panel-resolvent traces per block.

    ``omega_w_blocks`` are the panel ratios p_l / n_w that fix the companion
    root; ``inner_ratios`` are p_l / n for the n^{-1}-normalized inner traces
    (defaults to the panel ratios).
    """
    eigs = [_eigs(law) for law in laws]
    omega_w_blocks = np.asarray(omega_w_blocks, dtype=float)
    inner = omega_w_blocks if inner_ratios is None else np.asarray(inner_ratios, dtype=float)
    pair, pair_sq, sols = [], [], []
    for t, ow, r in zip(eigs, omega_w_blocks, inner):
        s = solve_companion(ow, t, lam)
        d = s.a * t + lam
        tr1 = np.mean(t / d)
        tr2 = np.mean(t**2 / d**2)
        tr3 = np.mean(t**3 / d**2)
        c = (1.0 + r * tr1) ** 2
        den = c - r * tr2
        if den < DENOM_FLOOR:
            raise DivisionDegenerate(f"panel trace denominator {den:.3e} below {DENOM_FLOOR:g}")
        pair.append(c * tr2 / den)
        pair_sq.append(c * tr3 / den)
        sols.append(s)
    return PanelTraces(np.array(pair), np.array(pair_sq), tuple(sols))


def a2_block_ref(
    h2: float,
    omega: float,
    laws: Sequence,
    lam: float | None = None,
    panel: str = "W",
    omega_panel: float | None = None,
    inner_n: str = "panel",
) -> AsymptoticPrediction:
    """Limit of A^2 for block-wise ridge with covariance from W or Z.

    ``omega_panel`` is p / n_w (panel W) or p / n_z (panel Z), defaulting to
    ``omega``. ``inner_n`` picks the sample count behind the inner traces of
    the W branch: the panel's (``"panel"``) or the training cohort's.
    """
    _check_h2(h2)
    lam = optimal_lambda(h2, omega) if lam is None else float(lam)
    omega_panel = omega if omega_panel is None else float(omega_panel)
    eigs, w, _ = _block_ratios(omega, laws)
    om_panel = omega_panel * w
    if panel == "W":
        if inner_n not in ("panel", "training"):
            raise ValidationError(f"inner_n must be 'panel' or 'training', got {inner_n!r}")
        inner = om_panel if inner_n == "panel" else omega * w
        pt = ref_panel_traces(lam, eigs, om_panel, inner)
        Q1 = sum(wl * np.mean(t**2 / (s.a * t + lam)) for t, wl, s in zip(eigs, w, pt.solutions))
        Q2 = float(np.dot(w, pt.pair_sq))
        Q3 = float(np.dot(w, pt.pair))
        a2 = _ratio(Q1**2 * h2**2, Q2 * h2 + Q3 * omega, "A2_BW")
        inter = {"Q1": float(Q1), "Q2": Q2, "Q3": Q3, "a": [s.a for s in pt.solutions]}
        return AsymptoticPrediction(float(a2), "A2_BW", lam, omega, h2, inter)
    if panel == "Z":
        Q4 = Q5 = Q6 = Q7 = 0.0
        sols = []
        for t, wl, oz in zip(eigs, w, om_panel):
            s = solve_companion(oz, t, lam)
            d = s.a * t + lam
            corr = 1.0 - s.a_dot * t
            Q4 += wl * np.mean(t / d)
            Q5 += wl * np.mean(t**2 / d)
            Q6 += wl * np.mean(corr * t**2 / d**2)
            Q7 += wl * np.mean(corr * t / d**2)
            sols.append(s)
        num = (1.0 - lam * Q4) ** 2 * h2**2
        a2 = _ratio(num, (Q5 - lam * Q6) * h2 + (Q4 - lam * Q7) * omega, "A2_BZ")
        inter = {"Q4": float(Q4), "Q5": float(Q5), "Q6": float(Q6), "Q7": float(Q7), "a": [s.a for s in sols]}
        return AsymptoticPrediction(float(a2), "A2_BZ", lam, omega, h2, inter)
    raise ValidationError(f"panel must be 'W' or 'Z', got {panel!r}")


# ---------------------------------------------------------------------------
# identity covariance closed forms


def b_closed(lam: float, omega: float) -> float:
    """Positive root of ``b^2 + (lam + omega - 1) b - lam = 0``."""
    s = lam + omega - 1.0
    return 0.5 * (np.sqrt(s * s + 4.0 * lam) - s)


def b_dot_closed(lam: float, omega: float) -> float:
    b = b_closed(lam, omega)
    return -(omega * b) / (omega * lam + (b + lam) ** 2)


def a2_identity_closed_forms(
    h2: float, omega: float, omega_w: float | None = None, omega_z: float | None = None, lam: float | None = None
) -> dict[str, AsymptoticPrediction]:
    """Marginal, ridge and non-block reference ridge accuracies when the covariance is I."""
    _check_h2(h2)
    omega_w = omega if omega_w is None else omega_w
    omega_z = omega if omega_z is None else omega_z
    lam = optimal_lambda(h2, omega) if lam is None else float(lam)
    base = h2**2 / (h2 + omega)
    bw, bwd = b_closed(lam, omega_w), b_dot_closed(lam, omega_w)
    bz = b_closed(lam, omega_z)
    br, brd = b_closed(lam, omega), b_dot_closed(lam, omega)
    a2_r = h2**2 * br**2 / ((br**2 - lam**2 * brd) * h2 + (br + lam * brd) * omega * (1.0 - h2))
    return {
        "S": AsymptoticPrediction(base, "A2_S", None, omega, h2, {}),
        "R": AsymptoticPrediction(a2_r, "A2_R_closed", lam, omega, h2, {"b_r": br, "b_r_dot": brd}),
        "RW": AsymptoticPrediction(base / (1.0 - bwd), "A2_RW", lam, omega, h2, {"b_w": bw, "b_w_dot": bwd, "omega_w": omega_w}),
        "RZ": AsymptoticPrediction(base * (bz**2 + lam) / (bz + lam), "A2_RZ", lam, omega, h2, {"b_z": bz, "omega_z": omega_z}),
    }


# ---------------------------------------------------------------------------
# finite-sample trace formulas


def _group_covariances(cov: BlockCovariance, groups) -> list[np.ndarray]:
    owner = np.repeat(np.arange(cov.n_blocks), cov.sizes)
    for g in groups:
        blocks = np.unique(owner[g])
        covered = np.concatenate([np.arange(cov.boundaries[b], cov.boundaries[b + 1]) for b in blocks])
        if covered.size != np.size(g):
            raise DimensionMismatch("each group must be a union of whole covariance blocks")
    return [cov.submatrix(g) for g in groups]


def blpc_traces(X, cov: BlockCovariance, basis, lam: float) -> dict[str, float]:
    """Finite-sample traces P1..P6 for the BLPC estimators on a realized design.

    Works in PC space: with ``A = V'SV``, ``B = V'S_hat V``, ``C = V' S_hat^2 V``
    and ``R = (V'X'XV + lam I)^{-1}`` per group, every trace reduces to a
    q_l x q_l product.
    """
    D = X.design if hasattr(X, "design") else np.asarray(X, dtype=float)
    n, p = D.shape
    if p != cov.total_dim or basis.p != p:
        raise DimensionMismatch("design, covariance and basis disagree on p")
    sig = _group_covariances(cov, basis.groups)
    P = dict.fromkeys(("P1", "P2", "P3", "P4", "P5", "P6"), 0.0)
    for g, V, S in zip(basis.groups, basis.V, sig):
        Xg = D[:, g]
        XV = Xg @ V
        B = XV.T @ XV / n
        CV = D.T @ XV / n  # S_hat[:, g] @ V
        C = CV.T @ CV
        A = V.T @ S @ V
        E = XV.T @ (Xg @ (S @ V)) / n  # V' S_hat_gg S V
        gram = XV.T @ XV
        gram[np.diag_indices_from(gram)] += lam
        R = np.linalg.inv(gram)
        RAR = R @ A @ R
        P["P1"] += np.trace(E)
        P["P2"] += np.sum(A * C)
        P["P3"] += np.sum(A * B)
        P["P4"] += np.sum(R * E.T)
        P["P5"] += np.sum(RAR * C)
        P["P6"] += np.sum(RAR * B)
    return {k: float(v) / p for k, v in P.items()}


def a2_blpc(h2: float, omega: float, P: dict, which: str = "marginal") -> AsymptoticPrediction:
    _check_h2(h2)
    if which == "marginal":
        num, s2, s3, fid = P["P1"], P["P2"], P["P3"], "A2_PC_S"
    elif which == "ridge":
        num, s2, s3, fid = P["P4"], P["P5"], P["P6"], "A2_PC_R"
    else:
        raise ValidationError(f"which must be 'marginal' or 'ridge', got {which!r}")
    a2 = _ratio(num**2 * h2**2, s2 * h2 + s3 * omega * (1.0 - h2), fid)
    return AsymptoticPrediction(float(a2), fid, None, omega, h2, dict(P))


def marginal_traces(X, cov: BlockCovariance) -> dict[str, float]:
    """``p^{-1} tr(S S_hat)`` and ``p^{-1} tr(S S_hat^2)`` on a realized design."""
    D = X.design if hasattr(X, "design") else np.asarray(X, dtype=float)
    n, p = D.shape
    t1 = t2 = 0.0
    for l in range(cov.n_blocks):
        sl = cov.block_slice(l)
        Xl = D[:, sl]
        S = cov.blocks[l]
        t1 += np.sum(S * (Xl.T @ Xl)) / n
        C = D.T @ Xl / n
        t2 += np.sum(S * (C.T @ C))
    return {"P1": t1 / p, "P2": t2 / p, "P3": t1 / p}


def a2_marginal_conditional(h2: float, omega: float, X, cov: BlockCovariance) -> AsymptoticPrediction:
    T = marginal_traces(X, cov)
    pred = a2_blpc(h2, omega, T, "marginal")
    return AsymptoticPrediction(pred.a2, "A2_S_cond", None, omega, h2, T)


def _dense_block_parts(X, cov: BlockCovariance, lam: float):
    D = X.design if hasattr(X, "design") else np.asarray(X, dtype=float)
    n, p = D.shape
    if p != cov.total_dim:
        raise DimensionMismatch("design and covariance disagree on p")
    S_hat = D.T @ D / n
    delta = S_hat.copy()
    G = np.zeros((p, p))
    S = np.zeros((p, p))
    for l in range(cov.n_blocks):
        sl = cov.block_slice(l)
        delta[sl, sl] = 0.0
        blk = S_hat[sl, sl].copy()
        blk[np.diag_indices_from(blk)] += lam
        G[sl, sl] = np.linalg.inv(blk)
        S[sl, sl] = cov.blocks[l]
    return delta, G, S


def empirical_offblock_traces(X, cov: BlockCovariance, lam: float) -> tuple[float, float, float]:
    """Realized values of the three off-block trace functionals.

    With ``Delta = S_hat - S_hat_B`` and ``G = (S_hat_B + lam I)^{-1}``:
    ``T1 = p^{-1} tr(Delta G S)``, ``T2 = p^{-1} tr(Delta G^2 S)`` and
    ``T3 = p^{-1} tr(Delta G S Delta G)``.
    """
    delta, G, S = _dense_block_parts(X, cov, lam)
    p = S.shape[0]
    GS = G @ S
    T1 = np.sum(delta * GS.T) / p
    T2 = np.sum(delta * (G @ GS).T) / p
    M = delta @ G
    T3 = np.sum((M @ S) * M.T) / p
    return float(T1), float(T2), float(T3)


def empirical_cross_trace(X, cov: BlockCovariance, lam: float) -> float:
    """Realized ``p^{-1} tr(Delta G S G Delta)``, the oracle for ``R3_resolvent``."""
    delta, G, S = _dense_block_parts(X, cov, lam)
    M = G @ delta
    return float(np.sum((S @ M) * M) / S.shape[0])


def _check_h2(h2: float) -> None:
    if not 0.0 < h2 < 1.0:
        raise ValidationError(f"h2 must lie in (0, 1), got {h2}")
