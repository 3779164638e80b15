"""Chi-square distance calibration of pseudo-design weights.

Weights start as the constant pseudo-design weight N/n (every ad is
treated as if drawn by simple random sampling from the vacancy
population).  Calibration then moves them as little as possible, in the
chi-square sense sum((w_i - d_i)^2 / d_i), subject to linear benchmark
constraints ``w' X = T``.  The closed-form solution is a regression
adjustment:

    w = d + D X (X' D X)^{-1} (T - X' d)

with ``D = diag(d)`` and unit tuning constants.  Negative weights are
legal and only counted, never clipped, because clipping would break the
benchmark constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, RankDeficient

#: basis tags for WeightVector
PSEUDO_DESIGN = "pseudo_design"
GREG = "greg"
MODEL_CALIBRATED = "model_calibrated"

#: singular values below RANK_RTOL * s_max count as zero
RANK_RTOL = 1e-10

#: calibration constraints must hold to this relative tolerance
CONSTRAINT_RTOL = 1e-8


@dataclass(frozen=True)
class WeightVector:
    """Per-record weights plus provenance and diagnostics.

    ``basis`` says how the weights arose (pseudo design, GREG
    calibration, or model-assisted calibration).  ``outcome_tag`` is
    ``"shared"`` for weight sets reused across skills and the skill
    name for model-calibrated weights, which depend on the outcome
    through the fitted means.
    """

    values: np.ndarray
    basis: str
    outcome_tag: str = "shared"
    degenerate_model: bool = False
    constraint_rel_error: float = 0.0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def negative_count(self) -> int:
        return int((self.values < 0).sum())

    def diagnostics(self) -> dict:
        v = self.values
        return {
            "min": float(v.min()),
            "max": float(v.max()),
            "negative_count": self.negative_count,
        }


def pseudo_weights(n: int, population_total: float) -> WeightVector:
    """Constant pseudo-design weights N/n for a sample of size n."""
    if n <= 0:
        raise DimensionMismatch(f"sample size {n}")
    if not population_total > 0:
        raise DimensionMismatch(f"population total {population_total}")
    return WeightVector(
        values=np.full(n, population_total / n, dtype=np.float64),
        basis=PSEUDO_DESIGN,
    )


def _solve_calibration(d, X, T):
    """Return (adjusted weights, max relative constraint residual).

    Raises RankDeficient when X'DX is numerically singular under the
    RANK_RTOL singular-value test.
    """
    A = X.T @ (d[:, None] * X)
    U, s, Vt = np.linalg.svd(A)
    if s[0] <= 0 or s[-1] < RANK_RTOL * s[0]:
        raise RankDeficient(
            f"smallest singular value {s[-1]:.3e} vs largest {s[0]:.3e}"
        )
    resid = T - X.T @ d
    lam = Vt.T @ ((U.T @ resid) / s)
    w = d + d * (X @ lam)
    # one refinement pass keeps the residual at working precision even
    # for poorly scaled instances
    resid2 = T - X.T @ w
    lam2 = Vt.T @ ((U.T @ resid2) / s)
    w = w + d * (X @ lam2)
    rel = float(np.max(np.abs(T - X.T @ w) / np.abs(T))) if T.size else 0.0
    return w, rel


def calibrate_chi2(design_weights, X, totals, outcome_tag: str = "shared") -> WeightVector:
    """Calibrate weights so the weighted column sums hit ``totals``.

    Parameters
    ----------
    design_weights : array or WeightVector
        Starting weights d (typically pseudo-design weights).
    X : array or DesignMatrix
        n x p benchmark matrix.
    totals : array or TotalsVector
        Target column totals T, all positive.

    Returns
    -------
    WeightVector
        Basis ``"greg"``; satisfies ``|w'X - T| <= 1e-8 |T|`` per
        component.

    Raises
    ------
    RankDeficient
        X'DX is singular at the 1e-10 relative singular value cutoff.
    DimensionMismatch
        Shapes disagree.
    """
    d = np.asarray(getattr(design_weights, "values", design_weights), dtype=np.float64)
    Xv = np.asarray(getattr(X, "values", X), dtype=np.float64)
    T = np.asarray(getattr(totals, "values", totals), dtype=np.float64)
    if Xv.ndim != 2 or d.ndim != 1 or T.ndim != 1:
        raise DimensionMismatch("expected d (n,), X (n,p), T (p,)")
    n, p = Xv.shape
    if d.shape[0] != n or T.shape[0] != p:
        raise DimensionMismatch(
            f"d has {d.shape[0]} rows, X is {n}x{p}, T has {T.shape[0]}"
        )
    w, rel = _solve_calibration(d, Xv, T)
    if rel > CONSTRAINT_RTOL:
        raise RankDeficient(
            f"calibration residual {rel:.2e} exceeds {CONSTRAINT_RTOL:.0e}; "
            "constraints are numerically inconsistent"
        )
    return WeightVector(
        values=w, basis=GREG, outcome_tag=outcome_tag, constraint_rel_error=rel
    )


def calibrate_model_assisted(
    design_weights,
    mu_hat,
    population_total: float,
    model_total: float,
    outcome_tag: str = "shared",
) -> WeightVector:
    """Calibrate to the two benchmarks (N, sum of fitted means).

    The benchmark matrix is ``(1, mu_hat)`` with targets
    ``(population_total, model_total)``.  When the fitted means are
    constant the matrix drops to rank one; the weights then fall back
    to intercept-only calibration (match N alone) and the result is
    flagged ``degenerate_model`` instead of failing, since a constant
    working model still defines a valid (if uninformative) estimator.
    """
    d = np.asarray(getattr(design_weights, "values", design_weights), dtype=np.float64)
    mu = np.asarray(getattr(mu_hat, "values", mu_hat), dtype=np.float64)
    if d.shape != mu.shape:
        raise DimensionMismatch(f"d {d.shape} vs mu_hat {mu.shape}")
    M = np.column_stack([np.ones_like(mu), mu])
    T = np.array([population_total, model_total], dtype=np.float64)
    try:
        w, rel = _solve_calibration(d, M, T)
        degenerate = False
    except RankDeficient:
        ones = np.ones((d.shape[0], 1))
        w, rel = _solve_calibration(d, ones, T[:1])
        degenerate = True
    return WeightVector(
        values=w,
        basis=MODEL_CALIBRATED,
        outcome_tag=outcome_tag,
        degenerate_model=degenerate,
        constraint_rel_error=rel,
    )


def hajek_mean(weights, y) -> float:
    """Weighted ratio mean sum(w y) / sum(w)."""
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if w.shape != yv.shape:
        raise DimensionMismatch(f"weights {w.shape} vs y {yv.shape}")
    return float(w @ yv / w.sum())
