"""Logistic working models: maximum likelihood, LASSO, adaptive LASSO.

All fitting happens on grouped data.  Design matrices here are one-hot
with a handful of covariates, so the sample collapses to a few hundred
distinct rows (cells) with binomial counts.  Aggregation changes no
estimate (the binomial log-likelihood only sees cell counts) but makes
a cross-validated path fit cheap enough to re-run inside every
bootstrap replicate.

The penalized fit minimises, in sum form,

    L(b) = sum_i [ -y_i x_i'b + log(1 + exp(x_i'b)) ] + lam * sum_j a_j |b_j|

with the intercept unpenalized and per-coefficient penalty weights
``a_j`` (all ones for the plain LASSO, inverse pilot coefficients for
the adaptive variant; ``a_j = inf`` freezes a coefficient at zero).
Columns are 0/1 dummies, so no standardisation is applied.  The
coordinate update at the core is the classic soft-threshold step on a
quadratic approximation; columns of the same covariate have disjoint
support and are updated as a vectorised block.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .design import INTERCEPT_LABEL, DesignMatrix
from .errors import (
    ColumnMismatch,
    NonConvergence,
    OneClassOnly,
    SeparationDetected,
)

#: logistic coefficients beyond this magnitude count as diverged
SEPARATION_BOUND = 30.0

_MU_LO = 1e-300
_MU_HI = float(np.nextafter(1.0, 0.0))


def _expit(eta):
    z = np.exp(-np.abs(eta))
    den = 1.0 + z
    return np.where(np.asarray(eta) >= 0, 1.0 / den, z / den)


def _log1pexp(eta):
    out = np.log1p(np.exp(-np.abs(eta)))
    out += np.maximum(eta, 0.0)
    return out


def soft_threshold(z, threshold):
    """sign(z) * max(|z| - threshold, 0); the scalar LASSO update core."""
    return np.sign(z) * np.maximum(np.abs(z) - threshold, 0.0)


# ---------------------------------------------------------------------------
# fitted model containers


@dataclass(frozen=True)
class ModelFit:
    """A fitted working model plus the metadata needed to score cells.

    ``coefficients`` aligns with ``column_labels`` (intercept first).
    For penalized fits the lambda path, the cross-validation curve and
    the selected penalty are kept for diagnostics and for freezing the
    penalty in sensitivity runs.
    """

    kind: str
    coefficients: np.ndarray
    column_labels: tuple[tuple[str, str], ...]
    covariates: tuple[str, ...]
    dictionaries: dict[str, tuple[str, ...]]
    reference_levels: dict[str, str]
    n_obs: int
    lambda_grid: np.ndarray | None = None
    cv_curve: np.ndarray | None = None
    selected_lambda: float | None = None
    alpha_weights: np.ndarray | None = None
    pilot_coefficients: np.ndarray | None = None
    objective_history: tuple | None = None

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def cell_mean(self, cell) -> float:
        """Fitted mean for one cell, given as a category per covariate.

        ``cell`` is a single category code when the model has one
        covariate, else a tuple in ``covariates`` order.
        """
        if len(self.covariates) == 1 and isinstance(cell, str):
            cell = (cell,)
        eta = self.coefficients[0]
        for cov, cat in zip(self.covariates, cell):
            if cat not in self.dictionaries[cov]:
                raise ColumnMismatch(f"{cov}={cat!r} not in model dictionary")
            if self.reference_levels.get(cov) == cat:
                continue
            eta += self.coefficients[self.column_labels.index((cov, cat))]
        return float(np.clip(_expit(np.array([eta]))[0], _MU_LO, _MU_HI))


@dataclass(frozen=True)
class FittedMeans:
    """Per-record fitted means plus the cell-level map behind them."""

    values: np.ndarray
    by_cell: dict


def predict_means(fit: ModelFit, X: DesignMatrix) -> FittedMeans:
    """Score a design matrix with a fitted model.

    Raises
    ------
    ColumnMismatch
        ``X`` does not carry exactly the model's columns.
    """
    if tuple(X.column_labels) != tuple(fit.column_labels):
        raise ColumnMismatch(
            f"model columns {fit.column_labels[:3]}... vs matrix "
            f"{X.column_labels[:3]}..."
        )
    eta = X.values @ fit.coefficients
    values = np.clip(_expit(eta), _MU_LO, _MU_HI)

    cells: list = [()]
    for cov in fit.covariates:
        cells = [c + (cat,) for c in cells for cat in fit.dictionaries[cov]]
    if len(fit.covariates) == 1:
        by_cell = {c[0]: fit.cell_mean(c) for c in cells}
    else:
        by_cell = {c: fit.cell_mean(c) for c in cells}
    return FittedMeans(values=values, by_cell=by_cell)


# ---------------------------------------------------------------------------
# cell aggregation


@dataclass
class CellWorkspace:
    """Grouped view of a one-hot design: distinct rows plus unit map.

    ``cell_X`` holds the distinct design rows without the intercept
    column; ``unit_cells`` maps each original unit to its cell.
    ``blocks`` groups column indices by covariate; within a block the
    columns have disjoint support, which the solver exploits.
    """

    cell_X: np.ndarray
    unit_cells: np.ndarray
    blocks: list
    column_labels: tuple[tuple[str, str], ...]
    covariates: tuple[str, ...]
    dictionaries: dict[str, tuple[str, ...]]
    reference_levels: dict[str, str]

    @property
    def n_cells(self) -> int:
        return self.cell_X.shape[0]

    @property
    def p(self) -> int:
        return self.cell_X.shape[1]

    @classmethod
    def from_design(cls, X: DesignMatrix) -> "CellWorkspace":
        """Group an intercept-bearing design matrix by distinct rows."""
        if not X.intercept or X.column_labels[0] != INTERCEPT_LABEL:
            raise ColumnMismatch("model fitting needs an intercept design")
        body = X.values[:, 1:]
        cell_rows, inv = np.unique(body, axis=0, return_inverse=True)
        labels = X.column_labels[1:]
        blocks = _blocks(cell_rows, labels)
        return cls(
            cell_X=np.ascontiguousarray(cell_rows, dtype=np.float64),
            unit_cells=inv.astype(np.int64),
            blocks=blocks,
            column_labels=tuple(X.column_labels),
            covariates=X.covariates,
            dictionaries=dict(X.dictionaries),
            reference_levels=dict(X.reference_levels),
        )

    def make_fit(self, kind: str, coefficients, n_obs: int, **extra) -> ModelFit:
        return ModelFit(
            kind=kind,
            coefficients=np.asarray(coefficients, dtype=np.float64),
            column_labels=self.column_labels,
            covariates=self.covariates,
            dictionaries=self.dictionaries,
            reference_levels=self.reference_levels,
            n_obs=n_obs,
            **extra,
        )


def _blocks(cell_rows: np.ndarray, labels) -> list:
    """Column index groups with disjoint support (one per covariate when
    the encoding is clean; singletons otherwise)."""
    by_cov: dict[str, list[int]] = {}
    for j, (cov, _) in enumerate(labels):
        by_cov.setdefault(cov, []).append(j)
    blocks = []
    for cols in by_cov.values():
        idx = np.array(cols, dtype=np.int64)
        if len(cols) == 1 or (cell_rows[:, idx].sum(axis=1) <= 1.0).all():
            blocks.append(idx)
        else:
            blocks.extend(np.array([j]) for j in cols)
    return blocks


def _counts(unit_cells, y, n_cells):
    m = np.bincount(unit_cells, minlength=n_cells).astype(np.float64)
    s = np.bincount(unit_cells, weights=y, minlength=n_cells)
    return m, s


def _check_two_classes(y):
    s = float(np.sum(y))
    if s <= 0 or s >= y.shape[0]:
        raise OneClassOnly("outcome vector holds a single class")


# ---------------------------------------------------------------------------
# Newton maximum likelihood


def fit_logistic_mle(y, X: DesignMatrix, max_iter: int = 100, grad_tol: float = 1e-8) -> ModelFit:
    """Unpenalized logistic regression by Newton iterations.

    Convergence requires the max-norm of the log-likelihood gradient to
    drop to ``grad_tol``.  The gradient test runs before the divergence
    test each iteration, so empty-cell fits that flatten out at large
    negative logits still converge; a coefficient that leaves the
    +-30 band without a converged gradient raises
    :class:`SeparationDetected`.

    Raises
    ------
    SeparationDetected, NonConvergence, OneClassOnly, ColumnMismatch
    """
    y = np.asarray(y, dtype=np.float64)
    _check_two_classes(y)
    ws = CellWorkspace.from_design(X)
    m, s = _counts(ws.unit_cells, y, ws.n_cells)
    beta = _newton_mle(ws.cell_X, m, s, max_iter, grad_tol)
    return ws.make_fit("logistic", beta, n_obs=y.shape[0])


def _newton_mle(cell_X, m, s, max_iter, grad_tol):
    C, p = cell_X.shape
    X1 = np.column_stack([np.ones(C), cell_X])
    ybar = s.sum() / m.sum()
    beta = np.zeros(p + 1)
    beta[0] = np.log(ybar / (1.0 - ybar))

    def loglik(b):
        eta = X1 @ b
        return float(s @ eta - m @ _log1pexp(eta))

    ll = loglik(beta)
    for _ in range(max_iter):
        eta = X1 @ beta
        mu = _expit(eta)
        g = X1.T @ (s - m * mu)
        if np.max(np.abs(g)) <= grad_tol:
            return beta
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationDetected(
                f"coefficient magnitude {np.max(np.abs(beta)):.2f} exceeds "
                f"{SEPARATION_BOUND}"
            )
        w = m * mu * (1.0 - mu)
        H = X1.T @ (w[:, None] * X1)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            cand_ll = loglik(cand)
            if cand_ll >= ll - 1e-14 * abs(ll):
                beta = cand
                ll = cand_ll
                break
            scale *= 0.5
        else:
            beta = beta + step * 1e-12  # stuck; let the budget run out
    raise NonConvergence(f"Newton did not reach grad <= {grad_tol} in {max_iter} iterations")


# ---------------------------------------------------------------------------
# batched penalized path solver

_GRID_PAD = 1.0 + 1e-12  # keeps the null model exactly null at lam_max

_PATH_STATS: list | None = None  # solver instrumentation hook


def _null_intercepts(M, S):
    ybar = S.sum(axis=1) / M.sum(axis=1)
    ybar = np.clip(ybar, 1e-12, 1.0 - 1e-12)
    return np.log(ybar / (1.0 - ybar))


def _lambda_max(cell_X, M, S, alpha):
    """Smallest penalty that zeroes every penalized coefficient."""
    b0 = _null_intercepts(M, S)
    r0 = S - M * _expit(np.broadcast_to(b0[:, None], M.shape).copy())
    u = np.abs(r0 @ cell_X)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.isfinite(alpha) & (alpha > 0), u / alpha, 0.0)
    return ratio.max(axis=1) * _GRID_PAD


def _penalized_objective(eta, M, S, lam, alpha, beta):
    nll = (M * _log1pexp(eta) - S * eta).sum(axis=1)
    pen_w = np.where(np.isfinite(alpha), alpha, 0.0)
    return nll + lam * (pen_w * np.abs(beta)).sum(axis=1)


def _kkt_violation(grad, grad0, beta, lam, alpha):
    finite = np.isfinite(alpha)
    active = finite & (beta != 0.0)
    lam_a = np.where(finite, lam[:, None] * alpha, 0.0)
    viol = np.where(
        active,
        np.abs(grad + lam_a * np.sign(beta)),
        np.maximum(np.abs(grad) - lam_a, 0.0),
    )
    viol[~finite] = 0.0
    return np.maximum(viol.max(axis=1), np.abs(grad0))


def _separable_columns(cell_X):
    """Cell-to-column map when every cell activates at most one 0/1
    column, or ``None`` when the design is not of that shape.

    Distinct one-hot rows of a single covariate have this form: one
    optional all-zero baseline row plus one singleton row per observed
    category.  Returns ``(col_cell, cell_col)`` where ``col_cell[j]`` is
    the cell activating column ``j`` (-1 if the category is unobserved)
    and ``cell_col[c]`` is the column active in cell ``c`` (-1 for the
    baseline row).
    """
    is01 = (cell_X == 0.0) | (cell_X == 1.0)
    if not is01.all() or (cell_X.sum(axis=1) > 1.0).any():
        return None
    C, p = cell_X.shape
    col_cell = np.full(p, -1, dtype=np.int64)
    cell_col = np.full(C, -1, dtype=np.int64)
    rows, cols = np.nonzero(cell_X)
    col_cell[cols] = rows
    cell_col[rows] = cols
    return col_cell, cell_col


def _path_separable(
    cell_X,
    M,
    S,
    lam_values,
    alpha,
    kkt_tol,
    col_cell,
    cell_col,
    val_M=None,
    val_S=None,
    record_objective=False,
):
    """Exact path solve for separable (single one-hot covariate) designs.

    Given the intercept ``b0``, the penalized problem splits into one
    soft-thresholded scalar logistic problem per category cell, each
    with a closed-form solution; the envelope derivative in ``b0`` is
    continuous, nondecreasing and piecewise smooth, so a safeguarded
    Newton/bisection scalar root-find yields the exact joint optimum.
    All problems and grid points are solved simultaneously.
    """
    B, C = M.shape
    p = cell_X.shape[1]
    T = lam_values.shape[1]
    R = B * T

    observed = col_cell >= 0
    cells = np.where(observed, col_cell, 0)
    # per-problem category counts, tiled over the grid axis
    Mj = np.where(observed[None, :], M[:, cells], 0.0)
    Sj = np.where(observed[None, :], S[:, cells], 0.0)
    base = cell_col < 0
    mb = M[:, base].sum(axis=1)
    sb = S[:, base].sum(axis=1)

    Mj = np.repeat(Mj, T, axis=0)
    Sj = np.repeat(Sj, T, axis=0)
    mb = np.repeat(mb, T)
    sb = np.repeat(sb, T)
    alpha_r = np.repeat(alpha, T, axis=0)
    lamA = lam_values.reshape(R)[:, None] * alpha_r
    finite = np.isfinite(lamA)
    lamA_f = np.where(finite, lamA, 0.0)

    b0_all = np.repeat(_null_intercepts(M, S), T)
    np.clip(b0_all, -40.0, 40.0, out=b0_all)
    tol_root = min(1e-9, 0.25 * kkt_tol)
    # root-find on the compacted set of unsolved problems only; most
    # roots land within a handful of Newton steps, stragglers bisect on
    live = np.arange(R)
    b0 = b0_all
    lo = np.full(R, -40.0)
    hi = np.full(R, 40.0)
    Mjc, Sjc, mbc, sbc = Mj, Sj, mb, sb
    finc, lamc = finite, lamA_f
    for it in range(300):
        sig = _expit(b0)
        mu_j = Mjc * sig[:, None]
        pos = finc & (Sjc - lamc > mu_j)
        neg = finc & (Sjc + lamc < mu_j)
        pin = ~(pos | neg)
        dphi = (
            mbc * sig
            - sbc
            + np.where(pin, mu_j - Sjc, 0.0).sum(axis=1)
            + (np.where(neg, lamc, 0.0) - np.where(pos, lamc, 0.0)).sum(axis=1)
        )
        done = (np.abs(dphi) <= tol_root) | (hi - lo <= 1e-13 * np.maximum(1.0, np.abs(b0)))
        if done.any():
            b0_all[live[done]] = b0[done]
            keep = ~done
            live = live[keep]
            if live.size == 0:
                break
            b0, lo, hi = b0[keep], lo[keep], hi[keep]
            Mjc, Sjc = Mjc[keep], Sjc[keep]
            mbc, sbc = mbc[keep], sbc[keep]
            finc, lamc = finc[keep], lamc[keep]
            sig, pin, dphi = sig[keep], pin[keep], dphi[keep]
        hi = np.where(dphi > 0, np.minimum(hi, b0), hi)
        lo = np.where(dphi <= 0, np.maximum(lo, b0), lo)
        d2 = sig * (1.0 - sig) * (mbc + np.where(pin, Mjc, 0.0).sum(axis=1))
        cand = b0 - dphi / np.maximum(d2, 1e-300)
        mid = 0.5 * (lo + hi)
        # alternate Newton with plain bisection: on staircase stretches of
        # the envelope derivative a Newton step can hop across the root
        # forever while staying inside the bracket, so every other
        # iteration halves the bracket unconditionally
        bad = (cand <= lo) | (cand >= hi) | ~np.isfinite(cand) | (it % 2 == 1)
        b0 = np.where(bad, mid, cand)
    if live.size:
        b0_all[live] = b0
    b0 = b0_all

    sig = _expit(b0)
    mu_j = Mj * sig[:, None]
    pos = finite & (Sj - lamA_f > mu_j)
    neg = finite & (Sj + lamA_f < mu_j)
    safe_m = np.maximum(Mj, 1e-300)
    ratio = np.where(pos, Sj - lamA_f, np.where(neg, Sj + lamA_f, 0.5 * safe_m)) / safe_m
    ratio = np.clip(ratio, _MU_LO, _MU_HI)
    eta_cat = np.log(ratio) - np.log1p(-ratio)
    beta = np.where(pos | neg, eta_cat - b0[:, None], 0.0)
    beta = np.where(np.abs(beta) < 1e-14, 0.0, beta)

    # certify against the exact stationarity conditions before returning
    beta_c = np.concatenate([beta, np.zeros((R, 1))], axis=1)
    eta = b0[:, None] + beta_c[:, np.where(cell_col >= 0, cell_col, p)]
    mu = _expit(eta)
    M_r = np.repeat(M, T, axis=0)
    S_r = np.repeat(S, T, axis=0)
    r = S_r - M_r * mu
    grad = -(r @ cell_X)
    grad0 = -r.sum(axis=1)
    viol = _kkt_violation(grad, grad0, beta, lam_values.reshape(R), alpha_r)
    if (viol > kkt_tol).any():
        raise NonConvergence(
            f"separable path solve: KKT residual {viol.max():.3e} above {kkt_tol:.1e}"
        )

    beta0_path = b0.reshape(B, T)
    beta_path = beta.reshape(B, T, p)
    dev = None
    if val_M is not None:
        vM = np.repeat(val_M, T, axis=0)
        vS = np.repeat(val_S, T, axis=0)
        dev = (2.0 * (vM * _log1pexp(eta) - vS * eta).sum(axis=1)).reshape(B, T)
    history = None
    if record_objective:
        obj = _penalized_objective(eta, M_r, S_r, lam_values.reshape(R), alpha_r, beta)
        history = [obj.reshape(B, T)[:, t][:, None] for t in range(T)]
    return beta0_path, beta_path, dev, history


class _TwoBlockNewton:
    """Active-set Newton directions for designs with two one-hot blocks.

    With cells indexed by the (block-1 level, block-2 level) pair, the
    Hessian of the smooth part has the arrow shape

        [ sum(w)   rowsums'  colsums' ]
        [ rowsums  diag      W        ]
        [ colsums  W'        diag     ]

    where ``W`` is the per-cell weight grid.  Eliminating the (larger)
    diagonal block reduces the Newton solve to a dense system of size
    1 + p2 per problem, so a full second-order step costs little more
    than one coordinate sweep.  The caller accepts the direction only on
    a strict decrease of the true penalized objective, so an inaccurate
    direction can never destabilise the solve.
    """

    def __init__(self, cell_X, blocks):
        big, small = (0, 1) if len(blocks[0]) >= len(blocks[1]) else (1, 0)
        self.cols1 = np.asarray(blocks[big], dtype=np.int64)
        self.cols2 = np.asarray(blocks[small], dtype=np.int64)
        self.p1 = self.cols1.size
        self.p2 = self.cols2.size
        X1 = cell_X[:, self.cols1]
        X2 = cell_X[:, self.cols2]
        cell_j = np.where(X1.sum(axis=1) > 0, X1.argmax(axis=1), self.p1)
        cell_k = np.where(X2.sum(axis=1) > 0, X2.argmax(axis=1), self.p2)
        self.flat = cell_j * (self.p2 + 1) + cell_k
        self.grid = (self.p1 + 1) * (self.p2 + 1)

    @classmethod
    def build(cls, cell_X, blocks):
        if len(blocks) != 2:
            return None
        is01 = (cell_X == 0.0) | (cell_X == 1.0)
        if not is01.all():
            return None
        return cls(cell_X, blocks)

    def direction(self, beta, w, grad, grad0, lam_a, finite):
        B = w.shape[0]
        p1, p2 = self.p1, self.p2
        offs = (np.arange(B)[:, None] * self.grid + self.flat[None, :]).ravel()
        Wg = np.bincount(offs, weights=w.ravel(), minlength=B * self.grid)
        Wg = Wg.reshape(B, p1 + 1, p2 + 1)
        W = Wg[:, :p1, :p2]
        Du = Wg[:, :p1, :].sum(axis=2)
        Dv = Wg[:, :, :p2].sum(axis=1)
        a = w.sum(axis=1)

        b1 = beta[:, self.cols1]
        b2 = beta[:, self.cols2]
        act1 = finite[:, self.cols1] & (b1 != 0.0)
        act2 = finite[:, self.cols2] & (b2 != 0.0)
        gu = grad[:, self.cols1] + np.where(act1, lam_a[:, self.cols1], 0.0) * np.sign(b1)
        gv = grad[:, self.cols2] + np.where(act2, lam_a[:, self.cols2], 0.0) * np.sign(b2)

        Mu = np.where(act1, 1.0 / np.maximum(Du, 1e-12), 0.0)
        MuDu = Mu * Du
        S00 = a - (MuDu * Du).sum(axis=1)
        S0v = Dv - (MuDu[:, None, :] @ W)[:, 0, :]
        Svv = -np.matmul((W * Mu[:, :, None]).transpose(0, 2, 1), W)
        kk = np.arange(p2)
        Svv[:, kk, kk] += Dv
        rhs0 = grad0 - (MuDu * gu).sum(axis=1)
        rhsv = gv - ((Mu * gu)[:, None, :] @ W)[:, 0, :]

        n2 = 1 + p2
        A = np.empty((B, n2, n2))
        A[:, 0, 0] = S00
        A[:, 0, 1:] = S0v
        A[:, 1:, 0] = S0v
        A[:, 1:, 1:] = Svv
        rhs = np.concatenate([rhs0[:, None], rhsv], axis=1)
        rowmask = np.concatenate([np.ones((B, 1)), act2.astype(np.float64)], axis=1)
        A *= rowmask[:, :, None] * rowmask[:, None, :]
        ii = np.arange(n2)
        scale = np.abs(A[:, ii, ii]).max(axis=1)
        A[:, ii, ii] += (1.0 - rowmask) + 1e-12 * scale[:, None]
        rhs = rhs * rowmask
        try:
            x = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            A[:, ii, ii] += 1e-6 * scale[:, None] + 1e-12
            try:
                x = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                return None
        x0 = x[:, 0]
        xv = x[:, 1:]
        xu = Mu * (gu - Du * x0[:, None] - (W @ xv[:, :, None])[:, :, 0])
        d = np.zeros_like(beta)
        d[:, self.cols1] = -xu
        d[:, self.cols2] = -xv
        # a singular problem must not poison its batch mates: rows whose
        # solve degenerated get a zero direction, which the caller's
        # acceptance test then discards for that row alone.  Huge steps
        # from near-flat curvature are capped; the line search still
        # decides, the cap just keeps its candidates finite.
        bad = ~(np.isfinite(x0) & np.isfinite(d).all(axis=1))
        if bad.any():
            x0 = np.where(bad, 0.0, x0)
            d[bad] = 0.0
        np.clip(d, -20.0, 20.0, out=d)
        return -np.clip(x0, -20.0, 20.0), d


def _path_batched(
    cell_X,
    blocks,
    M,
    S,
    lam_values,
    alpha,
    kkt_tol,
    max_sweeps,
    val_M=None,
    val_S=None,
    record_objective=False,
):
    """Warm-started coordinate descent over a decreasing penalty grid.

    Solves ``B`` problems simultaneously: each row of ``M``/``S`` holds
    per-cell trial/success counts on the shared cell design.  Single
    one-hot covariate designs take an exact separable solve instead of
    iterating; two-block designs accelerate the sweeps with structured
    Newton jumps.  Returns the intercept and coefficient paths and, when
    validation counts are supplied, the binomial deviance of each path
    point on them.
    """
    B, C = M.shape
    if (lam_values > 0.0).all():
        sep = _separable_columns(cell_X)
        if sep is not None:
            return _path_separable(
                cell_X, M, S, lam_values, alpha, kkt_tol, sep[0], sep[1],
                val_M=val_M, val_S=val_S, record_objective=record_objective,
            )
    newton2 = _TwoBlockNewton.build(cell_X, blocks)
    stats = _PATH_STATS
    p = cell_X.shape[1]
    T = lam_values.shape[1]
    beta0 = _null_intercepts(M, S)
    beta = np.zeros((B, p))
    finite = np.isfinite(alpha)

    beta0_path = np.empty((B, T))
    beta_path = np.empty((B, T, p))
    dev = np.empty((B, T)) if val_M is not None else None
    history: list = [] if record_objective else None

    for t in range(T):
        lam_t = lam_values[:, t]
        lamA = np.where(finite, lam_t[:, None] * alpha, np.inf)
        # Rows leave the working set the moment their stationarity
        # residual clears the tolerance; typical rows finish in a few
        # sweeps while rare degenerate ones iterate on, so shrinking the
        # batch keeps the stragglers from multiplying everyone's cost.
        live = np.arange(B)
        b0 = beta0.copy()
        bt = beta.copy()
        Mc, Sc = M, S
        lamc, alphac, lamAc, finitec = lam_t, alpha, lamA, finite
        prevobj = np.full(B, np.nan)
        sb0, sb, sobj = b0.copy(), bt.copy(), np.full(B, np.inf)
        dampc = np.ones(B)
        h0 = np.zeros((B, p + 1))
        h1 = np.zeros((B, p + 1))
        hn = np.zeros(B, dtype=np.int64)
        conv_sweep = np.full(B, -1) if stats is not None else None
        obj_full = np.full(B, np.nan) if record_objective else None
        hist_t: list = []
        for sweep in range(max_sweeps + 1):
            eta = b0[:, None] + bt @ cell_X.T
            mu = _expit(eta)
            r = Sc - Mc * mu
            grad = -(r @ cell_X)
            grad0 = -r.sum(axis=1)
            viol = _kkt_violation(grad, grad0, bt, lamc, alphac)
            done = viol <= kkt_tol
            if conv_sweep is not None:
                conv_sweep[live[done]] = sweep
            if done.any():
                rows = live[done]
                beta0[rows] = b0[done]
                beta[rows] = bt[done]
                if record_objective:
                    obj_full[rows] = _penalized_objective(
                        eta[done], Mc[done], Sc[done], lamc[done], alphac[done],
                        bt[done],
                    )
                keep = ~done
                live = live[keep]
                if live.size == 0:
                    if record_objective:
                        hist_t.append(obj_full.copy())
                    break
                b0, bt = b0[keep], bt[keep]
                Mc, Sc = Mc[keep], Sc[keep]
                lamc, alphac = lamc[keep], alphac[keep]
                lamAc, finitec = lamAc[keep], finitec[keep]
                prevobj = prevobj[keep]
                sb0, sb, sobj = sb0[keep], sb[keep], sobj[keep]
                dampc = dampc[keep]
                h0, h1, hn = h0[keep], h1[keep], hn[keep]
                eta, mu, r = eta[keep], mu[keep], r[keep]
                grad, grad0, viol = grad[keep], grad0[keep], viol[keep]
            if sweep == max_sweeps:
                raise NonConvergence(
                    f"coordinate descent: KKT residual {viol.max():.3e} after "
                    f"{max_sweeps} sweeps at grid point {t}"
                )
            obj = _penalized_objective(eta, Mc, Sc, lamc, alphac, bt)
            worse = obj > prevobj + 1e-10 * np.abs(prevobj) + 1e-12
            if worse.any():
                # monotone safeguard: rewind the offending problems and
                # damp their next step
                ix = np.flatnonzero(worse)
                b0[ix] = sb0[ix]
                bt[ix] = sb[ix]
                eta[ix] = b0[ix][:, None] + bt[ix] @ cell_X.T
                mu[ix] = _expit(eta[ix])
                r[ix] = Sc[ix] - Mc[ix] * mu[ix]
                grad[ix] = -(r[ix] @ cell_X)
                grad0[ix] = -r[ix].sum(axis=1)
                viol[ix] = _kkt_violation(
                    grad[ix], grad0[ix], bt[ix], lamc[ix], alphac[ix]
                )
                obj[ix] = sobj[ix]
                hn[ix] = 0
            dampc = np.where(worse, dampc * 0.5, 1.0)
            w = Mc * mu * (1.0 - mu)
            if record_objective:
                obj_full[live] = obj
                hist_t.append(obj_full.copy())
            sb0, sb, sobj = b0.copy(), bt.copy(), obj.copy()
            dampv = dampc
            if newton2 is not None:
                # second-order jump on the current active set; rows that
                # improve skip the following Gauss-Seidel pass.  A step is
                # taken when the objective strictly drops, or when it stays
                # flat within the safeguard tolerance while the KKT
                # violation shrinks; near the optimum the objective is flat
                # to machine precision but the residual still has far to go.
                got = newton2.direction(bt, w, grad, grad0, lamAc, finitec)
                if got is not None:
                    pd0, pd = got
                    accepted = np.zeros(live.size, dtype=bool)
                    for scale in (1.0, 0.5, 0.25, 0.0625):
                        rows2 = np.flatnonzero(~accepted)
                        if rows2.size == 0:
                            break
                        cb0 = b0[rows2] + scale * pd0[rows2]
                        cb = bt[rows2] + scale * pd[rows2]
                        ceta = cb0[:, None] + cb @ cell_X.T
                        cobj = _penalized_objective(
                            ceta, Mc[rows2], Sc[rows2], lamc[rows2], alphac[rows2], cb
                        )
                        slack = 1e-10 * np.abs(obj[rows2]) + 1e-12
                        better = np.isfinite(cobj) & (cobj < obj[rows2] - slack)
                        flat = np.isfinite(cobj) & ~better & (cobj <= obj[rows2] + slack)
                        if flat.any():
                            cmu = _expit(ceta[flat])
                            cr = Sc[rows2[flat]] - Mc[rows2[flat]] * cmu
                            cviol = _kkt_violation(
                                -(cr @ cell_X), -cr.sum(axis=1), cb[flat],
                                lamc[rows2[flat]], alphac[rows2[flat]],
                            )
                            flat[np.flatnonzero(flat)[cviol > 0.9 * viol[rows2[flat]]]] = False
                        good = better | flat
                        take = rows2[good]
                        b0[take] = cb0[good]
                        bt[take] = cb[good]
                        obj[take] = cobj[good]
                        accepted[take] = True
                    if accepted.any():
                        sb0, sb, sobj = b0.copy(), bt.copy(), obj.copy()
                        dampv = np.where(accepted, 0.0, dampc)
                        hn[accepted] = 0
            # one Gauss-Seidel pass over intercept and covariate blocks on
            # the current quadratic approximation
            q = r.copy()
            den0 = w.sum(axis=1)
            step0 = dampv * q.sum(axis=1) / np.maximum(den0, 1e-300)
            b0 = b0 + step0
            q -= w * step0[:, None]
            for cols in blocks:
                Xb = cell_X[:, cols]
                v = w @ Xb
                u = q @ Xb + bt[:, cols] * v
                new = np.where(
                    (v > 0) & finitec[:, cols],
                    soft_threshold(u, lamAc[:, cols]) / np.maximum(v, 1e-300),
                    0.0,
                )
                new = bt[:, cols] + dampv[:, None] * (new - bt[:, cols])
                q -= w * ((new - bt[:, cols]) @ Xb.T)
                bt[:, cols] = new
            prevobj = obj

            # The unpenalized intercept is nearly collinear with each
            # one-hot block, so plain Gauss-Seidel contracts slowly once
            # the active set settles.  The iterates then follow an almost
            # exactly geometric path, which a safeguarded Aitken jump
            # collapses; the KKT test above still certifies the result.
            cur = np.concatenate([b0[:, None], bt], axis=1)
            jumped = False
            if (hn >= 2).any():
                da = h1 - h0
                db = cur - h1
                den = (da * da).sum(axis=1)
                num = (da * db).sum(axis=1)
                rho = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
                jumpable = (hn >= 2) & (rho > 0.2) & (rho < 0.999)
                if jumpable.any():
                    factor = np.where(jumpable, rho, 0.0)
                    factor = factor / (1.0 - factor)
                    cand = cur + db * factor[:, None]
                    cb0, cb = cand[:, 0], cand[:, 1:]
                    cur_eta = b0[:, None] + bt @ cell_X.T
                    cur_obj = _penalized_objective(cur_eta, Mc, Sc, lamc, alphac, bt)
                    cand_eta = cb0[:, None] + cb @ cell_X.T
                    cand_obj = _penalized_objective(cand_eta, Mc, Sc, lamc, alphac, cb)
                    accept = jumpable & (cand_obj <= cur_obj - 1e-12 * np.abs(cur_obj))
                    if accept.any():
                        b0 = np.where(accept, cb0, b0)
                        bt = np.where(accept[:, None], cb, bt)
                        # snapshot the exact post-state objective for every
                        # problem so a later rewind stays consistent
                        taken = np.where(accept, cand_obj, cur_obj)
                        prevobj = taken
                        sb0, sb, sobj = b0.copy(), bt.copy(), taken.copy()
                        hn[:] = 0
                        jumped = True
            if not jumped:
                h0, h1 = h1, cur
                hn = np.minimum(hn + 1, 2)
        if stats is not None:
            stats.append((t, sweep, conv_sweep.copy()))
        beta0_path[:, t] = beta0
        # snap numerically-zero coefficients so "all penalized coefficients
        # are zero at lambda_max" holds exactly in the recorded path
        beta_path[:, t] = np.where(np.abs(beta) < 1e-14, 0.0, beta)
        if dev is not None:
            eta_t = beta0[:, None] + beta @ cell_X.T
            dev[:, t] = 2.0 * (val_M * _log1pexp(eta_t) - val_S * eta_t).sum(axis=1)
        if record_objective:
            history.append(np.stack(hist_t, axis=1) if hist_t else np.empty((B, 0)))
    return beta0_path, beta_path, dev, history


# ---------------------------------------------------------------------------
# cross-validated LASSO on cells


def _stratified_folds(y, folds, seed):
    """Fold label per unit; positives and negatives dealt round-robin
    after a seeded shuffle, so every fold sees both classes whenever the
    rarer class has at least ``folds`` members."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    fold_id = np.empty(y.shape[0], dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        fold_id[idx] = np.arange(idx.size) % folds
    return fold_id


def lasso_cv_cells(
    ws: CellWorkspace,
    unit_cells,
    Y,
    alpha,
    fold_seeds,
    folds: int = 10,
    n_lambdas: int = 100,
    lambda_min_ratio: float = 1e-4,
    kkt_tol: float | None = None,
    max_sweeps: int = 10_000,
    frozen_lambdas=None,
    record_objective: bool = False,
):
    """Cross-validated penalized paths for several outcomes at once.

    Parameters
    ----------
    ws : CellWorkspace
        Cell design shared by all outcomes.
    unit_cells : array
        Cell index per unit (a resampled view of ``ws.unit_cells`` in
        bootstrap use).
    Y : array, K x n
        One outcome vector per row.
    alpha : array, K x p
        Penalty weights per outcome; ``inf`` freezes a coefficient.
    fold_seeds : sequence of int
        One fold seed per outcome.
    frozen_lambdas : sequence or None
        When given, skip cross-validation and fit each outcome at its
        frozen penalty.

    Returns
    -------
    list of dict
        Per outcome: coefficients (with intercept), lambda_grid,
        cv_curve, selected_lambda, selected_index, objective_history.
    """
    unit_cells = np.asarray(unit_cells, dtype=np.int64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[None, :]
    K, n = Y.shape
    C = ws.n_cells
    p = ws.p
    alpha = np.asarray(alpha, dtype=np.float64).reshape(K, p)
    if kkt_tol is None:
        kkt_tol = max(1e-6, 1e-9 * n)

    M_full = np.empty((K, C))
    S_full = np.empty((K, C))
    m_all = np.bincount(unit_cells, minlength=C).astype(np.float64)
    for k in range(K):
        _check_two_classes(Y[k])
        M_full[k] = m_all
        S_full[k] = np.bincount(unit_cells, weights=Y[k], minlength=C)

    if frozen_lambdas is not None:
        lam_values = np.asarray(frozen_lambdas, dtype=np.float64).reshape(K, 1)
        b0p, bp, _, hist = _path_batched(
            ws.cell_X, ws.blocks, M_full, S_full, lam_values, alpha,
            kkt_tol, max_sweeps, record_objective=record_objective,
        )
        return [
            {
                "coefficients": np.concatenate(([b0p[k, 0]], bp[k, 0])),
                "lambda_grid": lam_values[k],
                "cv_curve": None,
                "selected_lambda": float(lam_values[k, 0]),
                "selected_index": 0,
                "objective_history": _hist_for(hist, k),
            }
            for k in range(K)
        ]

    lam_max = _lambda_max(ws.cell_X, M_full, S_full, alpha)
    fracs = np.geomspace(1.0, lambda_min_ratio, n_lambdas)

    # problem layout: K full fits first, then K*folds training fits
    rows_M = [M_full]
    rows_S = [S_full]
    val_M = [np.zeros((K, C))]
    val_S = [np.zeros((K, C))]
    lam_rows = [lam_max[:, None] * fracs[None, :]]
    alpha_rows = [alpha]
    fold_sizes = np.empty((K, folds))
    for k in range(K):
        fold_id = _stratified_folds(Y[k], folds, fold_seeds[k])
        for f in range(folds):
            train = fold_id != f
            m_tr, s_tr = _counts(unit_cells[train], Y[k][train], C)
            rows_M.append(m_tr[None, :])
            rows_S.append(s_tr[None, :])
            val_M.append((M_full[k] - m_tr)[None, :])
            val_S.append((S_full[k] - s_tr)[None, :])
            lam_rows.append(lam_max[k] * fracs[None, :])
            alpha_rows.append(alpha[k][None, :])
            fold_sizes[k, f] = n - train.sum()

    M = np.concatenate(rows_M, axis=0)
    S = np.concatenate(rows_S, axis=0)
    vM = np.concatenate(val_M, axis=0)
    vS = np.concatenate(val_S, axis=0)
    lam_values = np.concatenate(lam_rows, axis=0)
    alpha_b = np.concatenate(alpha_rows, axis=0)

    b0p, bp, dev, hist = _path_batched(
        ws.cell_X, ws.blocks, M, S, lam_values, alpha_b,
        kkt_tol, max_sweeps, val_M=vM, val_S=vS,
        record_objective=record_objective,
    )

    out = []
    for k in range(K):
        lo = K + k * folds
        # per-observation mean of the validation deviance, pooled over folds
        curve = dev[lo : lo + folds].sum(axis=0) / fold_sizes[k].sum()
        sel = int(np.argmin(curve))
        out.append(
            {
                "coefficients": np.concatenate(([b0p[k, sel]], bp[k, sel])),
                "lambda_grid": lam_max[k] * fracs,
                "cv_curve": curve,
                "selected_lambda": float(lam_max[k] * fracs[sel]),
                "selected_index": sel,
                "objective_history": _hist_for(hist, k),
            }
        )
    return out


def _hist_for(history, k):
    if history is None:
        return None
    return tuple(h[k] for h in history)


# ---------------------------------------------------------------------------
# public single-outcome entry points


def fit_lasso_path(
    y,
    X: DesignMatrix,
    alpha_weights=None,
    folds: int = 10,
    seed: int = 0,
    n_lambdas: int = 100,
    lambda_min_ratio: float = 1e-4,
    lambdas=None,
    kkt_tol: float | None = None,
    max_sweeps: int = 10_000,
    record_objective: bool = False,
    _kind: str = "lasso",
    _pilot=None,
) -> ModelFit:
    """LASSO-penalized logistic regression over a decreasing lambda grid.

    The grid holds ``n_lambdas`` log-spaced values from the smallest
    penalty that zeroes every penalized coefficient down to
    ``lambda_min_ratio`` times it.  The penalty is selected by
    ``folds``-fold outcome-stratified cross-validation on mean binomial
    deviance (lambda-min rule; ties resolve to the larger penalty).
    Passing ``lambdas`` overrides the grid, e.g. ``lambdas=[0.0]`` for
    an unpenalized fit or a single frozen penalty.

    Raises
    ------
    NonConvergence
        Some grid point fails to reach the KKT tolerance within
        ``max_sweeps`` coordinate sweeps.
    OneClassOnly
        ``y`` holds a single class.
    """
    y = np.asarray(y, dtype=np.float64)
    ws = CellWorkspace.from_design(X)
    p = ws.p
    if alpha_weights is None:
        alpha = np.ones(p)
    else:
        alpha = np.asarray(alpha_weights, dtype=np.float64).reshape(p)
        if (alpha < 0).any():
            raise ValueError("alpha_weights must be nonnegative")
    if lambdas is not None:
        _check_two_classes(y)
        m, s = _counts(ws.unit_cells, y, ws.n_cells)
        lam_values = np.asarray(lambdas, dtype=np.float64)[None, :]
        b0p, bp, _, hist = _path_batched(
            ws.cell_X, ws.blocks, m[None, :], s[None, :], lam_values,
            alpha[None, :], kkt_tol if kkt_tol is not None else max(1e-6, 1e-9 * y.shape[0]),
            max_sweeps, record_objective=record_objective,
        )
        sel = int(lam_values.shape[1] - 1)
        return ws.make_fit(
            _kind,
            np.concatenate(([b0p[0, sel]], bp[0, sel])),
            n_obs=y.shape[0],
            lambda_grid=lam_values[0].copy(),
            cv_curve=None,
            selected_lambda=float(lam_values[0, sel]),
            alpha_weights=np.concatenate(([0.0], alpha)),
            pilot_coefficients=_pilot,
            objective_history=_hist_for(hist, 0),
        )
    res = lasso_cv_cells(
        ws,
        ws.unit_cells,
        y[None, :],
        alpha[None, :],
        fold_seeds=[seed],
        folds=folds,
        n_lambdas=n_lambdas,
        lambda_min_ratio=lambda_min_ratio,
        kkt_tol=kkt_tol,
        max_sweeps=max_sweeps,
        record_objective=record_objective,
    )[0]
    return ws.make_fit(
        _kind,
        res["coefficients"],
        n_obs=y.shape[0],
        lambda_grid=res["lambda_grid"],
        cv_curve=res["cv_curve"],
        selected_lambda=res["selected_lambda"],
        alpha_weights=np.concatenate(([0.0], alpha)),
        pilot_coefficients=_pilot,
        objective_history=res["objective_history"],
    )


def ridge_pilot(y, X: DesignMatrix, penalty: float | None = None, max_iter: int = 200):
    """Ridge-penalized logistic coefficients used to weight the adaptive
    LASSO.  Default penalty is 1e-3 times the unit-weight lambda_max of
    the same data, so the pilot is mildly regularised but never
    cross-validated.  Returns the penalized (non-intercept) coefficients.
    """
    y = np.asarray(y, dtype=np.float64)
    _check_two_classes(y)
    ws = CellWorkspace.from_design(X)
    m, s = _counts(ws.unit_cells, y, ws.n_cells)
    return _ridge_pilot_cells(ws.cell_X, m, s, penalty, max_iter)


def _ridge_pilot_cells(cell_X, m, s, penalty=None, max_iter=200):
    if penalty is None:
        lam_max = _lambda_max(
            cell_X, m[None, :], s[None, :], np.ones((1, cell_X.shape[1]))
        )[0]
        penalty = 1e-3 * lam_max
    C, p = cell_X.shape
    X1 = np.column_stack([np.ones(C), cell_X])
    pen = np.concatenate(([0.0], np.full(p, penalty)))
    beta = np.zeros(p + 1)
    beta[0] = _null_intercepts(m[None, :], s[None, :])[0]
    tol = max(1e-8, 1e-12 * m.sum())

    def objective(b):
        eta = X1 @ b
        return float(m @ _log1pexp(eta) - s @ eta + 0.5 * pen @ b**2)

    obj = objective(beta)
    for _ in range(max_iter):
        eta = X1 @ beta
        mu = _expit(eta)
        g = X1.T @ (s - m * mu) - pen * beta
        if np.max(np.abs(g)) <= tol:
            break
        w = m * mu * (1.0 - mu)
        H = X1.T @ (w[:, None] * X1) + np.diag(pen)
        step = np.linalg.solve(H, g)
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            cand_obj = objective(cand)
            if cand_obj <= obj + 1e-14 * abs(obj):
                beta, obj = cand, cand_obj
                break
            scale *= 0.5
    else:
        raise NonConvergence("ridge pilot did not converge")
    return beta[1:]


def fit_adaptive_lasso(
    y,
    X: DesignMatrix,
    gamma: float = 1.0,
    folds: int = 10,
    seed: int = 0,
    pilot_coefficients=None,
    **path_kwargs,
) -> ModelFit:
    """Adaptive LASSO: penalty weights from a ridge pilot fit.

    Each penalized coefficient gets weight ``|pilot_j|**(-gamma)``; a
    pilot coefficient of exactly zero maps to an infinite weight, which
    freezes that coefficient at zero along the whole path.  With all
    pilot coefficients equal to one the call reduces exactly (bit for
    bit) to :func:`fit_lasso_path`, since the weights become all ones
    and the same code path runs.

    ``pilot_coefficients`` overrides the ridge pilot (aligned with the
    non-intercept columns of ``X``).
    """
    if pilot_coefficients is None:
        pilot = ridge_pilot(y, X)
    else:
        pilot = np.asarray(pilot_coefficients, dtype=np.float64)
    with np.errstate(divide="ignore"):
        alpha = np.abs(pilot) ** (-float(gamma))
    return fit_lasso_path(
        y,
        X,
        alpha_weights=alpha,
        folds=folds,
        seed=seed,
        _kind="adaptive_lasso",
        _pilot=pilot,
        **path_kwargs,
    )
