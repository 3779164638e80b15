"""Independent reference implementations used to pin expected values.

Each oracle favours directness over speed: brute-force pair
enumeration, generic stacked-KKT linear solves, per-element loops.
They deliberately share no code path with the package, so agreement is
evidence rather than tautology.
"""

import numpy as np


def chi2_calibration_oracle(d, X, T):
    """Weights minimizing sum((w - d)^2 / d) subject to X'w = T.

    Solved as one stacked linear system (stationarity rows on top,
    constraint rows below) via least squares, a completely different
    route than the package's substitution formula.
    """
    d = np.asarray(d, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    n, p = X.shape
    top = np.hstack([np.diag(2.0 / d), -X])
    bottom = np.hstack([X.T, np.zeros((p, p))])
    A = np.vstack([top, bottom])
    rhs = np.concatenate([np.full(n, 2.0), T])
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return sol[:n]


def chi2_objective(w, d):
    """The calibration distance sum((w - d)^2 / d)."""
    w = np.asarray(w, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return float(((w - d) ** 2 / d).sum())


def auc_pairs(y, scores):
    """AUC by enumeration over every (positive, negative) pair.

    Ties count one half.  Quadratic on purpose; only run on small
    inputs.
    """
    y = np.asarray(y)
    s = np.asarray(scores, dtype=np.float64)
    pos = s[y == 1]
    neg = s[y == 0]
    won = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                won += 1.0
            elif a == b:
                won += 0.5
    return won / (pos.size * neg.size)


def cramers_v_table(table):
    """Cramer's V from a contingency table, elementwise chi-square."""
    table = np.asarray(table, dtype=np.float64)
    n = table.sum()
    row = table.sum(axis=1)
    col = table.sum(axis=0)
    chi2 = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            e = row[i] * col[j] / n
            chi2 += (table[i, j] - e) ** 2 / e
    return float(np.sqrt(chi2 / (n * (min(table.shape) - 1))))


def logistic_penalized_objective(beta0, beta, X, y, lam, alpha):
    """Unit-level penalized logistic loss.

    Negative log-likelihood plus lam * sum(alpha * |beta|); the
    intercept is never penalized.
    """
    beta = np.asarray(beta, dtype=np.float64)
    eta = beta0 + np.asarray(X, dtype=np.float64) @ beta
    nll = float(np.logaddexp(0.0, eta).sum() - np.asarray(y, dtype=np.float64) @ eta)
    return nll + float(lam) * float(np.abs(alpha * beta).sum())


def logistic_kkt_gap(beta0, beta, X, y, lam, alpha):
    """Worst stationarity violation at (beta0, beta).

    Zero coefficients may sit anywhere inside the subgradient interval;
    active ones must balance their penalty exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    eta = beta0 + X @ beta
    mu = 1.0 / (1.0 + np.exp(-eta))
    resid = mu - y
    gaps = [abs(float(resid.sum()))]
    grad = X.T @ resid
    for j in range(beta.size):
        la = lam * alpha[j]
        if beta[j] > 0:
            gaps.append(abs(grad[j] + la))
        elif beta[j] < 0:
            gaps.append(abs(grad[j] - la))
        else:
            gaps.append(max(0.0, abs(grad[j]) - la))
    return float(max(gaps))


def poststratified_mean(y, categories, totals_by_category):
    """Classical poststratification: sum_c T_c * mean(y | c) / sum_c T_c."""
    y = np.asarray(y, dtype=np.float64)
    categories = np.asarray(categories)
    num = 0.0
    den = 0.0
    for cat, tot in totals_by_category.items():
        mask = categories == cat
        num += tot * float(y[mask].mean())
        den += tot
    return num / den
