"""Two-source bootstrap: resampling noise plus published-totals noise.

Each replicate redraws both randomness sources and recomputes every
estimator from scratch:

1. For every wave, the published nace totals are redrawn from a normal
   centered at the published value with its published relative SE;
   non-positive draws are truncated to 0.5 (and counted).  Cross-table
   rows are rescaled to match the redrawn nace figures, occupation
   totals become the column sums of the rescaled cross table, and the
   grand total becomes the sum of the nace draws, so additivity holds
   by construction.  Remaining marginals are rescaled proportionally.
2. Every wave's ads are resampled with replacement at the original
   size, and all working models (including penalty cross-validation,
   unless the penalty is frozen) are refit on the resampled pool.

A replicate that raises any estimation error is dropped and counted;
more than ``max_failure_share`` of them fails the whole run.  Variances
use ddof=1 over the surviving replicates.

Determinism: replicate b consumes only the seed stream
``SeedSequence((seed, 1 + b))`` and results are reduced in replicate
order, so the output is identical for any worker count.
"""

from __future__ import annotations

import concurrent.futures as cf
import multiprocessing as mp
from dataclasses import dataclass

import numpy as np

from .calibration import calibrate_model_assisted, hajek_mean
from .data import AdSample, TotalsTable
from .design import encode
from .errors import (
    ConfigError,
    MissingCellTotal,
    MissingColumn,
    MissingCrossTotals,
    MissingRelSE,
    RankDeficient,
    SkillcalError,
    TooManyReplicateFailures,
    UncoveredCell,
)
from .estimators import (
    DEFAULT_ESTIMATORS,
    ESTIMATORS,
    GlmSettings,
    ModelCache,
    estimate,
    fold_seed,
    model_group_indices,
    model_group_key,
    pool_by_wave,
)
from .glm import (
    CellWorkspace,
    _expit,
    _newton_mle,
    _ridge_pilot_cells,
    lasso_cv_cells,
)
from .metrics import auc_grouped


def perturb_totals(totals: TotalsTable, rng) -> tuple[TotalsTable, int]:
    """One noise draw on a published totals table.

    Returns the perturbed table and the number of truncated (would-be
    non-positive) nace draws.  Tables without nace marginals have
    nothing published with sampling error and pass through unchanged.

    Raises
    ------
    MissingRelSE
        A nace marginal has no relative SE attached.
    """
    nace = totals.marginals.get("nace", {})
    if not nace:
        return totals, 0
    cats = sorted(nace)
    means = np.array([nace[c] for c in cats], dtype=np.float64)
    sds = np.empty(len(cats))
    for i, c in enumerate(cats):
        try:
            sds[i] = totals.rel_se[("nace", c)] / 100.0 * nace[c]
        except KeyError:
            raise MissingRelSE(
                f"wave {totals.wave}: nace={c!r} has no relative SE"
            ) from None
    draws = rng.normal(means, sds)
    truncated = int(np.count_nonzero(draws <= 0.0))
    draws = np.where(draws <= 0.0, 0.5, draws)
    new_nace = dict(zip(cats, (float(v) for v in draws)))
    grand_new = float(draws.sum())
    ratio = grand_new / totals.grand_total

    marginals: dict[str, dict[str, float]] = {}
    cross: dict[tuple[str, str], float] = {}
    if totals.cross:
        scale = {c: new_nace[c] / nace[c] for c in cats}
        occ_sums: dict[str, float] = {}
        for (nc, oc), v in totals.cross.items():
            nv = v * scale[nc]
            cross[(nc, oc)] = nv
            occ_sums[oc] = occ_sums.get(oc, 0.0) + nv
        marginals["occupation"] = occ_sums
    for cov, cells in totals.marginals.items():
        if cov == "nace":
            marginals["nace"] = {c: new_nace[c] for c in cells}
        elif cov == "occupation" and totals.cross:
            pass  # already replaced by cross column sums
        else:
            marginals[cov] = {c: v * ratio for c, v in cells.items()}
    out = TotalsTable(
        wave=totals.wave,
        grand_total=grand_new,
        marginals=marginals,
        cross=cross,
        rel_se=dict(totals.rel_se),
    )
    out.validate()
    return out, truncated


def resample_ads(sample: AdSample, wave: int, rng) -> AdSample:
    """With-replacement resample of one wave at its original size."""
    idx = sample.wave_indices(wave)
    if idx.size == 0:
        raise ConfigError(f"wave {wave} has no records")
    return sample.take(idx[rng.integers(0, idx.size, idx.size)])


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 500
    seed: int = 0
    workers: int = 1
    freeze_lambda: bool = False
    estimators: tuple[str, ...] = DEFAULT_ESTIMATORS
    skills: tuple[str, ...] | None = None
    max_failure_share: float = 0.05
    glm: GlmSettings = GlmSettings()

    def validate(self) -> "BootstrapConfig":
        if self.replicates < 2:
            raise ConfigError("need at least 2 replicates for a variance")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}")
        if not (0.0 <= self.max_failure_share < 1.0):
            raise ConfigError("max_failure_share must lie in [0, 1)")
        return self


@dataclass(frozen=True)
class BootstrapDistribution:
    """Draws of one statistic over the surviving replicates."""

    draws: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.draws.mean())

    @property
    def variance(self) -> float:
        return float(self.draws.var(ddof=1))

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def cv_pct(self) -> float:
        """Coefficient of variation in percent, 100 * SE / |mean|."""
        m = self.mean
        if m == 0.0:
            return float("nan")
        return 100.0 * self.se / abs(m)


@dataclass(frozen=True)
class BootstrapResult:
    config: BootstrapConfig
    skills: tuple[str, ...]
    estimators: tuple[str, ...]
    waves: tuple[int, ...]
    base: dict  # (skill, estimator, wave) -> PointEstimate
    pooled: dict  # (skill, estimator) -> float
    distributions: dict  # (skill, estimator, wave) -> BootstrapDistribution
    auc_base: dict  # (skill, estimator) -> float, model estimators only
    auc: dict  # (skill, estimator) -> BootstrapDistribution
    replicate_ids: np.ndarray
    dropped: int
    truncated_draws: int
    failures: tuple[str, ...]

    def cv_by_wave(self, skill: str, estimator: str) -> dict[int, float]:
        return {
            w: self.distributions[(skill, estimator, w)].cv_pct for w in self.waves
        }

    def mean_cv(self, skill: str, estimator: str) -> float:
        """Average of the per-wave CVs, the figure the report prints."""
        return float(np.mean(list(self.cv_by_wave(skill, estimator).values())))


class _ReplicateEngine:
    """Precomputed arrays shared by every replicate.

    Built once in the parent process; workers inherit it read-only via
    fork, so replicates never re-parse records or re-group cells.  All
    model fitting runs at the cell level (distinct covariate patterns
    with binomial counts), which is what keeps a full refit per
    replicate affordable.
    """

    def __init__(self, sample: AdSample, totals_by_wave: dict[int, TotalsTable],
                 config: BootstrapConfig):
        config.validate()
        if sample.has_missing:
            raise ConfigError("bootstrap needs a complete sample; impute first")
        self.config = config
        self.sample = sample
        self.skills = tuple(config.skills) if config.skills else sample.skill_names
        for s in self.skills:
            if s not in sample.skill_names:
                raise MissingColumn(f"unknown skill {s!r}")
        # global skill positions keep fold seeds stable under subsetting
        self.skill_pos = tuple(sample.skill_names.index(s) for s in self.skills)
        self.specs = tuple(ESTIMATORS[name] for name in config.estimators)
        self.waves = tuple(sorted(sample.waves))
        for w in self.waves:
            if w not in totals_by_wave:
                raise ConfigError(f"no totals table for wave {w}")
        self.totals = {w: totals_by_wave[w].validate() for w in self.waves}
        self.wave_idx = {w: sample.wave_indices(w) for w in self.waves}
        self.Y_full = sample.skill_matrix()[:, list(self.skill_pos)].astype(np.float64)
        self.group_index = model_group_indices(self.specs)
        self.frozen: dict[str, list[float]] = {}

        # model groups: one workspace per distinct (family, covariates)
        self.groups: dict[str, dict] = {}
        for spec in self.specs:
            if spec.model is None:
                continue
            key = model_group_key(spec)
            if key in self.groups:
                continue
            ws = CellWorkspace.from_design(encode(sample, spec.covariates, intercept=True))
            self.groups[key] = {
                "kind": spec.model,
                "covariates": spec.covariates,
                "ws": ws,
                "tc": {w: self._totals_cells(ws, spec.covariates, self.totals[w])
                       for w in self.waves},
            }

        # direct-calibration estimators ride on integer category codes
        self.greg: dict[str, dict] = {}
        for spec in self.specs:
            if spec.model is None and spec.covariates:
                if len(spec.covariates) != 1:
                    raise ConfigError(
                        f"{spec.name}: direct calibration supports one covariate"
                    )
                cov = spec.covariates[0]
                self.greg[spec.name] = {
                    "cov": cov,
                    "codes": sample.covariate_codes(cov),
                    "cats": sample.dictionaries[cov],
                }

    # -- population-side cells for the fitted-mean total -----------------

    @staticmethod
    def _totals_cells(ws: CellWorkspace, covariates, totals: TotalsTable):
        """Design rows and key list for every published cell the
        fitted-mean total sums over.  Keys are fixed once here; only the
        values change under perturbation."""
        col_of = {lab: j for j, lab in enumerate(ws.column_labels[1:])}
        p = ws.p
        if len(covariates) == 1:
            cov = covariates[0]
            cells = totals.marginals.get(cov, {})
            if not cells:
                raise MissingCellTotal(
                    f"wave {totals.wave}: no {cov} marginals for the model total"
                )
            keys = sorted(cells)
            rows = np.zeros((len(keys), p))
            for i, cat in enumerate(keys):
                lab = (cov, cat)
                if lab in col_of:
                    rows[i, col_of[lab]] = 1.0
                elif cat != ws.reference_levels[cov]:
                    raise UncoveredCell(f"{cov}={cat!r} not covered by the model")
            getter = ("marginal", cov, tuple(keys))
        else:
            if not totals.cross:
                raise MissingCrossTotals(
                    f"wave {totals.wave} has no cross table for the model total"
                )
            keys = sorted(totals.cross)
            rows = np.zeros((len(keys), p))
            for i, (nc, oc) in enumerate(keys):
                for cov, cat in (("occupation", oc), ("nace", nc)):
                    lab = (cov, cat)
                    if lab in col_of:
                        rows[i, col_of[lab]] = 1.0
                    elif cat != ws.reference_levels[cov]:
                        raise UncoveredCell(f"{cov}={cat!r} not covered by the model")
            getter = ("cross", None, tuple(keys))
        return {"rows": rows, "getter": getter}

    @staticmethod
    def _totals_values(tc, table: TotalsTable) -> np.ndarray:
        kind, cov, keys = tc["getter"]
        if kind == "marginal":
            cells = table.marginals.get(cov, {})
            try:
                return np.array([cells[k] for k in keys], dtype=np.float64)
            except KeyError as exc:
                raise MissingCellTotal(
                    f"wave {table.wave}: {cov}={exc.args[0]!r} vanished"
                ) from None
        try:
            return np.array([table.cross[k] for k in keys], dtype=np.float64)
        except KeyError as exc:
            raise MissingCellTotal(
                f"wave {table.wave}: cross cell {exc.args[0]!r} vanished"
            ) from None

    # -- model refits ----------------------------------------------------

    def _fit_models(self, tag: int, idx_all: np.ndarray, Y: np.ndarray) -> dict:
        cfg = self.config
        K = len(self.skills)
        out: dict[str, dict] = {}
        for key in sorted(self.groups):
            g = self.groups[key]
            ws = g["ws"]
            cells = ws.unit_cells[idx_all]
            m = np.bincount(cells, minlength=ws.n_cells).astype(np.float64)
            S = np.empty((K, ws.n_cells))
            for k in range(K):
                S[k] = np.bincount(cells, weights=Y[:, k], minlength=ws.n_cells)
            coefs = np.empty((K, ws.p + 1))
            extras: list[dict] = [{} for _ in range(K)]
            if g["kind"] == "logistic":
                for k in range(K):
                    coefs[k] = _newton_mle(ws.cell_X, m, S[k], 100, 1e-8)
            else:
                if g["kind"] == "adaptive_lasso":
                    alpha = np.empty((K, ws.p))
                    pilots = np.empty((K, ws.p))
                    for k in range(K):
                        pilots[k] = _ridge_pilot_cells(ws.cell_X, m, S[k])
                        with np.errstate(divide="ignore"):
                            alpha[k] = np.abs(pilots[k]) ** (-cfg.glm.gamma)
                else:
                    alpha = np.ones((K, ws.p))
                    pilots = None
                seeds = [
                    fold_seed(cfg.seed, tag, self.skill_pos[k], self.group_index[key])
                    for k in range(K)
                ]
                frozen = self.frozen.get(key) if (cfg.freeze_lambda and tag > 0) else None
                res = lasso_cv_cells(
                    ws, cells, Y.T, alpha, seeds,
                    folds=cfg.glm.folds,
                    n_lambdas=cfg.glm.n_lambdas,
                    lambda_min_ratio=cfg.glm.lambda_min_ratio,
                    frozen_lambdas=frozen,
                )
                for k in range(K):
                    coefs[k] = res[k]["coefficients"]
                    extras[k] = {
                        "lambda_grid": res[k]["lambda_grid"],
                        "cv_curve": res[k]["cv_curve"],
                        "selected_lambda": res[k]["selected_lambda"],
                        "alpha_weights": np.concatenate(([0.0], alpha[k])),
                    }
                    if pilots is not None:
                        extras[k]["pilot_coefficients"] = pilots[k]
            mu_cells = _expit(coefs[:, :1] + coefs[:, 1:] @ ws.cell_X.T)
            out[key] = {
                "coefs": coefs, "mu_cells": mu_cells,
                "cells": cells, "m": m, "S": S, "extras": extras,
            }
        return out

    # -- one full evaluation ---------------------------------------------

    def compute(self, tag: int, idx_all: np.ndarray,
                tables: dict[int, TotalsTable]):
        """All estimators on one (index, totals) configuration.

        Returns (values[K, E, W], auc[K, E]); auc is NaN for weight-only
        estimators.  ``tag`` feeds the fold seeds: 0 for the base data,
        1 + b for replicate b.
        """
        K, E, W = len(self.skills), len(self.specs), len(self.waves)
        Y = self.Y_full[idx_all]
        group_fits = self._fit_models(tag, idx_all, Y)
        values = np.full((K, E, W), np.nan)
        auc_out = np.full((K, E), np.nan)

        for e, spec in enumerate(self.specs):
            if spec.model is None:
                continue
            gf = group_fits[model_group_key(spec)]
            for k in range(K):
                auc_out[k, e] = auc_grouped(
                    gf["mu_cells"][k], gf["S"][k], gf["m"] - gf["S"][k]
                )

        pos = 0
        for wi, w in enumerate(self.waves):
            n_w = self.wave_idx[w].size
            sl = slice(pos, pos + n_w)
            pos += n_w
            table = tables[w]
            big_n = table.grand_total
            Yw = Y[sl]
            for e, spec in enumerate(self.specs):
                if spec.model is None and not spec.covariates:
                    values[:, e, wi] = Yw.mean(axis=0)
                elif spec.model is None:
                    g = self.greg[spec.name]
                    cats = g["cats"]
                    codes_w = g["codes"][idx_all[sl]]
                    counts = np.bincount(codes_w, minlength=len(cats))
                    cells = table.marginals.get(g["cov"], {})
                    try:
                        tvec = np.array([cells[c] for c in cats], dtype=np.float64)
                    except KeyError as exc:
                        raise MissingCellTotal(
                            f"wave {w}: {g['cov']}={exc.args[0]!r} has no total"
                        ) from None
                    if (counts == 0).any():
                        missing = cats[int(np.argmin(counts))]
                        raise RankDeficient(
                            f"wave {w}: no sampled ads with {g['cov']}={missing!r}"
                        )
                    # closed form for a saturated one-hot calibration:
                    # every unit in category c gets weight T_c / n_c
                    wcell = tvec / counts
                    for k in range(K):
                        succ = np.bincount(
                            codes_w, weights=Yw[:, k], minlength=len(cats)
                        )
                        values[k, e, wi] = float((succ * wcell).sum() / tvec.sum())
                else:
                    key = model_group_key(spec)
                    g = self.groups[key]
                    gf = group_fits[key]
                    unit_mu = gf["mu_cells"][:, g["ws"].unit_cells[idx_all[sl]]]
                    tc = g["tc"][w]
                    tvals = self._totals_values(tc, table)
                    eta_tc = gf["coefs"][:, :1] + gf["coefs"][:, 1:] @ tc["rows"].T
                    tmu = _expit(eta_tc) @ tvals
                    d = np.full(n_w, big_n / n_w)
                    for k in range(K):
                        wv = calibrate_model_assisted(
                            d, unit_mu[k], big_n, float(tmu[k]),
                            outcome_tag=self.skills[k],
                        )
                        values[k, e, wi] = hajek_mean(wv, Yw[:, k])
        return values, auc_out

    def replicate(self, b: int):
        rng = np.random.default_rng(
            np.random.SeedSequence((self.config.seed, 1 + b))
        )
        tables = {}
        truncated = 0
        for w in self.waves:
            t, cut = perturb_totals(self.totals[w], rng)
            tables[w] = t
            truncated += cut
        parts = []
        for w in self.waves:
            idx = self.wave_idx[w]
            parts.append(idx[rng.integers(0, idx.size, idx.size)])
        idx_all = np.concatenate(parts)
        values, aucs = self.compute(1 + b, idx_all, tables)
        return values, aucs, truncated

    # -- base run ---------------------------------------------------------

    def base(self):
        """Point estimates, base AUCs, and (when freezing) the penalties
        the replicates will reuse.  Model fits go through the same
        batched path as replicates, then get wrapped as ModelFit objects
        so the public estimator API produces the reported numbers."""
        idx_all = np.concatenate([self.wave_idx[w] for w in self.waves])
        Y = self.Y_full[idx_all]
        group_fits = self._fit_models(0, idx_all, Y)
        if self.config.freeze_lambda:
            for key, gf in group_fits.items():
                if self.groups[key]["kind"] != "logistic":
                    self.frozen[key] = [
                        ex["selected_lambda"] for ex in gf["extras"]
                    ]

        settings = GlmSettings(
            folds=self.config.glm.folds, gamma=self.config.glm.gamma,
            seed=self.config.seed, n_lambdas=self.config.glm.n_lambdas,
            lambda_min_ratio=self.config.glm.lambda_min_ratio,
        )
        cache = ModelCache(self.sample, settings, specs=self.specs)
        for spec in self.specs:
            if spec.model is None:
                continue
            key = model_group_key(spec)
            gf = group_fits[key]
            ws = self.groups[key]["ws"]
            for k, skill in enumerate(self.skills):
                fit = ws.make_fit(
                    spec.model, gf["coefs"][k], n_obs=idx_all.size,
                    **gf["extras"][k],
                )
                cache.put(spec, skill, fit)

        base: dict = {}
        pooled: dict = {}
        for spec in self.specs:
            for skill in self.skills:
                by_wave = {}
                for w in self.waves:
                    pe = estimate(spec, self.sample, self.totals[w], skill, w,
                                  cache=cache)
                    base[(skill, spec.name, w)] = pe
                    by_wave[w] = pe.value
                pooled[(skill, spec.name)] = pool_by_wave(by_wave, self.totals)

        auc_base: dict = {}
        for e, spec in enumerate(self.specs):
            if spec.model is None:
                continue
            gf = group_fits[model_group_key(spec)]
            for k, skill in enumerate(self.skills):
                auc_base[(skill, spec.name)] = auc_grouped(
                    gf["mu_cells"][k], gf["S"][k], gf["m"] - gf["S"][k]
                )
        return base, pooled, auc_base, cache


# -- parallel driver ---------------------------------------------------------

_ENGINE: _ReplicateEngine | None = None


def _run_chunk(replicate_ids):
    out = []
    for b in replicate_ids:
        try:
            values, aucs, truncated = _ENGINE.replicate(b)
            out.append((b, True, values, aucs, truncated, ""))
        except SkillcalError as exc:
            out.append(
                (b, False, None, None, 0, f"replicate {b}: {type(exc).__name__}: {exc}")
            )
    return out


def base_estimates(config: BootstrapConfig, sample: AdSample,
                   totals_by_wave: dict[int, TotalsTable]):
    """Point estimates without replication.

    Runs the same base fits as :func:`run_bootstrap` and returns
    ``(base, pooled, auc_base)``: per-wave :class:`PointEstimate`
    objects keyed ``(skill, estimator, wave)``, pooled values keyed
    ``(skill, estimator)``, and model AUCs keyed the same way.
    """
    engine = _ReplicateEngine(sample, totals_by_wave, config)
    base, pooled, auc_base, _ = engine.base()
    return base, pooled, auc_base


def run_bootstrap(config: BootstrapConfig, sample: AdSample,
                  totals_by_wave: dict[int, TotalsTable]) -> BootstrapResult:
    """Full two-source bootstrap; see the module docstring.

    Raises
    ------
    TooManyReplicateFailures
        More than ``config.max_failure_share`` of the replicates raised.
    """
    global _ENGINE
    engine = _ReplicateEngine(sample, totals_by_wave, config)
    base, pooled, auc_base, _ = engine.base()

    B = config.replicates
    workers = min(config.workers, B)
    chunk = max(1, -(-B // (workers * 4)))  # a few chunks per worker
    chunks = [range(lo, min(lo + chunk, B)) for lo in range(0, B, chunk)]

    _ENGINE = engine
    try:
        if workers <= 1:
            batches = [_run_chunk(c) for c in chunks]
        else:
            ctx = mp.get_context("fork")
            with cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
                batches = list(ex.map(_run_chunk, chunks))
    finally:
        _ENGINE = None

    flat = sorted((r for batch in batches for r in batch), key=lambda r: r[0])
    ok = [r for r in flat if r[1]]
    failures = tuple(r[5] for r in flat if not r[1])
    dropped = B - len(ok)
    if dropped > config.max_failure_share * B:
        shown = "; ".join(failures[:5])
        raise TooManyReplicateFailures(
            f"{dropped} of {B} replicates failed (allowed "
            f"{config.max_failure_share:.0%}): {shown}"
        )

    ids = np.array([r[0] for r in ok], dtype=np.int64)
    vals = np.stack([r[2] for r in ok])  # (n_ok, K, E, W)
    aucs = np.stack([r[3] for r in ok])
    truncated = int(sum(r[4] for r in ok))

    skills, ests, waves = engine.skills, tuple(s.name for s in engine.specs), engine.waves
    distributions = {}
    auc_dists = {}
    for k, skill in enumerate(skills):
        for e, est in enumerate(ests):
            for wi, w in enumerate(waves):
                distributions[(skill, est, w)] = BootstrapDistribution(
                    np.ascontiguousarray(vals[:, k, e, wi])
                )
            if not np.isnan(aucs[:, k, e]).all():
                auc_dists[(skill, est)] = BootstrapDistribution(
                    np.ascontiguousarray(aucs[:, k, e])
                )

    return BootstrapResult(
        config=config,
        skills=skills,
        estimators=ests,
        waves=waves,
        base=base,
        pooled=pooled,
        distributions=distributions,
        auc_base=auc_base,
        auc=auc_dists,
        replicate_ids=ids,
        dropped=dropped,
        truncated_draws=truncated,
        failures=failures,
    )
