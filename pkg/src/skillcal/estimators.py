"""The estimator families: pseudo-SRS, GREG, and model-assisted.

Every estimator produces a Hajek ratio mean sum(w y) / sum(w) per
(skill, wave); they differ only in how the weights w arise:

HTSRS      constant pseudo-design weights N/n (amounts to the sample
           mean; the baseline everything else is judged against).
ECGREG     weights calibrated directly to the occupation totals.
ECMC       weights calibrated to (N, sum of fitted means) with the
           means from an unpenalized logistic model on occupation.
ECLASSO1   as ECMC with a cross-validated LASSO logistic model.
ECLASSO2   LASSO model on occupation and nace; the population side of
           the fitted-mean total needs the nace x occupation cross
           table.
ECALASSO1  adaptive LASSO on occupation (ridge pilot weights).

Working models are fit once on the pooled waves and cached; only the
weights are re-derived per wave.  Estimates outside [0, 1] are flagged,
never clamped, because clamping would hide calibration trouble.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import (
    calibrate_chi2,
    calibrate_model_assisted,
    hajek_mean,
    pseudo_weights,
)
from .data import AdSample, TotalsTable
from .design import encode, totals_vector
from .errors import (
    MissingCrossTotals,
    UncoveredCell,
    UnknownCovariate,
)
from .glm import (
    ModelFit,
    fit_adaptive_lasso,
    fit_lasso_path,
    fit_logistic_mle,
    predict_means,
)


@dataclass(frozen=True)
class EstimatorSpec:
    """Declarative description of one estimator.

    ``model`` is ``None`` for purely weight-based estimators and the
    working-model family name otherwise.  ``pooled_model`` marks that
    the model is fit on all waves together and shared.
    """

    name: str
    covariates: tuple[str, ...]
    model: str | None
    pooled_model: bool = True


ESTIMATORS: dict[str, EstimatorSpec] = {
    "HTSRS": EstimatorSpec("HTSRS", (), None),
    "ECGREG": EstimatorSpec("ECGREG", ("occupation",), None),
    "ECMC": EstimatorSpec("ECMC", ("occupation",), "logistic"),
    "ECLASSO1": EstimatorSpec("ECLASSO1", ("occupation",), "lasso"),
    "ECLASSO2": EstimatorSpec("ECLASSO2", ("occupation", "nace"), "lasso"),
    "ECALASSO1": EstimatorSpec("ECALASSO1", ("occupation",), "adaptive_lasso"),
}

DEFAULT_ESTIMATORS = tuple(ESTIMATORS)


@dataclass(frozen=True)
class PointEstimate:
    """One estimate plus the weight diagnostics behind it."""

    skill: str
    estimator: str
    wave: int
    value: float
    weight_min: float
    weight_max: float
    negative_weights: int
    degenerate_model: bool = False

    @property
    def out_of_range(self) -> bool:
        return not (0.0 <= self.value <= 1.0)


@dataclass(frozen=True)
class GlmSettings:
    """Knobs shared by every working-model fit in a run."""

    folds: int = 10
    gamma: float = 1.0
    seed: int = 0
    n_lambdas: int = 100
    lambda_min_ratio: float = 1e-4


def fold_seed(base_seed: int, replicate_tag: int, skill_index: int, model_index: int) -> int:
    """Deterministic cross-validation fold seed.

    Derived by seed-sequence hashing so that replicate streams never
    collide and the result does not depend on worker scheduling.
    ``replicate_tag`` is 0 for the base fit and 1+b for bootstrap
    replicate b.
    """
    ss = np.random.SeedSequence(
        (int(base_seed), int(replicate_tag), int(skill_index), int(model_index))
    )
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def model_group_key(spec: EstimatorSpec) -> str:
    return f"{spec.model}|{','.join(spec.covariates)}"


def model_group_indices(specs) -> dict[str, int]:
    """Stable index per distinct (model, covariates) combination."""
    keys = sorted({model_group_key(s) for s in specs if s.model is not None})
    return {k: i for i, k in enumerate(keys)}


class ModelCache:
    """Pooled working-model fits, one per (model family, covariates, skill).

    The pooled sample is fixed at construction; ``fit_for`` fits lazily
    and caches, so the six estimators share model work across waves.
    """

    def __init__(self, sample: AdSample, settings: GlmSettings | None = None,
                 specs=None):
        self.sample = sample
        self.settings = settings or GlmSettings()
        self._specs = tuple(specs) if specs is not None else tuple(ESTIMATORS.values())
        self._group_index = model_group_indices(self._specs)
        self._fits: dict[tuple[str, str], ModelFit] = {}
        self._designs: dict[tuple[str, ...], object] = {}

    def design_for(self, covariates: tuple[str, ...]):
        if covariates not in self._designs:
            self._designs[covariates] = encode(self.sample, covariates, intercept=True)
        return self._designs[covariates]

    def put(self, spec: EstimatorSpec, skill: str, fit: ModelFit) -> None:
        self._fits[(model_group_key(spec), skill)] = fit

    def fit_for(self, spec: EstimatorSpec, skill: str) -> ModelFit:
        key = (model_group_key(spec), skill)
        if key in self._fits:
            return self._fits[key]
        X = self.design_for(spec.covariates)
        y = self.sample.skill_column(skill)
        s = self.settings
        seed = fold_seed(
            s.seed, 0, self.sample.skill_names.index(skill),
            self._group_index[model_group_key(spec)],
        )
        if spec.model == "logistic":
            fit = fit_logistic_mle(y, X)
        elif spec.model == "lasso":
            fit = fit_lasso_path(
                y, X, folds=s.folds, seed=seed,
                n_lambdas=s.n_lambdas, lambda_min_ratio=s.lambda_min_ratio,
            )
        elif spec.model == "adaptive_lasso":
            fit = fit_adaptive_lasso(
                y, X, gamma=s.gamma, folds=s.folds, seed=seed,
                n_lambdas=s.n_lambdas, lambda_min_ratio=s.lambda_min_ratio,
            )
        else:
            raise UnknownCovariate(f"estimator {spec.name} has no model")
        self._fits[key] = fit
        return fit


def population_model_total(fit: ModelFit, totals: TotalsTable, covariates) -> float:
    """Population total of the fitted means, sum over cells of
    (cell total) x (cell fitted mean).

    With one covariate the cells are its marginal categories; with
    occupation and nace the cells come from the published cross table.

    Raises
    ------
    MissingCrossTotals
        Two covariates requested but the totals table has no cross table.
    UncoveredCell
        A totals cell falls outside the model's category dictionaries.
    """
    covariates = tuple(covariates)
    if covariates != tuple(fit.covariates):
        raise UncoveredCell(
            f"model covariates {fit.covariates} vs requested {covariates}"
        )
    total = 0.0
    if len(covariates) == 1:
        cov = covariates[0]
        cells = totals.marginals.get(cov, {})
        if not cells:
            raise MissingCrossTotals(f"no {cov} marginals in wave {totals.wave}")
        known = set(fit.dictionaries[cov])
        for cat, tot in cells.items():
            if cat not in known:
                raise UncoveredCell(f"{cov}={cat!r} not covered by the model")
            total += tot * fit.cell_mean(cat)
    elif covariates == ("occupation", "nace"):
        if not totals.cross:
            raise MissingCrossTotals(f"wave {totals.wave} has no cross table")
        known_occ = set(fit.dictionaries["occupation"])
        known_nace = set(fit.dictionaries["nace"])
        for (nace, occ), tot in totals.cross.items():
            if occ not in known_occ or nace not in known_nace:
                raise UncoveredCell(f"cross cell ({nace!r}, {occ!r}) not covered")
            total += tot * fit.cell_mean((occ, nace))
    else:
        raise UnknownCovariate(f"unsupported covariate set {covariates}")
    return total


def estimate(
    spec,
    sample: AdSample,
    totals: TotalsTable,
    skill: str,
    wave: int,
    cache: ModelCache | None = None,
    settings: GlmSettings | None = None,
) -> PointEstimate:
    """Point estimate of one skill's prevalence in one wave.

    ``sample`` is the full (pooled, imputed) sample; the wave subset is
    taken here.  For model-based estimators the pooled model comes from
    ``cache`` (built on demand when omitted).

    Raises
    ------
    RankDeficient, SeparationDetected, NonConvergence,
    MissingCellTotal, MissingCrossTotals, UncoveredCell
        Propagated from the weight or model stage.
    """
    if isinstance(spec, str):
        spec = ESTIMATORS[spec]
    idx = sample.wave_indices(wave)
    if idx.size == 0:
        raise UnknownCovariate(f"wave {wave} has no records")
    wave_sample = sample.take(idx)
    y = wave_sample.skill_column(skill)
    d = pseudo_weights(idx.size, totals.grand_total)

    degenerate = False
    if spec.model is None and not spec.covariates:
        w = d
    elif spec.model is None:
        X = encode(wave_sample, spec.covariates, intercept=False)
        T = totals_vector(totals, X)
        w = calibrate_chi2(d, X, T)
    else:
        if cache is None:
            cache = ModelCache(sample, settings, specs=[spec])
        fit = cache.fit_for(spec, skill)
        mu = predict_means(fit, encode(wave_sample, spec.covariates, intercept=True))
        t_mu = population_model_total(fit, totals, spec.covariates)
        w = calibrate_model_assisted(
            d, mu.values, totals.grand_total, t_mu, outcome_tag=skill
        )
        degenerate = w.degenerate_model

    return PointEstimate(
        skill=skill,
        estimator=spec.name,
        wave=wave,
        value=hajek_mean(w, y),
        weight_min=float(w.values.min()),
        weight_max=float(w.values.max()),
        negative_weights=w.negative_count,
        degenerate_model=degenerate,
    )


def pool_by_wave(values_by_wave: dict[int, float], totals_by_wave: dict[int, TotalsTable]) -> float:
    """Vacancy-weighted pooling of per-wave estimates: each wave's value
    weighted by its grand total."""
    num = 0.0
    den = 0.0
    for wave, v in values_by_wave.items():
        n_w = totals_by_wave[wave].grand_total
        num += n_w * v
        den += n_w
    return num / den
