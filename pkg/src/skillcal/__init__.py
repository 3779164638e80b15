"""Calibrated prevalence estimation for skill indicators in online
job-ad samples.

The package treats a scraped sample of job ads as a non-probability
sample of the vacancy population, starts every ad at the pseudo-design
weight N/n, and corrects selection bias by calibrating those weights to
published vacancy totals, either directly (GREG) or through a logistic
working model whose fitted means become the calibration variable.
Uncertainty comes from a two-source bootstrap that resamples ads and
perturbs the published totals by their published precision.
"""

from .bootstrap import (
    BootstrapConfig,
    BootstrapDistribution,
    BootstrapResult,
    base_estimates,
    perturb_totals,
    resample_ads,
    run_bootstrap,
)
from .calibration import (
    WeightVector,
    calibrate_chi2,
    calibrate_model_assisted,
    hajek_mean,
    pseudo_weights,
)
from .data import (
    AdRecord,
    AdSample,
    TotalsTable,
    impute_gower_1nn,
    load_ads,
    load_totals,
    load_totals_by_wave,
    save_ads,
    save_totals,
)
from .design import (
    CollapseRule,
    DesignMatrix,
    TotalsVector,
    collapse_categories,
    encode,
    parse_collapse_map,
    totals_vector,
)
from .errors import SkillcalError
from .estimators import (
    DEFAULT_ESTIMATORS,
    ESTIMATORS,
    EstimatorSpec,
    GlmSettings,
    ModelCache,
    PointEstimate,
    estimate,
    pool_by_wave,
)
from .glm import (
    FittedMeans,
    ModelFit,
    fit_adaptive_lasso,
    fit_lasso_path,
    fit_logistic_mle,
    predict_means,
    ridge_pilot,
    soft_threshold,
)
from .metrics import auc, auc_grouped, cramers_v
from .simulator import (
    GroundTruth,
    SimulatedRun,
    SyntheticDesign,
    generate,
    load_design,
    save_design,
)

__version__ = "0.1.0"

__all__ = [
    "AdRecord",
    "AdSample",
    "BootstrapConfig",
    "BootstrapDistribution",
    "BootstrapResult",
    "CollapseRule",
    "DEFAULT_ESTIMATORS",
    "DesignMatrix",
    "ESTIMATORS",
    "EstimatorSpec",
    "FittedMeans",
    "GlmSettings",
    "GroundTruth",
    "ModelCache",
    "ModelFit",
    "PointEstimate",
    "SimulatedRun",
    "SkillcalError",
    "SyntheticDesign",
    "TotalsTable",
    "TotalsVector",
    "WeightVector",
    "auc",
    "auc_grouped",
    "base_estimates",
    "calibrate_chi2",
    "calibrate_model_assisted",
    "collapse_categories",
    "cramers_v",
    "encode",
    "estimate",
    "fit_adaptive_lasso",
    "fit_lasso_path",
    "fit_logistic_mle",
    "generate",
    "hajek_mean",
    "impute_gower_1nn",
    "load_ads",
    "load_design",
    "load_totals",
    "load_totals_by_wave",
    "parse_collapse_map",
    "perturb_totals",
    "pool_by_wave",
    "predict_means",
    "pseudo_weights",
    "resample_ads",
    "ridge_pilot",
    "run_bootstrap",
    "save_ads",
    "save_design",
    "save_totals",
    "soft_threshold",
    "totals_vector",
    "__version__",
]
