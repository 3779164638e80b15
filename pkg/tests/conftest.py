import numpy as np
import pytest

from skillcal.data import impute_gower_1nn
from skillcal.simulator import SyntheticDesign, generate


def make_design(
    waves=(1, 2),
    population_sizes=None,
    sample_sizes=None,
    selection_logits=(0.8, 0.0, -0.6, 0.2),
    missing_rates=None,
    rel_se_pct=5.0,
    noisy_totals=False,
):
    """A small two-wave design: 4 occupations, 3 nace codes, 2 provinces,
    2 skills driven by occupation only.  Cheap enough for per-test use."""
    waves = tuple(waves)
    if population_sizes is None:
        population_sizes = {w: 60_000 for w in waves}
    if sample_sizes is None:
        sample_sizes = {w: 900 for w in waves}
    if missing_rates is None:
        missing_rates = {"occupation": 0.01, "nace": 0.03}
    nace = ("C", "F", "G")
    rel = {w: {"total": rel_se_pct, **{c: rel_se_pct for c in nace}} for w in waves}
    return SyntheticDesign(
        waves=waves,
        population_sizes=dict(population_sizes),
        sample_sizes=dict(sample_sizes),
        occupation_categories=("11", "22", "33", "44"),
        occupation_shares=np.array([0.18, 0.32, 0.28, 0.22]),
        selection_logits=np.array(selection_logits, dtype=np.float64),
        nace_categories=nace,
        nace_shares=np.array([0.4, 0.25, 0.35]),
        province_categories=("P1", "P2"),
        province_shares=np.array([0.55, 0.45]),
        skills=("alpha", "beta"),
        skill_intercepts=np.array([-1.2, 0.3]),
        occupation_effects=np.array(
            [[1.0, 0.2, -0.5, -1.1], [0.6, -0.3, 0.4, -0.8]]
        ),
        nace_effects=None,
        rel_se=rel,
        missing_rates=dict(missing_rates),
        noisy_totals=noisy_totals,
    )


@pytest.fixture(scope="session")
def small_run():
    """One generated run shared by read-only tests: (run, imputed sample)."""
    run = generate(make_design(), seed=101)
    sample = run.sample
    if sample.has_missing:
        sample = impute_gower_1nn(sample)
    return run, sample
