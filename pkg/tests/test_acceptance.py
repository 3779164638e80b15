"""End-to-end acceptance gate.

Eight checks, one test function each, every one at a fixed seed so the
verdict is reproducible run to run.  Check 6 performs a full
500-replicate bootstrap on the bundled fixture and dominates the
suite's runtime (about 25 minutes); everything else finishes in a few
minutes combined.
"""

import time

import numpy as np
import pytest
from conftest import make_design
from oracles import (
    auc_pairs,
    chi2_calibration_oracle,
    chi2_objective,
    logistic_kkt_gap,
)

from skillcal.bootstrap import BootstrapConfig, base_estimates, run_bootstrap
from skillcal.calibration import calibrate_chi2
from skillcal.cli import main
from skillcal.data import AdRecord, AdSample, impute_gower_1nn
from skillcal.design import encode
from skillcal.glm import fit_adaptive_lasso, fit_lasso_path, fit_logistic_mle
from skillcal.metrics import auc, cramers_v
from skillcal.simulator import SyntheticDesign, generate, load_design, save_design


def _calibration_instance(rng, max_n=200, max_p=10):
    """Random feasible calibration problem, one-hot or continuous."""
    n = int(rng.integers(5, max_n + 1))
    p = min(int(rng.integers(1, max_p + 1)), n)
    d = rng.uniform(0.5, 3.0, n)
    if rng.random() < 0.5:
        codes = np.arange(n) % p  # every category occupied
        rng.shuffle(codes)
        X = np.zeros((n, p))
        X[np.arange(n), codes] = 1.0
    else:
        cols = [np.ones(n)] + [rng.uniform(0.05, 1.0, n) for _ in range(p - 1)]
        X = np.column_stack(cols)
    # target reachable from d, so constraints are consistent by construction
    T = X.T @ (d * rng.uniform(0.7, 1.4, n))
    return d, X, T


def test_acceptance_1_calibrated_weights_hit_every_benchmark():
    """1000 random instances (n <= 200, p <= 10): every weight vector
    satisfies |w'X - T| <= 1e-8 |T| per component, in under 10 s."""
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    for _ in range(1000):
        d, X, T = _calibration_instance(rng)
        w = calibrate_chi2(d, X, T).values
        gap = np.abs(w @ X - T)
        assert np.all(gap <= 1e-8 * np.abs(T)), (
            f"constraint gap {gap.max():.3e} exceeds 1e-8 relative bound"
        )
    elapsed = time.perf_counter() - t0
    print(f"1000 instances calibrated in {elapsed:.2f} s")
    assert elapsed < 10.0, f"calibration too slow: {elapsed:.2f} s for 1000 runs"


def test_acceptance_2_chi2_objective_matches_qp_oracle():
    """200 small instances: the closed-form solution attains the same
    chi-square objective as an independent least-squares KKT solve."""
    rng = np.random.default_rng(2002)
    for _ in range(200):
        n = int(rng.integers(4, 61))
        p = int(rng.integers(1, min(n, 7)))
        d = rng.uniform(0.5, 3.0, n)
        cols = [np.ones(n)] + [rng.uniform(0.05, 1.0, n) for _ in range(p - 1)]
        X = np.column_stack(cols)
        T = X.T @ (d * rng.uniform(0.7, 1.4, n))
        w = calibrate_chi2(d, X, T).values
        w_star = chi2_calibration_oracle(d, X, T)
        assert chi2_objective(w, d) == pytest.approx(
            chi2_objective(w_star, d), abs=1e-8
        )


def _balanced_case(rng, n=400, k=4):
    """Random one-covariate logistic problem with no pure cells."""
    while True:
        codes = rng.integers(0, k, n)
        probs = rng.uniform(0.15, 0.85, k)
        y = (rng.random(n) < probs[codes]).astype(float)
        total = np.bincount(codes, minlength=k)
        pos = np.bincount(codes, weights=y, minlength=k)
        if np.all(total >= 2) and np.all(pos >= 1) and np.all(pos <= total - 1):
            break
    records = [
        AdRecord(wave=1, occupation=str(c), nace="X", province="P",
                 skills=(int(v),))
        for c, v in zip(codes, y)
    ]
    sample = AdSample(records, skill_names=("s",))
    return encode(sample, ["occupation"], intercept=True), y


def test_acceptance_3_lasso_reduces_to_mle_and_satisfies_kkt():
    """At zero penalty the path solver reproduces the Newton MLE to
    1e-4; at every CV-selected penalty the KKT residual is <= 1e-4; a
    unit pilot makes the adaptive path bit-identical to the plain one."""
    rng = np.random.default_rng(3003)
    for i in range(50):
        X, y = _balanced_case(rng)
        mle = fit_logistic_mle(y, X)
        at_zero = fit_lasso_path(y, X, lambdas=[0.0])
        gap0 = np.max(np.abs(at_zero.coefficients - mle.coefficients))
        assert gap0 <= 1e-4, f"instance {i}: MLE gap {gap0:.2e}"
        fit = fit_lasso_path(y, X, seed=i)
        kkt = logistic_kkt_gap(fit.intercept, fit.coefficients[1:],
                               X.values[:, 1:], y, fit.selected_lambda,
                               np.ones(X.p - 1))
        assert kkt <= 1e-4, f"instance {i}: KKT residual {kkt:.2e}"
    for k in range(10):
        X, y = _balanced_case(rng)
        plain = fit_lasso_path(y, X, seed=100 + k)
        adaptive = fit_adaptive_lasso(y, X, seed=100 + k,
                                      pilot_coefficients=np.ones(X.p - 1))
        assert np.array_equal(adaptive.coefficients, plain.coefficients)
        assert adaptive.selected_lambda == plain.selected_lambda
        assert np.array_equal(adaptive.cv_curve, plain.cv_curve)


def _bias_design(rng):
    """Occupation-only outcomes with selection aligned to the outcome
    effects, so the naive mean is biased in a consistent direction."""
    k = 6
    shares = rng.uniform(0.05, 0.30, k)
    shares /= shares.sum()
    effects = rng.uniform(-1.5, 1.5, k)
    sel = effects * rng.uniform(0.8, 1.6) + rng.normal(0.0, 0.3, k)
    return SyntheticDesign(
        waves=(1,), population_sizes={1: 40_000}, sample_sizes={1: 1_500},
        occupation_categories=tuple(f"O{i}" for i in range(k)),
        occupation_shares=shares, selection_logits=sel,
        nace_categories=("X",), nace_shares=np.array([1.0]),
        province_categories=("P",), province_shares=np.array([1.0]),
        skills=("s",), skill_intercepts=np.array([rng.uniform(-1.5, 0.5)]),
        occupation_effects=effects[None, :], nace_effects=None,
        rel_se={}, missing_rates={},
    )


def test_acceptance_4_calibration_corrects_selection_bias():
    """100 seeded biased designs: the occupation-LASSO estimator lands
    closer to the truth than the naive mean in at least 95, and the
    benchmark-calibrated estimator is unbiased to 0.01, within 5 min."""
    t0 = time.perf_counter()
    wins = 0
    greg_err = []
    for kdx in range(100):
        rng = np.random.default_rng(4000 + kdx)
        design = _bias_design(rng)
        run = generate(design, seed=4000 + kdx)
        cfg = BootstrapConfig(estimators=("HTSRS", "ECGREG", "ECLASSO1"),
                              seed=kdx)
        base, _, _ = base_estimates(cfg, run.sample, run.totals)
        truth = run.truth.by_wave[(1, "s")]
        ht = base[("s", "HTSRS", 1)].value
        l1 = base[("s", "ECLASSO1", 1)].value
        wins += abs(l1 - truth) < abs(ht - truth)
        greg_err.append(base[("s", "ECGREG", 1)].value - truth)
    elapsed = time.perf_counter() - t0
    mean_bias = float(np.mean(greg_err))
    print(f"lasso closer than naive in {wins}/100; "
          f"ECGREG mean bias {mean_bias:+.5f}; {elapsed:.1f} s")
    assert wins >= 95, f"bias correction won only {wins}/100"
    assert abs(mean_bias) < 0.01, f"ECGREG mean bias {mean_bias:+.5f}"
    assert elapsed < 300.0, f"bias study too slow: {elapsed:.1f} s"


def _srs_design():
    """Equal-probability selection, exact totals, three flat skills."""
    ps = np.array([0.05, 0.30, 0.60])
    return SyntheticDesign(
        waves=(1,), population_sizes={1: 200_000}, sample_sizes={1: 2_000},
        occupation_categories=("A", "B"),
        occupation_shares=np.array([0.5, 0.5]),
        selection_logits=np.zeros(2),
        nace_categories=("X",), nace_shares=np.array([1.0]),
        province_categories=("P",), province_shares=np.array([1.0]),
        skills=("p05", "p30", "p60"),
        skill_intercepts=np.log(ps / (1.0 - ps)),
        occupation_effects=np.zeros((3, 2)), nace_effects=None,
        rel_se={1: {"total": 0.0, "X": 0.0}}, missing_rates={},
    )


def test_acceptance_5_bootstrap_se_matches_srs_theory():
    """Under equal-probability selection with exact totals, 500-replicate
    bootstrap SEs for the baseline mean land within 10% of the binomial
    sqrt(p(1-p)/n) reference at p = 0.05, 0.30, 0.60 and n = 2000."""
    run = generate(_srs_design(), seed=5050)
    cfg = BootstrapConfig(replicates=500, seed=5050, workers=1,
                          estimators=("HTSRS",))
    res = run_bootstrap(cfg, run.sample, run.totals)
    for name, p in zip(("p05", "p30", "p60"), (0.05, 0.30, 0.60)):
        se = res.distributions[(name, "HTSRS", 1)].se
        ref = float(np.sqrt(p * (1 - p) / 2000))
        ratio = se / ref
        print(f"{name}: bootstrap SE {se:.5f}, reference {ref:.5f}, "
              f"ratio {ratio:.3f}")
        assert 0.9 <= ratio <= 1.1, f"{name}: SE ratio {ratio:.3f} off by >10%"


def test_acceptance_6_fixture_signs_efficiency_and_variant_agreement():
    """Full 500-replicate bootstrap on the bundled fixture, under 30 min.

    (a) every corrected estimator moves below the naive mean for
    Interpersonal, Managerial, Computer and Self-organization and above
    it for Technical and Physical; (b) the CV ordering
    ECLASSO1 <= ECMC <= ECGREG holds for a majority of the 11 skills;
    (c) plain and adaptive occupation-LASSO estimates agree within
    0.5 pp on every skill."""
    from importlib.resources import files

    design = load_design(files("skillcal") / "fixtures" / "fixture.design")
    run = generate(design, seed=20260823)
    sample = run.sample
    if sample.has_missing:
        sample = impute_gower_1nn(sample)
    cfg = BootstrapConfig(replicates=500, seed=20260823, workers=1)
    t0 = time.perf_counter()
    res = run_bootstrap(cfg, sample, run.totals)
    elapsed = time.perf_counter() - t0
    print(f"B=500 fixture bootstrap: {elapsed:.1f} s, "
          f"{res.dropped} dropped, {res.truncated_draws} truncated")
    assert elapsed < 1800.0, f"fixture bootstrap took {elapsed:.1f} s"

    corrected = [e for e in res.estimators if e != "HTSRS"]
    for skill in ("Interpersonal", "Managerial", "Computer",
                  "Self-organization"):
        for est in corrected:
            assert res.pooled[(skill, est)] < res.pooled[(skill, "HTSRS")], (
                f"{skill}/{est} did not move below the naive mean"
            )
    for skill in ("Technical", "Physical"):
        for est in corrected:
            assert res.pooled[(skill, est)] > res.pooled[(skill, "HTSRS")], (
                f"{skill}/{est} did not move above the naive mean"
            )

    ordered = 0
    for skill in res.skills:
        cl1 = res.mean_cv(skill, "ECLASSO1")
        cmc = res.mean_cv(skill, "ECMC")
        cgr = res.mean_cv(skill, "ECGREG")
        ordered += cl1 <= cmc <= cgr
        print(f"{skill}: CV% ECLASSO1 {cl1:.3f}, ECMC {cmc:.3f}, "
              f"ECGREG {cgr:.3f}")
    majority = len(res.skills) // 2 + 1
    assert ordered >= majority, (
        f"CV ordering holds for {ordered}/{len(res.skills)} skills, "
        f"need {majority}"
    )

    for skill in res.skills:
        gap_pp = 100.0 * abs(res.pooled[(skill, "ECLASSO1")]
                             - res.pooled[(skill, "ECALASSO1")])
        assert gap_pp < 0.5, (
            f"{skill}: plain vs adaptive LASSO gap {gap_pp:.3f} pp"
        )


def test_acceptance_7_auc_and_association_exactness():
    """AUC equals exhaustive pair enumeration on 1000 random instances
    (n <= 50, heavy ties included), exactly; Cramer's V is exactly 0 on
    product (independence) tables and exactly 1 on diagonal tables."""
    rng = np.random.default_rng(7007)
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, n)
        if y.sum() in (0, n):
            continue
        checked += 1
        if checked % 2:
            scores = rng.integers(0, 6, n).astype(float)
        else:
            scores = rng.normal(size=n)
        assert auc(y, scores) == auc_pairs(y, scores)

    for k in (2, 4):
        for m in (3, 5, 8):
            a = np.repeat(np.arange(k), m)
            assert cramers_v(a, a) == 1.0
    for r, c in (((2, 3), (5, 7)), ((1, 4, 2), (3, 3)), ((6, 2), (2, 9, 4))):
        a, b = [], []
        for i, ri in enumerate(r):
            for j, cj in enumerate(c):
                a += [i] * (ri * cj)
                b += [j] * (ri * cj)
        assert cramers_v(np.array(a), np.array(b)) == 0.0


def test_acceptance_8_pipeline_reports_are_deterministic(tmp_path):
    """Two complete pipeline runs (simulate, estimate, bootstrap) with
    the same seeds but different worker counts write byte-identical
    files throughout."""
    design = make_design(sample_sizes={1: 400, 2: 400})
    design_path = tmp_path / "case.design"
    save_design(design, design_path)
    data = tmp_path / "data"
    for out in (data, tmp_path / "data_again"):
        rc = main(["simulate", "--design", str(design_path), "--seed", "88",
                   "--output", str(out)])
        assert rc == 0
    for name in ("ads.csv", "totals.csv", "truth.csv"):
        assert (data / name).read_bytes() == \
            (tmp_path / "data_again" / name).read_bytes(), (
                f"simulate wrote different {name} on the second run"
            )

    config = tmp_path / "run.ini"
    config.write_text(
        "[run]\n"
        f"ads = {data / 'ads.csv'}\n"
        f"totals = {data / 'totals.csv'}\n"
        "replicates = 6\n"
        "seed = 19\n"
    )
    roots = []
    for tag, workers in (("a", 1), ("b", 3)):
        base = tmp_path / tag
        rc = main(["estimate", "--config", str(config),
                   "--workers", str(workers), "--output", str(base / "est")])
        assert rc == 0
        rc = main(["bootstrap", "--config", str(config),
                   "--workers", str(workers), "--dump-draws",
                   "--output", str(base / "boot")])
        assert rc == 0
        roots.append(base)

    first, second = roots
    names = sorted(p.relative_to(first) for p in first.rglob("*")
                   if p.is_file())
    assert any(n.parts[0] == "boot" for n in names)
    assert any(n.parts[0] == "est" for n in names)
    other = sorted(p.relative_to(second) for p in second.rglob("*")
                   if p.is_file())
    assert names == other
    for rel in names:
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), (
            f"{rel} differs between worker counts"
        )
