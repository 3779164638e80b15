"""Offline solver for the bundled fixture design.

Chooses per-skill occupation effects so that the simulated ad sample
and population reproduce target sample shares, population shares and
skill-by-occupation association strengths.  Writes the resulting design
to src/skillcal/fixtures/fixture.design and prints a verification table
comparing analytic and realized values.

Run from the repository root:

    python3 scripts/fit_fixture_design.py

scipy is an offline-only dependency; the package itself never needs it.
"""

import pathlib
import sys

import numpy as np
from scipy.optimize import least_squares

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from skillcal.simulator import SyntheticDesign, generate, save_design  # noqa: E402

# Occupation structure: 2-digit code -> (population %, online %)
OCC = {
    "11": (0.49, 1.68), "12": (1.70, 2.22), "13": (1.27, 2.02), "14": (0.29, 2.78),
    "21": (4.45, 4.09), "22": (3.33, 1.47), "23": (0.91, 2.00), "24": (6.73, 14.65),
    "25": (3.94, 8.17), "26": (0.71, 0.91), "31": (1.51, 1.50), "32": (0.79, 0.58),
    "33": (4.37, 19.33), "34": (0.97, 0.53), "35": (1.73, 0.78), "41": (1.41, 1.82),
    "42": (5.20, 2.53), "43": (1.28, 1.46), "44": (2.52, 0.51), "51": (2.41, 3.10),
    "52": (8.79, 16.49), "54": (1.28, 1.16), "71": (9.53, 1.71), "72": (7.09, 2.36),
    "73": (0.72, 0.25), "74": (2.09, 1.23), "75": (5.64, 1.18), "81": (2.71, 0.35),
    "82": (2.72, 0.21), "83": (7.99, 1.67), "91": (1.35, 0.19), "93": (2.20, 0.49),
    "94": (1.26, 0.26), "96": (0.60, 0.31),
}

# skill -> (sample %, population %, association V) targets
TARGETS = {
    "Artistic": (15.8, 12.5, 0.22),
    "Availability": (20.9, 19.6, 0.15),
    "Cognitive": (20.9, 14.6, 0.21),
    "Computer": (33.0, 22.3, 0.45),
    "Interpersonal": (53.8, 35.1, 0.42),
    "Managerial": (26.2, 16.8, 0.34),
    "Mathematical": (0.4, 0.4, 0.05),
    "Office": (3.9, 3.2, 0.11),
    "Physical": (5.4, 7.5, 0.17),
    "Self-organization": (58.6, 43.9, 0.34),
    "Technical": (4.3, 7.7, 0.31),
}

NACE_SHARES = {
    "C": 20, "F": 8, "G": 18, "H": 6, "I": 3, "J": 4, "K": 4,
    "M": 5, "N": 4, "O": 7, "P": 9, "Q": 8, "R": 2, "S": 2,
}

REL_SE = {
    2011: {"total": 3.40, "C": 5.50, "F": 13.86, "G": 13.69, "H": 8.07,
           "I": 15.99, "J": 6.30, "K": 7.00, "M": 8.12, "N": 23.09,
           "O": 3.19, "P": 8.85, "Q": 5.53, "R": 7.08, "S": 18.09},
    2013: {"total": 4.01, "C": 5.27, "F": 19.21, "G": 15.75, "H": 9.93,
           "I": 20.78, "J": 7.04, "K": 8.36, "M": 8.71, "N": 12.89,
           "O": 3.50, "P": 10.65, "Q": 6.88, "R": 8.68, "S": 21.29},
    2014: {"total": 3.98, "C": 5.64, "F": 15.12, "G": 16.33, "H": 9.17,
           "I": 18.26, "J": 11.50, "K": 7.43, "M": 12.01, "N": 17.76,
           "O": 2.56, "P": 12.06, "Q": 6.00, "R": 9.28, "S": 20.77},
}

WAVES = (2011, 2013, 2014)
POP_SIZES = {2011: 71775, 2013: 42889, 2014: 52725}
SAMPLE_SIZES = {2011: 12656, 2013: 13444, 2014: 12000}

# broad white-collar/blue-collar axis by major occupation group
Z1_BY_DIGIT = {1: 1.8, 2: 1.4, 3: 0.6, 4: 0.2, 5: -0.1, 7: -1.2, 8: -1.5, 9: -1.8}

# secondary contrast: occupations with a strong specialist/online profile
Z2_GROUP = {"24", "25", "33", "13", "14"}


def expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def main():
    cats = tuple(sorted(OCC))
    pop = np.array([OCC[c][0] for c in cats])
    pop = pop / pop.sum()
    onl = np.array([OCC[c][1] for c in cats])
    onl = onl / onl.sum()
    z1 = np.array([Z1_BY_DIGIT[int(c[0])] for c in cats])
    z2 = np.array([1.0 if c in Z2_GROUP else 0.0 for c in cats])
    z2 = z2 - z2 @ onl

    skills = tuple(sorted(TARGETS))

    def residuals(theta, target):
        a, b, c = theta
        p = expit(a + b * z1 + c * z2)
        m_samp = onl @ p
        m_pop = pop @ p
        t_samp, t_pop, t_v = target
        var = onl @ (p - m_samp) ** 2
        v = np.sqrt(var / max(m_samp * (1 - m_samp), 1e-12))
        return np.array([
            (m_samp - t_samp / 100.0) * 10.0,
            (m_pop - t_pop / 100.0) * 10.0,
            v - t_v,
        ])

    rows = []
    intercepts = []
    print(f"{'skill':<18}{'samp':>7}{'pop':>7}{'V':>7}   fitted (a, b, c)")
    for name in skills:
        target = TARGETS[name]
        p0 = target[0] / 100.0
        a0 = np.log(p0 / (1 - p0)) if 0 < p0 < 1 else 0.0
        best = None
        for b0 in (0.6, 1.2, -0.8):
            for c0 in (0.0, 1.0):
                sol = least_squares(residuals, x0=[a0, b0, c0], args=(target,),
                                    xtol=1e-14, ftol=1e-14, gtol=1e-14)
                if best is None or sol.cost < best.cost:
                    best = sol
        a, b, c = best.x
        p = expit(a + b * z1 + c * z2)
        m_samp = onl @ p
        m_pop = pop @ p
        v = np.sqrt(onl @ (p - m_samp) ** 2 / (m_samp * (1 - m_samp)))
        print(f"{name:<18}{100 * m_samp:>7.2f}{100 * m_pop:>7.2f}{v:>7.3f}"
              f"   ({a:+.3f}, {b:+.3f}, {c:+.3f})  cost={best.cost:.2e}")
        intercepts.append(a)
        rows.append(b * z1 + c * z2)

    design = SyntheticDesign(
        waves=WAVES,
        population_sizes=POP_SIZES,
        sample_sizes=SAMPLE_SIZES,
        occupation_categories=cats,
        occupation_shares=pop,
        selection_logits=np.log(onl / pop),
        nace_categories=tuple(sorted(NACE_SHARES)),
        nace_shares=np.array([NACE_SHARES[c] for c in sorted(NACE_SHARES)], float),
        province_categories=tuple(f"p{i:02d}" for i in range(1, 17)),
        province_shares=np.array([14, 12, 9, 8, 8, 7, 6, 5, 5, 5, 4, 4, 4, 3, 3, 3], float),
        skills=skills,
        skill_intercepts=np.array(intercepts),
        occupation_effects=np.vstack(rows),
        nace_effects=None,
        rel_se=REL_SE,
        missing_rates={"occupation": 0.004, "nace": 0.06, "province": 0.01},
    )
    design.validate()

    out = pathlib.Path(__file__).resolve().parent.parent / "src" / "skillcal" / "fixtures"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fixture.design"
    save_design(design, path)
    print(f"\nwrote {path}")

    # realized check on one generated run
    run = generate(design, seed=20260823)
    samp = run.sample
    Y = np.array([[r.skills[i] for r in samp.records] for i in range(len(skills))], float)
    print(f"\n{'skill':<18}{'HTSRS':>8}{'truth':>8}  (targets "
          f"{'samp':>5} /{'pop':>5})")
    for i, name in enumerate(skills):
        ht = 100 * Y[i].mean()
        tr = 100 * run.truth.pooled(name)
        print(f"{name:<18}{ht:>8.2f}{tr:>8.2f}  ({TARGETS[name][0]:>5.1f} /"
              f"{TARGETS[name][1]:>5.1f})")


if __name__ == "__main__":
    main()
