"""Synthetic vacancy populations with a known ground truth.

A design file (INI) pins down a finite population per wave: covariate
composition, per-skill logistic outcome models, and a selection bias
over occupations for the online sample.  ``generate`` realizes one
population + sample draw from a seed and returns the sample, the totals
tables a statistical office would publish for it, and the realized
prevalences to score estimators against.

Covariates are drawn independently in the population; the outcome
model is logit p = intercept + occupation effect (+ nace effect), so
occupation carries the signal and selection on occupation is exactly
the bias the calibrated estimators are supposed to remove.  Sampling
is multinomial over cells with probability proportional to cell count
times the occupation's selection odds (a with-replacement stand-in for
Poisson selection; fine at these sampling fractions).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from .data import AdRecord, AdSample, TotalsTable
from .errors import ConfigError


def _expit(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class SyntheticDesign:
    """Immutable generator parameters; see the module docstring."""

    waves: tuple[int, ...]
    population_sizes: dict[int, int]
    sample_sizes: dict[int, int]
    occupation_categories: tuple[str, ...]
    occupation_shares: np.ndarray
    selection_logits: np.ndarray
    nace_categories: tuple[str, ...]
    nace_shares: np.ndarray
    province_categories: tuple[str, ...]
    province_shares: np.ndarray
    skills: tuple[str, ...]
    skill_intercepts: np.ndarray
    occupation_effects: np.ndarray  # skills x occupation categories
    nace_effects: np.ndarray | None  # skills x nace categories, optional
    rel_se: dict[int, dict[str, float]]  # wave -> {category or "total": pct}
    missing_rates: dict[str, float]
    noisy_totals: bool = False

    def validate(self) -> None:
        for wave in self.waves:
            if wave not in self.population_sizes or wave not in self.sample_sizes:
                raise ConfigError(f"wave {wave} missing a population or sample size")
            if self.sample_sizes[wave] <= 0 or self.population_sizes[wave] <= 0:
                raise ConfigError(f"wave {wave} sizes must be positive")
        for name, cats, shares in (
            ("occupation", self.occupation_categories, self.occupation_shares),
            ("nace", self.nace_categories, self.nace_shares),
            ("province", self.province_categories, self.province_shares),
        ):
            if len(cats) != len(shares):
                raise ConfigError(f"{name}: {len(cats)} categories, {len(shares)} shares")
            if np.any(shares <= 0):
                raise ConfigError(f"{name} shares must be positive")
        if len(self.selection_logits) != len(self.occupation_categories):
            raise ConfigError("selection_logits length must match occupation categories")
        k, p = self.occupation_effects.shape
        if k != len(self.skills) or p != len(self.occupation_categories):
            raise ConfigError("occupation_effects shape must be skills x occupations")
        if self.nace_effects is not None:
            k, p = self.nace_effects.shape
            if k != len(self.skills) or p != len(self.nace_categories):
                raise ConfigError("nace_effects shape must be skills x nace categories")
        if len(self.skill_intercepts) != len(self.skills):
            raise ConfigError("one intercept per skill required")
        for cov in self.missing_rates:
            if cov not in ("occupation", "nace", "province"):
                raise ConfigError(f"unknown covariate in missingness: {cov}")


@dataclass(frozen=True)
class GroundTruth:
    """Realized population prevalences, the target of estimation."""

    by_wave: dict[tuple[int, str], float]  # (wave, skill) -> prevalence
    population_sizes: dict[int, int]

    def pooled(self, skill: str) -> float:
        num = sum(
            self.by_wave[(w, skill)] * n for w, n in self.population_sizes.items()
        )
        return num / sum(self.population_sizes.values())


@dataclass(frozen=True)
class SimulatedRun:
    sample: AdSample
    totals: dict[int, TotalsTable]
    truth: GroundTruth


def _cell_probabilities(design: SyntheticDesign) -> np.ndarray:
    occ = design.occupation_shares / design.occupation_shares.sum()
    nace = design.nace_shares / design.nace_shares.sum()
    prov = design.province_shares / design.province_shares.sum()
    return np.einsum("i,j,k->ijk", occ, nace, prov).ravel()


def _skill_cell_probs(design: SyntheticDesign) -> np.ndarray:
    """Per-skill success probability for every (occ, nace, province) cell."""
    n_occ = len(design.occupation_categories)
    n_nace = len(design.nace_categories)
    n_prov = len(design.province_categories)
    logits = (
        design.skill_intercepts[:, None, None]
        + design.occupation_effects[:, :, None]
    )
    if design.nace_effects is not None:
        logits = logits + design.nace_effects[:, None, :]
    else:
        logits = np.broadcast_to(logits, (len(design.skills), n_occ, n_nace)).copy()
    probs = _expit(logits)
    full = np.repeat(probs[:, :, :, None], n_prov, axis=3)
    return full.reshape(len(design.skills), n_occ * n_nace * n_prov)


def generate(design: SyntheticDesign, seed: int) -> SimulatedRun:
    """Realize one population and online sample from the design.

    Same (design, seed) always yields the same run.  Totals tables are
    exact counts from the realized population unless ``noisy_totals``
    is set, in which case the published nace figures get one dose of
    relative-SE noise (cross rows rescaled so additivity still holds).
    """
    design.validate()
    rng = np.random.default_rng(np.random.SeedSequence((int(seed),)))
    n_occ = len(design.occupation_categories)
    n_nace = len(design.nace_categories)
    n_prov = len(design.province_categories)
    cell_p = _cell_probabilities(design)
    skill_p = _skill_cell_probs(design)
    sel_odds = np.exp(design.selection_logits)

    records: list[AdRecord] = []
    totals: dict[int, TotalsTable] = {}
    truth: dict[tuple[int, str], float] = {}

    for wave in sorted(design.waves):
        big_n = design.population_sizes[wave]
        n = design.sample_sizes[wave]

        pop_counts = rng.multinomial(big_n, cell_p)
        successes = rng.binomial(pop_counts[None, :], skill_p)
        for s_idx, skill in enumerate(design.skills):
            truth[(wave, skill)] = successes[s_idx].sum() / big_n

        cube = pop_counts.reshape(n_occ, n_nace, n_prov)
        occ_marg = cube.sum(axis=(1, 2))
        nace_marg = cube.sum(axis=(0, 2))
        prov_marg = cube.sum(axis=(0, 1))
        cross = cube.sum(axis=2)  # occ x nace counts
        rel = design.rel_se.get(wave, {})
        table = TotalsTable(
            wave=wave,
            grand_total=float(big_n),
            marginals={
                "occupation": {
                    c: float(v)
                    for c, v in zip(design.occupation_categories, occ_marg)
                    if v > 0
                },
                "nace": {
                    c: float(v)
                    for c, v in zip(design.nace_categories, nace_marg)
                    if v > 0
                },
                "province": {
                    c: float(v)
                    for c, v in zip(design.province_categories, prov_marg)
                    if v > 0
                },
            },
            cross={
                (nc, oc): float(cross[i, j])
                for i, oc in enumerate(design.occupation_categories)
                for j, nc in enumerate(design.nace_categories)
                if cross[i, j] > 0
            },
            rel_se={
                ("nace", cat): pct
                for cat, pct in rel.items()
                if cat != "total"
            }
            | ({("total", ""): rel["total"]} if "total" in rel else {}),
        )
        if design.noisy_totals:
            from .bootstrap import perturb_totals

            table, _ = perturb_totals(table, rng)
        table.validate()
        totals[wave] = table

        # Biased selection: occupation drives both the outcome and the
        # odds of a vacancy being posted online.
        sel_cell = np.repeat(sel_odds, n_nace * n_prov)
        q = pop_counts * sel_cell
        occupied = q > 0
        q = q / q.sum()
        samp_counts = rng.multinomial(n, q)
        assert samp_counts[~occupied].sum() == 0

        cell_ids = np.repeat(np.arange(cell_p.size), samp_counts)
        occ_ids = cell_ids // (n_nace * n_prov)
        nace_ids = (cell_ids // n_prov) % n_nace
        prov_ids = cell_ids % n_prov
        skills = (
            rng.random((n, len(design.skills)))
            < skill_p[:, cell_ids].T
        ).astype(np.int8)

        miss = {
            cov: rng.random(n) < rate
            for cov, rate in design.missing_rates.items()
            if rate > 0
        }
        occ_cats = design.occupation_categories
        nace_cats = design.nace_categories
        prov_cats = design.province_categories
        m_occ = miss.get("occupation")
        m_nace = miss.get("nace")
        m_prov = miss.get("province")
        for i in range(n):
            records.append(
                AdRecord(
                    wave=wave,
                    occupation=None if m_occ is not None and m_occ[i]
                    else occ_cats[occ_ids[i]],
                    nace=None if m_nace is not None and m_nace[i]
                    else nace_cats[nace_ids[i]],
                    province=None if m_prov is not None and m_prov[i]
                    else prov_cats[prov_ids[i]],
                    skills=tuple(int(v) for v in skills[i]),
                )
            )

    sample = AdSample(tuple(records), skill_names=design.skills)
    return SimulatedRun(
        sample=sample,
        totals=totals,
        truth=GroundTruth(truth, dict(design.population_sizes)),
    )


# ---------------------------------------------------------------------------
# design file IO


def _floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split()], dtype=float)


def load_design(path) -> SyntheticDesign:
    """Parse an INI design file; see ``save_design`` for the layout."""
    cp = configparser.ConfigParser()
    read = cp.read(str(path))
    if not read:
        raise ConfigError(f"cannot read design file {path}")
    try:
        pop = cp["population"]
        waves = tuple(int(t) for t in pop["waves"].split())
        pop_sizes = dict(zip(waves, (int(t) for t in pop["population_sizes"].split())))
        samp_sizes = dict(zip(waves, (int(t) for t in pop["sample_sizes"].split())))
        occ = cp["occupation"]
        occ_cats = tuple(occ["categories"].split())
        nace = cp["nace"]
        nace_cats = tuple(nace["categories"].split())
        prov = cp["province"]
        skills = tuple(cp["skills"]["names"].split())
        intercepts = []
        occ_eff = []
        nace_eff = []
        for s in skills:
            sec = cp[f"skill:{s}"]
            intercepts.append(float(sec["intercept"]))
            occ_eff.append(_floats(sec["occupation"]))
            if "nace" in sec:
                nace_eff.append(_floats(sec["nace"]))
        if nace_eff and len(nace_eff) != len(skills):
            raise ConfigError("either all skills or none carry nace effects")
        rel_se: dict[int, dict[str, float]] = {}
        if cp.has_section("rel_se"):
            for key, val in cp["rel_se"].items():
                entries = {}
                for tok in val.split():
                    cat, _, pct = tok.partition(":")
                    entries[cat] = float(pct)
                rel_se[int(key)] = entries
        missing = {}
        if cp.has_section("missingness"):
            missing = {k: float(v) for k, v in cp["missingness"].items()}
        design = SyntheticDesign(
            waves=waves,
            population_sizes=pop_sizes,
            sample_sizes=samp_sizes,
            occupation_categories=occ_cats,
            occupation_shares=_floats(occ["population_shares"]),
            selection_logits=_floats(occ["selection_logits"]),
            nace_categories=nace_cats,
            nace_shares=_floats(nace["population_shares"]),
            province_categories=tuple(prov["categories"].split()),
            province_shares=_floats(prov["population_shares"]),
            skills=skills,
            skill_intercepts=np.array(intercepts),
            occupation_effects=np.vstack(occ_eff),
            nace_effects=np.vstack(nace_eff) if nace_eff else None,
            rel_se=rel_se,
            missing_rates=missing,
            noisy_totals=pop.getboolean("noisy_totals", fallback=False),
        )
    except KeyError as exc:
        raise ConfigError(f"design file {path} is missing {exc}") from exc
    design.validate()
    return design


def save_design(design: SyntheticDesign, path) -> None:
    """Write the INI form read back by ``load_design``."""
    cp = configparser.ConfigParser()
    cp["population"] = {
        "waves": " ".join(str(w) for w in design.waves),
        "population_sizes": " ".join(
            str(design.population_sizes[w]) for w in design.waves
        ),
        "sample_sizes": " ".join(str(design.sample_sizes[w]) for w in design.waves),
        "noisy_totals": str(design.noisy_totals).lower(),
    }
    def row(values) -> str:
        # repr of builtin floats round-trips exactly
        return " ".join(repr(float(v)) for v in values)

    cp["occupation"] = {
        "categories": " ".join(design.occupation_categories),
        "population_shares": row(design.occupation_shares),
        "selection_logits": row(design.selection_logits),
    }
    cp["nace"] = {
        "categories": " ".join(design.nace_categories),
        "population_shares": row(design.nace_shares),
    }
    cp["province"] = {
        "categories": " ".join(design.province_categories),
        "population_shares": row(design.province_shares),
    }
    cp["skills"] = {"names": " ".join(design.skills)}
    for i, s in enumerate(design.skills):
        sec = {
            "intercept": repr(float(design.skill_intercepts[i])),
            "occupation": row(design.occupation_effects[i]),
        }
        if design.nace_effects is not None:
            sec["nace"] = row(design.nace_effects[i])
        cp[f"skill:{s}"] = sec
    if design.rel_se:
        cp["rel_se"] = {
            str(w): " ".join(f"{c}:{float(v)!r}" for c, v in entries.items())
            for w, entries in design.rel_se.items()
        }
    if design.missing_rates:
        cp["missingness"] = {
            k: repr(float(v)) for k, v in design.missing_rates.items()
        }
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)
