"""Job-ad records, population totals, and file I/O.

The sample side of the pipeline is a flat table of ads: one row per ad
with a survey wave, three categorical covariates (occupation, nace,
province) and a block of binary skill indicators.  The population side
is a table of published totals per wave: a grand total, marginal totals
per covariate, and optionally a nace x occupation cross table with
relative standard errors attached to whatever the publisher reports.

Covariates may be missing on individual ads (empty string in CSV).
Skill indicators may not: anything but 0/1 in a skill column is a hard
error, because a silent recode would move prevalence estimates.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadSkillValue,
    EmptyFile,
    InconsistentMargins,
    MissingColumn,
    MissingGrandTotal,
    NegativeTotal,
    NoDonorAvailable,
    UnknownCategory,
    UnknownCovariate,
)

#: Covariates every ad row carries, in canonical order.
COVARIATES = ("occupation", "nace", "province")

#: Key under which a cross-classified total is filed in a totals CSV.
CROSS_KEY = "nace:occupation"

#: rel_se dictionary key for the grand total.
GRAND_KEY = ("total", "")

_MARGIN_RTOL = 1e-6


@dataclass(frozen=True, slots=True)
class AdRecord:
    """One job ad: wave, categorical covariates, binary skills.

    A covariate of ``None`` means "not stated in the ad".  Skills are
    always observed.
    """

    wave: int
    occupation: str | None
    nace: str | None
    province: str | None
    skills: tuple[int, ...]

    def covariate(self, name: str) -> str | None:
        if name not in COVARIATES:
            raise UnknownCovariate(name)
        return getattr(self, name)

    @property
    def is_complete(self) -> bool:
        return (
            self.occupation is not None
            and self.nace is not None
            and self.province is not None
        )


class AdSample:
    """An immutable collection of :class:`AdRecord` with frozen category
    dictionaries.

    Parameters
    ----------
    records : sequence of AdRecord
        The ads.  All records must agree on the number of skills.
    skill_names : sequence of str
        Column names of the skill block, in record order.
    dictionaries : dict, optional
        Mapping covariate -> ordered tuple of category codes.  When
        omitted, dictionaries are built from the observed data (sorted
        category codes).  Once built they are frozen: methods that meet
        a category outside the dictionary raise instead of extending it.

    Notes
    -----
    The container is read-only after construction and safe to share
    between bootstrap replicates.  Derived numpy arrays (integer
    category codes, the skill matrix) are built lazily and cached, and
    subsets created through :meth:`take` reuse them, which keeps
    resampling cheap.
    """

    def __init__(self, records, skill_names, dictionaries=None):
        self.records: tuple[AdRecord, ...] = tuple(records)
        self.skill_names: tuple[str, ...] = tuple(skill_names)
        k = len(self.skill_names)
        for r in self.records:
            if len(r.skills) != k:
                raise BadSkillValue(
                    f"record has {len(r.skills)} skills, expected {k}"
                )
        if dictionaries is None:
            dictionaries = {
                cov: tuple(
                    sorted(
                        {
                            r.covariate(cov)
                            for r in self.records
                            if r.covariate(cov) is not None
                        }
                    )
                )
                for cov in COVARIATES
            }
        else:
            dictionaries = {
                cov: tuple(cats) for cov, cats in dictionaries.items()
            }
            for cov in COVARIATES:
                if cov not in dictionaries:
                    raise UnknownCovariate(f"no dictionary for {cov!r}")
                known = set(dictionaries[cov])
                for r in self.records:
                    v = r.covariate(cov)
                    if v is not None and v not in known:
                        raise UnknownCategory(f"{cov}={v!r}")
        self.dictionaries: dict[str, tuple[str, ...]] = dictionaries
        self._codes: dict[str, np.ndarray] = {}
        self._skills: np.ndarray | None = None
        self._waves: np.ndarray | None = None

    # -- basic shape ----------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.records)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def waves(self) -> tuple[int, ...]:
        return tuple(sorted({r.wave for r in self.records}))

    def wave_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for r in self.records:
            out[r.wave] = out.get(r.wave, 0) + 1
        return out

    # -- cached array views ---------------------------------------------

    def wave_array(self) -> np.ndarray:
        if self._waves is None:
            self._waves = np.array([r.wave for r in self.records], dtype=np.int64)
        return self._waves

    def wave_indices(self, wave: int) -> np.ndarray:
        return np.flatnonzero(self.wave_array() == wave)

    def covariate_codes(self, covariate: str) -> np.ndarray:
        """Integer dictionary codes per record; missing encodes as -1."""
        if covariate not in COVARIATES:
            raise UnknownCovariate(covariate)
        if covariate not in self._codes:
            lookup = {c: i for i, c in enumerate(self.dictionaries[covariate])}
            codes = np.empty(self.n, dtype=np.int64)
            for i, r in enumerate(self.records):
                v = r.covariate(covariate)
                if v is None:
                    codes[i] = -1
                else:
                    try:
                        codes[i] = lookup[v]
                    except KeyError:
                        raise UnknownCategory(f"{covariate}={v!r}") from None
            self._codes[covariate] = codes
        return self._codes[covariate]

    def skill_matrix(self) -> np.ndarray:
        """n x n_skills array of 0/1, columns in ``skill_names`` order."""
        if self._skills is None:
            self._skills = np.array(
                [r.skills for r in self.records], dtype=np.int8
            ).reshape(self.n, len(self.skill_names))
        return self._skills

    def skill_column(self, skill: str) -> np.ndarray:
        try:
            j = self.skill_names.index(skill)
        except ValueError:
            raise MissingColumn(f"unknown skill {skill!r}") from None
        return self.skill_matrix()[:, j].astype(np.float64)

    @property
    def has_missing(self) -> bool:
        return any(not r.is_complete for r in self.records)

    # -- subsetting ------------------------------------------------------

    def take(self, indices) -> "AdSample":
        """Row subset (with repeats allowed) sharing the dictionaries.

        Cached arrays are subset by fancy indexing rather than rebuilt,
        so bootstrap resampling does not pay the record-parsing cost
        again.
        """
        idx = np.asarray(indices, dtype=np.int64)
        out = AdSample.__new__(AdSample)
        out.records = tuple(self.records[i] for i in idx)
        out.skill_names = self.skill_names
        out.dictionaries = self.dictionaries
        out._codes = {
            cov: codes[idx] for cov, codes in self._codes.items()
        }
        out._skills = None if self._skills is None else self._skills[idx]
        out._waves = None if self._waves is None else self._waves[idx]
        return out


# ---------------------------------------------------------------------------
# ads CSV


def load_ads(path) -> AdSample:
    """Read an ads CSV (UTF-8, comma separated, header row).

    Expected columns: ``wave``, ``occupation``, ``nace``, ``province``,
    then one column per skill.  An empty covariate cell means missing;
    a skill cell must be exactly ``0`` or ``1``.

    Raises
    ------
    MissingColumn
        A fixed column is absent from the header.
    EmptyFile
        The file has a header but no rows.
    BadSkillValue
        A skill cell is not 0/1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(str(path)) from None
        for col in ("wave",) + COVARIATES:
            if col not in header:
                raise MissingColumn(f"{col!r} missing from {path}")
        positions = {name: header.index(name) for name in ("wave",) + COVARIATES}
        fixed = set(positions.values())
        skill_cols = [(j, name) for j, name in enumerate(header) if j not in fixed]
        if not skill_cols:
            raise MissingColumn(f"no skill columns in {path}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                wave = int(row[positions["wave"]])
            except ValueError:
                raise BadSkillValue(
                    f"{path}:{lineno}: wave {row[positions['wave']]!r} is not an integer"
                ) from None
            covs = {}
            for cov in COVARIATES:
                raw = row[positions[cov]].strip()
                covs[cov] = raw if raw else None
            skills = []
            for j, name in skill_cols:
                raw = row[j].strip()
                if raw == "0":
                    skills.append(0)
                elif raw == "1":
                    skills.append(1)
                else:
                    raise BadSkillValue(
                        f"{path}:{lineno}: column {name!r} holds {raw!r}, expected 0 or 1"
                    )
            records.append(AdRecord(wave=wave, skills=tuple(skills), **covs))
    if not records:
        raise EmptyFile(str(path))
    return AdSample(records, [name for _, name in skill_cols])


def save_ads(sample: AdSample, path) -> None:
    """Write an :class:`AdSample` in the same CSV layout ``load_ads`` reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wave", *COVARIATES, *sample.skill_names])
        for r in sample.records:
            writer.writerow(
                [
                    r.wave,
                    r.occupation or "",
                    r.nace or "",
                    r.province or "",
                    *r.skills,
                ]
            )


# ---------------------------------------------------------------------------
# totals


@dataclass
class TotalsTable:
    """Published population totals for a single wave.

    Attributes
    ----------
    wave : int
    grand_total : float
        Total number of vacancies in the wave.  Always positive.
    marginals : dict
        covariate -> {category: total}.
    cross : dict
        (nace category, occupation category) -> total.  May be empty
        when the publisher releases no cross table.
    rel_se : dict
        (covariate, category) -> relative standard error in percent.
        The grand total files under ``("total", "")``.
    """

    wave: int
    grand_total: float
    marginals: dict[str, dict[str, float]] = field(default_factory=dict)
    cross: dict[tuple[str, str], float] = field(default_factory=dict)
    rel_se: dict[tuple[str, str], float] = field(default_factory=dict)

    def validate(self) -> "TotalsTable":
        """Check positivity and additivity; return self on success.

        Raises
        ------
        NegativeTotal
            Any retained total is <= 0.
        InconsistentMargins
            A covariate's marginals do not sum to the grand total, or a
            cross-table row does not sum to its nace marginal, within
            relative tolerance 1e-6.
        """
        if not self.grand_total > 0:
            raise NegativeTotal(f"wave {self.wave}: grand total {self.grand_total}")
        for cov, cells in self.marginals.items():
            for cat, tot in cells.items():
                if not tot > 0:
                    raise NegativeTotal(f"wave {self.wave}: {cov}={cat}: {tot}")
            s = sum(cells.values())
            if abs(s - self.grand_total) > _MARGIN_RTOL * abs(self.grand_total):
                raise InconsistentMargins(
                    f"wave {self.wave}: {cov} marginals sum to {s}, "
                    f"grand total is {self.grand_total}"
                )
        for (nace, occ), tot in self.cross.items():
            if not tot > 0:
                raise NegativeTotal(f"wave {self.wave}: cross ({nace},{occ}): {tot}")
        if self.cross:
            by_nace: dict[str, float] = {}
            for (nace, _), tot in self.cross.items():
                by_nace[nace] = by_nace.get(nace, 0.0) + tot
            nace_marg = self.marginals.get("nace", {})
            for nace, s in by_nace.items():
                if nace not in nace_marg:
                    raise InconsistentMargins(
                        f"wave {self.wave}: cross table row {nace!r} has no marginal"
                    )
                m = nace_marg[nace]
                if abs(s - m) > _MARGIN_RTOL * abs(m):
                    raise InconsistentMargins(
                        f"wave {self.wave}: cross row {nace!r} sums to {s}, "
                        f"marginal is {m}"
                    )
        return self

    def occupation_from_cross(self) -> dict[str, float]:
        """Occupation marginals implied by the cross table (column sums)."""
        out: dict[str, float] = {}
        for (_, occ), tot in self.cross.items():
            out[occ] = out.get(occ, 0.0) + tot
        return out


_TOTALS_COLUMNS = ("wave", "covariate", "category_a", "category_b", "total")


def load_totals_by_wave(path) -> dict[int, TotalsTable]:
    """Read a long-format totals CSV into one validated table per wave.

    Columns: ``wave, covariate, category_a, category_b, total`` and an
    optional ``rel_se_pct``.  ``covariate`` is ``total`` for the grand
    total (both categories empty), a covariate name for a marginal
    (``category_b`` empty), or ``nace:occupation`` for a cross cell.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(str(path)) from None
        for col in _TOTALS_COLUMNS:
            if col not in header:
                raise MissingColumn(f"{col!r} missing from {path}")
        pos = {name: header.index(name) for name in _TOTALS_COLUMNS}
        se_pos = header.index("rel_se_pct") if "rel_se_pct" in header else None

        grand: dict[int, float] = {}
        marginals: dict[int, dict[str, dict[str, float]]] = {}
        cross: dict[int, dict[tuple[str, str], float]] = {}
        rel_se: dict[int, dict[tuple[str, str], float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            wave = int(row[pos["wave"]])
            covariate = row[pos["covariate"]].strip()
            cat_a = row[pos["category_a"]].strip()
            cat_b = row[pos["category_b"]].strip()
            total = float(row[pos["total"]])
            se = None
            if se_pos is not None and se_pos < len(row) and row[se_pos].strip():
                se = float(row[se_pos])
            rel_se.setdefault(wave, {})
            if covariate == "total":
                grand[wave] = total
                if se is not None:
                    rel_se[wave][GRAND_KEY] = se
            elif covariate == CROSS_KEY:
                if not cat_a or not cat_b:
                    raise MissingColumn(
                        f"{path}:{lineno}: cross rows need both categories"
                    )
                cross.setdefault(wave, {})[(cat_a, cat_b)] = total
            elif covariate in COVARIATES:
                if not cat_a:
                    raise MissingColumn(
                        f"{path}:{lineno}: marginal rows need category_a"
                    )
                marginals.setdefault(wave, {}).setdefault(covariate, {})[cat_a] = total
                if se is not None:
                    rel_se[wave][(covariate, cat_a)] = se
            else:
                raise UnknownCovariate(f"{path}:{lineno}: {covariate!r}")

    waves = sorted(set(grand) | set(marginals) | set(cross))
    if not waves:
        raise EmptyFile(str(path))
    out: dict[int, TotalsTable] = {}
    for wave in waves:
        if wave not in grand:
            raise MissingGrandTotal(f"wave {wave} in {path}")
        out[wave] = TotalsTable(
            wave=wave,
            grand_total=grand[wave],
            marginals=marginals.get(wave, {}),
            cross=cross.get(wave, {}),
            rel_se=rel_se.get(wave, {}),
        ).validate()
    return out


def load_totals(path, wave: int | None = None) -> TotalsTable:
    """Read a totals CSV holding a single wave (or pick ``wave``)."""
    tables = load_totals_by_wave(path)
    if wave is not None:
        if wave not in tables:
            raise MissingGrandTotal(f"wave {wave} not in {path}")
        return tables[wave]
    if len(tables) != 1:
        raise MissingGrandTotal(
            f"{path} holds waves {sorted(tables)}; pass wave= to pick one"
        )
    return next(iter(tables.values()))


def _fmt(x: float) -> str:
    # integers stay integers in the file; floats round-trip via repr
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def save_totals(tables, path) -> None:
    """Write one or more :class:`TotalsTable` in load_totals layout.

    Row order is deterministic: wave, then grand total, marginals per
    covariate in canonical order, then cross cells sorted by category.
    """
    if isinstance(tables, TotalsTable):
        tables = [tables]
    else:
        tables = list(tables)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*_TOTALS_COLUMNS, "rel_se_pct"])

        def se_cell(t: TotalsTable, key) -> str:
            return _fmt(t.rel_se[key]) if key in t.rel_se else ""

        for t in sorted(tables, key=lambda t: t.wave):
            writer.writerow(
                [t.wave, "total", "", "", _fmt(t.grand_total), se_cell(t, GRAND_KEY)]
            )
            for cov in COVARIATES:
                for cat in sorted(t.marginals.get(cov, {})):
                    writer.writerow(
                        [
                            t.wave,
                            cov,
                            cat,
                            "",
                            _fmt(t.marginals[cov][cat]),
                            se_cell(t, (cov, cat)),
                        ]
                    )
            for nace, occ in sorted(t.cross):
                writer.writerow(
                    [t.wave, CROSS_KEY, nace, occ, _fmt(t.cross[(nace, occ)]), ""]
                )


# ---------------------------------------------------------------------------
# hot-deck imputation


def impute_gower_1nn(sample: AdSample) -> AdSample:
    """Fill missing covariates from the single nearest complete donor.

    Distance is the Gower distance with uniform column weights over the
    receiver's observed covariates plus all skill indicators; every
    column is categorical (mismatch contributes 1).  Donors are fully
    observed records from the same wave.  Ties break on the lowest
    donor row index, so the result is deterministic.  A sample without
    missing covariates is returned unchanged (same object), which makes
    the operation idempotent.

    Raises
    ------
    NoDonorAvailable
        Some wave with a missing value has no complete record.
    """
    if not sample.has_missing:
        return sample

    codes = np.stack(
        [sample.covariate_codes(cov) for cov in COVARIATES], axis=1
    )  # n x 3, missing = -1
    skills = sample.skill_matrix().astype(np.int64)
    waves = sample.wave_array()
    new_records = list(sample.records)

    for wave in sample.waves:
        in_wave = np.flatnonzero(waves == wave)
        complete = in_wave[(codes[in_wave] >= 0).all(axis=1)]
        incomplete = in_wave[(codes[in_wave] < 0).any(axis=1)]
        if incomplete.size == 0:
            continue
        if complete.size == 0:
            raise NoDonorAvailable(f"wave {wave} has no complete record")
        donor_codes = codes[complete]
        donor_skills = skills[complete]
        for i in incomplete:
            obs = codes[i] >= 0
            mism = (donor_skills != skills[i]).sum(axis=1)
            if obs.any():
                mism = mism + (
                    (donor_codes[:, obs] != codes[i][obs]).sum(axis=1)
                )
            # denominator (obs.sum() + n_skills) is constant per receiver,
            # so the argmin over raw mismatch counts is the Gower argmin;
            # argmin takes the first hit and `complete` is sorted, which
            # realises the lowest-row-index tie break
            donor = sample.records[complete[int(np.argmin(mism))]]
            rec = sample.records[i]
            fills = {
                cov: donor.covariate(cov)
                for cov in COVARIATES
                if rec.covariate(cov) is None
            }
            new_records[i] = dataclasses.replace(rec, **fills)

    return AdSample(new_records, sample.skill_names, sample.dictionaries)
