"""Design matrices, category collapsing, and totals alignment.

Calibration needs the sample and the published totals expressed on the
same dummy basis.  Everything here is deterministic: covariates appear
in the order they were requested and categories in dictionary order, so
a column layout never depends on row order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import COVARIATES, AdSample, TotalsTable
from .errors import (
    ConfigError,
    MissingCellTotal,
    UnknownCategory,
    UnknownCovariate,
)

INTERCEPT_LABEL = ("intercept", "")


@dataclass(frozen=True)
class DesignMatrix:
    """A 0/1 design matrix with labelled columns.

    ``column_labels`` holds ``(covariate, category)`` pairs aligned with
    the columns of ``values``; an intercept column is labelled
    ``("intercept", "")``.  ``dictionaries`` is the frozen category
    dictionary of each encoded covariate (including any dropped
    baseline), which is what model prediction by cell needs later.
    """

    values: np.ndarray
    column_labels: tuple[tuple[str, str], ...]
    covariates: tuple[str, ...]
    intercept: bool
    dictionaries: dict[str, tuple[str, ...]] = field(default_factory=dict)
    reference_levels: dict[str, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TotalsVector:
    """Population totals aligned with a design matrix's columns."""

    values: np.ndarray
    column_labels: tuple[tuple[str, str], ...]


def encode(sample: AdSample, covariates, intercept: bool = False) -> DesignMatrix:
    """One-hot encode covariates for every record of ``sample``.

    Without an intercept every category of every covariate gets a
    column (the layout calibration constraints need).  With an
    intercept the first dictionary category of each covariate is
    dropped as the baseline, which keeps the matrix full rank for
    likelihood fitting.

    Raises
    ------
    UnknownCovariate
        A requested name is not a covariate.
    ValueError
        A requested covariate still has missing values (impute first).
    """
    covariates = tuple(covariates)
    for cov in covariates:
        if cov not in COVARIATES:
            raise UnknownCovariate(cov)
    n = sample.n
    columns: list[np.ndarray] = []
    labels: list[tuple[str, str]] = []
    refs: dict[str, str] = {}
    if intercept:
        columns.append(np.ones(n))
        labels.append(INTERCEPT_LABEL)
    for cov in covariates:
        codes = sample.covariate_codes(cov)
        if (codes < 0).any():
            raise ValueError(
                f"covariate {cov!r} has missing values; impute before encoding"
            )
        cats = sample.dictionaries[cov]
        start = 0
        if intercept:
            refs[cov] = cats[0]
            start = 1
        for j in range(start, len(cats)):
            columns.append((codes == j).astype(np.float64))
            labels.append((cov, cats[j]))
    values = np.column_stack(columns) if columns else np.empty((n, 0))
    return DesignMatrix(
        values=values,
        column_labels=tuple(labels),
        covariates=covariates,
        intercept=intercept,
        dictionaries={cov: sample.dictionaries[cov] for cov in covariates},
        reference_levels=refs,
    )


def totals_vector(totals: TotalsTable, matrix: DesignMatrix) -> TotalsVector:
    """Line published totals up with ``matrix``'s columns.

    The intercept column maps to the grand total; a ``(covariate,
    category)`` column maps to that category's marginal total.

    Raises
    ------
    MissingCellTotal
        The totals table lacks an entry for some column.
    """
    values = np.empty(matrix.p)
    for j, (cov, cat) in enumerate(matrix.column_labels):
        if (cov, cat) == INTERCEPT_LABEL:
            values[j] = totals.grand_total
            continue
        cells = totals.marginals.get(cov)
        if cells is None or cat not in cells:
            raise MissingCellTotal(f"wave {totals.wave}: {cov}={cat}")
        values[j] = cells[cat]
    return TotalsVector(values=values, column_labels=matrix.column_labels)


# ---------------------------------------------------------------------------
# category collapsing


@dataclass(frozen=True)
class CollapseRule:
    """Merge ``source`` into ``target`` within one covariate."""

    covariate: str
    source: str
    target: str


def parse_collapse_map(text: str) -> tuple[CollapseRule, ...]:
    """Parse collapse rules, one per line: ``covariate: from -> to``.

    Blank lines and ``#`` comments are ignored.
    """
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, tail = line.partition(":")
        src, arrow, dst = tail.partition("->")
        if not sep or not arrow or not head.strip() or not src.strip() or not dst.strip():
            raise ConfigError(
                f"collapse map line {lineno}: {raw!r} "
                "(expected 'covariate: from -> to')"
            )
        cov = head.strip()
        if cov not in COVARIATES:
            raise UnknownCovariate(f"collapse map line {lineno}: {cov!r}")
        rules.append(CollapseRule(cov, src.strip(), dst.strip()))
    return tuple(rules)


def collapse_categories(
    sample: AdSample,
    totals_by_wave: dict[int, TotalsTable],
    rules,
    threshold: int = 20,
):
    """Apply collapse rules whose source category is rare in the sample.

    A rule fires when the source category's current sample count is
    below ``threshold``.  Firing recodes sample records and merges the
    category's totals (marginals and cross cells) into the target in
    every wave, so sample and totals always stay on the same dictionary.
    Rules are evaluated in order against the already-collapsed state.

    Relative standard errors of merged cells are combined as if the two
    published totals were independent; if either side lacks one, the
    merged cell has none.

    Returns
    -------
    (AdSample, dict[int, TotalsTable], tuple[CollapseRule, ...])
        Collapsed sample, collapsed totals, and the rules that fired.
    """
    records = list(sample.records)
    totals = {
        w: TotalsTable(
            wave=t.wave,
            grand_total=t.grand_total,
            marginals={cov: dict(cells) for cov, cells in t.marginals.items()},
            cross=dict(t.cross),
            rel_se=dict(t.rel_se),
        )
        for w, t in totals_by_wave.items()
    }
    dictionaries = {cov: list(cats) for cov, cats in sample.dictionaries.items()}
    applied: list[CollapseRule] = []

    for rule in rules:
        cov = rule.covariate
        if rule.source not in dictionaries[cov]:
            raise UnknownCategory(f"collapse source {cov}={rule.source!r}")
        if rule.target not in dictionaries[cov]:
            raise UnknownCategory(f"collapse target {cov}={rule.target!r}")
        count = sum(1 for r in records if r.covariate(cov) == rule.source)
        if count >= threshold:
            continue
        applied.append(rule)
        for i, r in enumerate(records):
            if r.covariate(cov) == rule.source:
                records[i] = replace(r, **{cov: rule.target})
        dictionaries[cov].remove(rule.source)
        for t in totals.values():
            cells = t.marginals.get(cov, {})
            if rule.source in cells:
                src_tot = cells.pop(rule.source)
                dst_tot = cells.get(rule.target, 0.0)
                cells[rule.target] = dst_tot + src_tot
                src_se = t.rel_se.pop((cov, rule.source), None)
                dst_se = t.rel_se.pop((cov, rule.target), None)
                if src_se is not None and dst_se is not None and dst_tot > 0:
                    sd = np.hypot(src_se / 100.0 * src_tot, dst_se / 100.0 * dst_tot)
                    t.rel_se[(cov, rule.target)] = 100.0 * sd / cells[rule.target]
            if cov in ("nace", "occupation") and t.cross:
                pos = 0 if cov == "nace" else 1
                merged: dict[tuple[str, str], float] = {}
                for key, tot in t.cross.items():
                    if key[pos] == rule.source:
                        key = (
                            (rule.target, key[1]) if pos == 0 else (key[0], rule.target)
                        )
                    merged[key] = merged.get(key, 0.0) + tot
                t.cross = merged

    collapsed = AdSample(
        records,
        sample.skill_names,
        {cov: tuple(cats) for cov, cats in dictionaries.items()},
    )
    for t in totals.values():
        t.validate()
    return collapsed, totals, tuple(applied)
