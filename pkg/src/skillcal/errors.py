"""Exception types shared across the package.

Every error raised on purpose by this package derives from
:class:`SkillcalError`, so callers can catch one base class at pipeline
boundaries (the bootstrap loop relies on this to implement its
drop-and-count policy for failed replicates).
"""


class SkillcalError(Exception):
    """Base class for all errors raised by this package."""


# ---------------------------------------------------------------------------
# data loading / validation

class MissingColumn(SkillcalError):
    """A required column is absent from an input file."""


class BadSkillValue(SkillcalError):
    """A skill cell holds something other than 0 or 1."""


class EmptyFile(SkillcalError):
    """An input file contains a header but no data rows."""


class NegativeTotal(SkillcalError):
    """A population total is negative or zero where it must be positive."""


class InconsistentMargins(SkillcalError):
    """Marginal totals do not add up to the grand total (or cross rows
    do not add up to their marginal) within tolerance."""


class MissingGrandTotal(SkillcalError):
    """A totals file carries no grand-total row for a wave."""


class NoDonorAvailable(SkillcalError):
    """A wave has no fully observed record to serve as imputation donor."""


# ---------------------------------------------------------------------------
# design matrices and totals alignment

class UnknownCovariate(SkillcalError):
    """A covariate name is not one of the sample's covariates."""


class UnknownCategory(SkillcalError):
    """A category value is absent from the frozen category dictionary."""


class MissingCellTotal(SkillcalError):
    """The totals table has no entry for a requested design column."""


class MissingCrossTotals(SkillcalError):
    """A cross-classified cell table is required but not present."""


# ---------------------------------------------------------------------------
# numerical solvers

class RankDeficient(SkillcalError):
    """The calibration constraint matrix is numerically rank deficient."""


class DimensionMismatch(SkillcalError):
    """Vector/matrix shapes passed to a solver do not agree."""


class SeparationDetected(SkillcalError):
    """A logistic fit diverged (some coefficient left the +-30 band)."""


class NonConvergence(SkillcalError):
    """An iterative solver hit its iteration budget before converging."""


class ColumnMismatch(SkillcalError):
    """A fitted model and a design matrix disagree on column layout."""


class UncoveredCell(SkillcalError):
    """A totals cell cannot be scored by the fitted model."""


# ---------------------------------------------------------------------------
# metrics

class OneClassOnly(SkillcalError):
    """AUC is undefined: the outcome vector holds a single class."""


class DegenerateTable(SkillcalError):
    """A contingency table has an empty margin, so the statistic is
    undefined."""


# ---------------------------------------------------------------------------
# bootstrap / pipeline

class MissingRelSE(SkillcalError):
    """A perturbed total needs a relative standard error that is absent."""


class TooManyReplicateFailures(SkillcalError):
    """More than the tolerated share of bootstrap replicates failed."""


class InfeasibleDesign(SkillcalError):
    """A synthetic design asks for an impossible configuration."""


class ConfigError(SkillcalError):
    """A run configuration file is malformed or incomplete."""
