"""Exception hierarchy for the selection engine.

Everything raised on bad data or bad state derives from DemuxError so the
CLI can map engine failures to a single exit code. Usage errors (bad flags)
are handled separately by the CLI layer.
"""

from __future__ import annotations


class DemuxError(Exception):
    """Base class for all engine errors."""


class InvariantViolation(DemuxError):
    """A dataset, example or payload broke a structural rule.

    Carries the rule name and, when known, the offending example id so
    validation reports can point at the exact record.
    """

    def __init__(self, rule: str, detail: str = "", example_id: str | None = None):
        self.rule = rule
        self.example_id = example_id
        where = f" (example {example_id!r})" if example_id is not None else ""
        msg = f"invariant {rule!r} violated{where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class FormatError(DemuxError):
    """On-disk container is malformed."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedTensorError(FormatError):
    pass


class ParseError(FormatError):
    pass


class EmptyInputError(DemuxError):
    """An operation received an empty pool, sequence or training set."""


class DimensionMismatchError(DemuxError):
    pass


class ScorerTaskMismatchError(DemuxError):
    pass


class UnknownLanguageError(DemuxError):
    pass


class InsufficientLanguagePoolError(DemuxError):
    """A per-language quota cannot be met by the eligible pool."""


class BudgetExhaustedError(DemuxError):
    pass


class ProviderError(DemuxError):
    """The round provider failed to hand over a usable dataset."""


class ConstantVectorError(DemuxError):
    """Correlation undefined because one side has zero variance."""


class DegenerateCovarianceError(DemuxError):
    pass
