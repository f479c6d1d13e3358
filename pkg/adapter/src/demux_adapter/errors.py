"""Adapter failure modes."""


class AdapterError(Exception):
    pass


class ModelLoadFailure(AdapterError):
    pass


class AlignmentUnavailable(AdapterError):
    """The tokenizer cannot report word boundaries for token-level tasks."""


class MismatchBeyondTolerance(AdapterError):
    """Adapter-pooled and engine-pooled representations disagree."""
