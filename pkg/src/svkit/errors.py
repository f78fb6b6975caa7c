"""Exception types shared across the toolkit."""


class SvkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(SvkitError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class DimensionError(SvkitError):
    """Vector or feature dimension inconsistent within a collection."""


class ShapeError(SvkitError):
    """Operand shapes do not agree."""


class LengthError(SvkitError):
    """A frame sequence is too short for the requested operation."""


class ArgumentError(SvkitError):
    """An argument violates its documented domain."""


class ModelError(SvkitError):
    """A model parameter violates its constraints (e.g. non-PD covariance)."""


class NumericalError(SvkitError):
    """A numerical operation failed (singular matrix, non-finite values)."""


class StateError(SvkitError):
    """An object is missing state required by the requested operation."""


class MissingIdError(SvkitError):
    """A trial references an utterance id that cannot be resolved."""

    def __init__(self, ids):
        ids = list(ids)
        self.ids = ids
        shown = ", ".join(ids[:10])
        more = "" if len(ids) <= 10 else f" (+{len(ids) - 10} more)"
        super().__init__(f"unresolved utterance id(s): {shown}{more}")


class SamplerError(SvkitError):
    """A trial sampler cannot satisfy its configuration."""


class BatchCompositionError(SvkitError):
    """A training batch does not contain both target and non-target trials."""


class MetricError(SvkitError):
    """A metric was requested on a trial set missing one of the two classes."""


class OptimizerError(SvkitError):
    """The optimizer received a non-finite gradient; names the parameter."""


class ConfigError(SvkitError):
    """An experiment configuration is invalid or incomplete."""
