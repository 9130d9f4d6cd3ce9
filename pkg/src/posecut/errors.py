"""Exception types shared across the package."""


class PosecutError(Exception):
    """Base class for every error raised by this package."""


class ParseError(PosecutError):
    """Input document is not parseable at all (malformed JSON)."""


class SchemaError(PosecutError):
    """Document parsed but does not match the expected schema.

    The message names the offending field or key.
    """


class ValidationError(PosecutError):
    """A domain invariant is violated; the message names the offender."""


class MissingOffset(PosecutError):
    """A required location/pair offset is absent for a candidate."""


class MissingWeights(PosecutError):
    """The pairwise model has no weight vector for a requested class pair."""


class NoGroundTruth(PosecutError):
    """An operation that needs annotated poses got an instance without them."""


class InfeasibleSolution(PosecutError):
    """A solution failed feasibility validation where feasibility is required."""


class RefusedTooLarge(PosecutError):
    """The exact solver refuses instances beyond its enumeration limits."""


class NoAnchorJoints(PosecutError):
    """Scoremap rendering needs at least one annotated non-target joint."""
