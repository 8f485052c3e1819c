"""Exception hierarchy shared by every stage of the pipeline."""


class TripPurposeError(Exception):
    """Base class for all package errors."""


class DegenerateDistribution(TripPurposeError, ValueError):
    """A vector cannot be normalized (all zero or non-finite)."""


class SchemaError(TripPurposeError, ValueError):
    """An input file or array does not have the declared layout."""


class CorruptInput(TripPurposeError, ValueError):
    """Too many malformed rows in an input file."""


class ConfigError(TripPurposeError, ValueError):
    """Invalid configuration (unknown key, bad value, empty bounding box...)."""


class UnmappedPoi(TripPurposeError, KeyError):
    """A POI category has no enrichment entry and no explicit distribution."""


class NoHomeEvidence(TripPurposeError):
    """Every Home bid of an agent is zero."""


class IncompleteInference(TripPurposeError):
    """A report was requested for a corpus with unlabeled staypoints."""


class InvalidObjective(TripPurposeError, ValueError):
    """An objective vector contains NaN."""


class EmptyCorpus(TripPurposeError, ValueError):
    """An operation requires at least one staypoint."""


class StageDependency(TripPurposeError, FileNotFoundError):
    """An upstream artifact required by a pipeline stage is missing."""
