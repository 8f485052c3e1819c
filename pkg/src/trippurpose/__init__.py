"""Activity-type (trip purpose) inference for GPS staypoints.

Staypoints are labeled with one of 15 activity types: Home, Work and School
through a bidding procedure over each agent's recurring locations, the rest
by multiplicative scoring of spatial, time-of-day and duration evidence.
Parameters are calibrated by matching survey distributions.
"""
__version__ = "0.1.0"

from .core import ActivityClass, ActivityType, ReferenceStats, Staypoint
from .errors import (
    ConfigError,
    CorruptInput,
    DegenerateDistribution,
    EmptyCorpus,
    IncompleteInference,
    InvalidObjective,
    NoHomeEvidence,
    SchemaError,
    StageDependency,
    TripPurposeError,
    UnmappedPoi,
)
from .metrics import EvalReport, build_report, hcr, jsd, weighted_temporal_jsd
from .params import ParamVector, detuned_params
from .pipeline import InferenceResult, Pipeline, infer_corpus
from .staypoints import extract_staypoints
from .tables import PingTable, PoiTable, StaypointTable
