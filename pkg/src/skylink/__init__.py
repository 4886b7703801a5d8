"""Deterministic simulator and trace verifier for cellular-connected UAS security workflows."""

from .harness import Run, aggregate, build, campaign, run
from .model import SkylinkError
from .procedures import SPECS, Verdict, legal_next, verify_trace
from .report import Report, summarize
from .scenario import (
    ParseError,
    Scenario,
    ScenarioError,
    SchemaVersionMismatch,
    UnknownReference,
    list_fixtures,
    load_scenario,
    parse_scenario,
    serialize,
)
from .trace import MalformedTrace, Trace, read_trace

__version__ = "0.1.0"

__all__ = [
    "MalformedTrace",
    "ParseError",
    "Report",
    "Run",
    "SPECS",
    "Scenario",
    "ScenarioError",
    "SchemaVersionMismatch",
    "SkylinkError",
    "Trace",
    "UnknownReference",
    "Verdict",
    "aggregate",
    "build",
    "campaign",
    "legal_next",
    "list_fixtures",
    "load_scenario",
    "parse_scenario",
    "read_trace",
    "run",
    "serialize",
    "summarize",
    "verify_trace",
]
