__all__ = [
    'EventKind',
    'EventSpec',
    'Integrator',
    'Scenario',
    'SolverSettings',
    'apply_overrides',
    'bundled_names',
    'dumps_scenario',
    'load_scenario',
    'read_document',
    'resolve_scenario',
    'scenario_from_document',
    'write_scenario',
]

from .model import EventKind, EventSpec, Integrator, Scenario, SolverSettings
from .overrides import apply_overrides
from .parse import (
    bundled_names,
    load_scenario,
    read_document,
    resolve_scenario,
    scenario_from_document,
)
from .write import dumps_scenario, write_scenario
