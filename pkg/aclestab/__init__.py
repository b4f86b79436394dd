__all__ = [
    'AclestabError',
    'CctResult',
    'Log',
    'PowerFlowSolution',
    'Scenario',
    'SimParams',
    'SimulationTrace',
    'TerminationReason',
    'acle_operating_point',
    'compute_cct',
    'load_scenario',
    'nolog',
    'run_simulation',
    'sequential_acdc_powerflow',
    'sweep_cct',
]

from .condition import Log, nolog
from .errors import AclestabError
from .powerflow import (
    PowerFlowSolution,
    acle_operating_point,
    sequential_acdc_powerflow,
)
from .scenario import Scenario, load_scenario
from .stability import CctResult, compute_cct, sweep_cct
from .tds import SimParams, SimulationTrace, TerminationReason, run_simulation
