from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any

from ..acle import AcleSettings
from ..errors import DataError
from ..machine import ControlChain, Generator
from ..network import DEFAULT_FAULT_ADMITTANCE, NetworkModel
from ..vsc import VscHvdcLink


class Integrator(StrEnum):
    RK4 = 'rk4_partitioned'
    TRAPEZOIDAL = 'trapezoidal_partitioned'


class EventKind(StrEnum):
    TRIP = 'trip'
    FAULT = 'fault'
    FAULT_ON = 'fault_on'
    FAULT_CLEAR = 'fault_clear'
    RECLOSE = 'reclose'
    SETPOINT = 'setpoint'


ACLE_TARGETS = frozenset({'acle.p_cons_mw', 'acle.k_pu_per_rad', 'acle.t_filter_s'})
CONVERTER_TARGETS = frozenset({'p_ref', 'q_ref'})


@dataclass(frozen=True)
class EventSpec:
    """Timed event as written in a scenario.

    Setpoint targets are ``acle.<key>`` or ``<converter>.q_ref`` /
    ``<converter>.p_ref`` (converter per unit).
    """

    kind: EventKind
    t_s: float
    circuit: str | None = None
    duration_s: float | None = None
    g_fault_pu: float = DEFAULT_FAULT_ADMITTANCE
    target: str | None = None
    value: float | None = None

    def __post_init__(self) -> None:
        if self.t_s < 0.0:
            raise DataError("Event time must be non-negative")
        if self.kind == EventKind.SETPOINT:
            if self.target is None or self.value is None:
                raise DataError("Setpoint event needs target and value")
            head, _, key = self.target.rpartition('.')
            if self.target not in ACLE_TARGETS and not (head and key in CONVERTER_TARGETS):
                raise DataError(f"Unsupported setpoint target {self.target!r}")
        elif self.circuit is None:
            raise DataError(f"Event {self.kind} needs a circuit")
        if self.kind == EventKind.FAULT and not (self.duration_s or 0.0) > 0.0:
            raise DataError("Fault event needs a positive duration")
        if self.g_fault_pu < 1e4:
            raise DataError("Fault admittance below 1e4 pu")


@dataclass(frozen=True)
class SolverSettings:
    dt_s: float = 1e-3
    t_end_s: float = 10.0
    integrator: Integrator = Integrator.RK4
    network_tol: float = 1e-8
    network_max_iter: int = 50
    pf_tol: float = 1e-10
    pf_max_iter: int = 30
    outer_tol: float = 1e-10
    outer_max_iter: int = 20
    damping: float = 0.7
    acle_max_iter: int = 60
    sync_threshold_rad: float = math.pi
    trace_subsample: int = 1
    angle_pair: tuple[str, ...] = ()
    corridor: tuple[str, ...] = ()
    cct_circuit: str | None = None
    cct_t_on_s: float = 1.0
    cct_t_end_s: float = 10.0
    cct_start_s: float = 0.1
    cct_cap_s: float = 2.0
    cct_resolution_s: float = 1e-3

    def __post_init__(self) -> None:
        if self.dt_s <= 0.0:
            raise DataError("Time step must be positive")
        if not self.t_end_s > self.dt_s:
            raise DataError("End time must exceed the time step")
        if not 0.0 < self.damping <= 1.0:
            raise DataError("Damping must lie in (0, 1]")
        if self.trace_subsample < 1:
            raise DataError("Trace subsampling must be at least 1")
        if self.angle_pair and len(self.angle_pair) != 2:
            raise DataError("Angle pair must name two machines")
        if not 0.0 < self.cct_start_s <= self.cct_cap_s:
            raise DataError("CCT search needs 0 < start <= cap")
        if self.cct_resolution_s < self.dt_s:
            raise DataError("CCT resolution finer than the time step")


@dataclass(frozen=True)
class Scenario:
    name: str
    network: NetworkModel
    generators: tuple[Generator, ...]
    controls: Mapping[str, ControlChain] = field(default_factory=dict)
    link: VscHvdcLink | None = None
    acle: AcleSettings = field(default_factory=AcleSettings)
    events: tuple[EventSpec, ...] = ()
    solver: SolverSettings = field(default_factory=SolverSettings)

    def chain(self, gen: Generator) -> ControlChain:
        return self.controls.get(gen.controls, ControlChain())

    def generator(self, name: str) -> Generator:
        for g in self.generators:
            if g.name == name:
                return g
        raise KeyError(name)

    @property
    def s_conv(self) -> float:
        return self.link.s_base_mva if self.link else self.network.s_base

    def with_acle(self, **changes: Any) -> Scenario:
        return replace(self, acle=replace(self.acle, **changes))

    def with_solver(self, **changes: Any) -> Scenario:
        return replace(self, solver=replace(self.solver, **changes))

    def with_events(self, events: tuple[EventSpec, ...]) -> Scenario:
        return replace(self, events=events)
