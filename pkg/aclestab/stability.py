"""Loss-of-synchronism detection, critical clearing time search and gain/filter sweeps."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Protocol

import numpy as np
import pandas as pd

from .acle import AcleMode
from .errors import AclestabError, DataError
from .network import DEFAULT_FAULT_ADMITTANCE, FaultSpec
from .powerflow import PowerFlowSolution, acle_operating_point
from .scenario.model import EventKind, EventSpec, Scenario
from .tds import (
    EventSchedule,
    SimParams,
    SimulationTrace,
    TerminationReason,
    initial_solution,
    run_simulation,
)
from .typeshed import FloatArray


log = logging.getLogger(__name__)


class SynchronismDetector:
    """Latching trip on the largest pairwise rotor-angle separation."""

    def __init__(self, threshold: float = math.pi):
        self.threshold = threshold
        self.trip_time: float | None = None
        self.max_separation = 0.0

    @property
    def tripped(self) -> bool:
        return self.trip_time is not None

    def update(self, t: float, deltas: FloatArray) -> bool:
        if self.trip_time is not None:
            return True
        if len(deltas) < 2:
            return False
        sep = float(np.max(deltas) - np.min(deltas))
        self.max_separation = max(self.max_separation, sep)
        if sep > self.threshold:
            self.trip_time = t
            log.debug("Loss of synchronism at t=%.3f s (%.3f rad)", t, sep)
            return True
        return False


@dataclass(frozen=True)
class SynchronismCheck:
    tripped: bool
    time: float | None
    max_separation: float


def angle_channels(trace: SimulationTrace) -> list[str]:
    return [n for n in trace.channels if n.startswith('delta_') and n != 'delta_diff']


def detect_loss_of_synchronism(
    trace: SimulationTrace, threshold: float = math.pi
) -> SynchronismCheck:
    """Replay the detector over the machine-angle channels of a trace."""
    names = angle_channels(trace)
    detector = SynchronismDetector(threshold)
    if len(names) >= 2:
        angles = np.radians(np.column_stack([trace[n] for n in names]))
        for t, row in zip(trace.time, angles):
            if detector.update(float(t), row):
                break
    return SynchronismCheck(detector.tripped, detector.trip_time, detector.max_separation)


@dataclass(frozen=True)
class FirstSwing:
    time: float
    deviation_deg: float


def first_swing_peak(trace: SimulationTrace, pair: tuple[str, str]) -> FirstSwing:
    """First local extremum of the angle-difference excursion from its initial value."""
    d = trace[f"delta_{pair[0]}"] - trace[f"delta_{pair[1]}"]
    dev = np.abs(d - d[0])
    for k in range(1, len(dev) - 1):
        if dev[k] > 1e-6 and dev[k] >= dev[k - 1] and dev[k] > dev[k + 1]:
            return FirstSwing(float(trace.time[k]), float(dev[k]))
    k = int(np.argmax(dev))
    return FirstSwing(float(trace.time[k]), float(dev[k]))


class StabilityProbe(Protocol):
    def __call__(self, clearing_steps: int) -> TerminationReason: ...


class CctStatus(StrEnum):
    OK = 'ok'
    ABOVE_CAP = 'above_cap'
    UNCONFIRMED = 'unconfirmed'
    FAILED = 'failed'


@dataclass(frozen=True)
class CctResult:
    cct: float | None
    bracket: tuple[float, float | None]
    runs: tuple[tuple[float, TerminationReason], ...]
    status: CctStatus = CctStatus.OK
    cap: float = 2.0

    @property
    def run_count(self) -> int:
        return len(self.runs)

    @property
    def above_cap(self) -> bool:
        return self.status == CctStatus.ABOVE_CAP

    def __str__(self) -> str:
        if self.above_cap:
            return f"CCT > {self.cap:g} s"
        if self.cct is None:
            return "CCT unavailable"
        lo, hi = self.bracket
        return f"CCT = {self.cct * 1e3:.0f} ms [{lo * 1e3:.0f}, {(hi or 0.0) * 1e3:.0f}]"


def search_cct(
    probe: StabilityProbe,
    dt: float,
    *,
    start: float = 0.1,
    cap: float = 2.0,
    resolution: float = 1e-3,
) -> CctResult:
    """Doubling bracket search then bisection over whole time steps.

    The endpoints of the final bracket are re-simulated; a disagreement
    marks the result unconfirmed.
    """
    runs: list[tuple[float, TerminationReason]] = []

    def stable(steps: int) -> bool:
        reason = probe(steps)
        runs.append((steps * dt, reason))
        log.debug("Clearing %.4f s: %s", steps * dt, reason)
        return reason == TerminationReason.COMPLETED

    res_steps = max(1, int(round(resolution / dt)))
    cap_steps = int(round(cap / dt))
    if not stable(0):
        raise DataError("Case is unstable even with a zero-duration fault")
    lo = 0
    n = max(1, int(round(start / dt)))
    while stable(n):
        lo = n
        if n >= cap_steps:
            return CctResult(None, (lo * dt, None), tuple(runs), CctStatus.ABOVE_CAP, cap)
        n = min(2 * n, cap_steps)
    hi = n
    while hi - lo > res_steps:
        mid = (lo + hi) // 2
        if stable(mid):
            lo = mid
        else:
            hi = mid
    status = CctStatus.OK
    if not stable(lo) or stable(hi):
        log.warning("CCT bracket [%g, %g] s not confirmed", lo * dt, hi * dt)
        status = CctStatus.UNCONFIRMED
    return CctResult(lo * dt, (lo * dt, hi * dt), tuple(runs), status, cap)


def default_fault(scenario: Scenario) -> FaultSpec:
    cfg = scenario.solver
    if cfg.cct_circuit is None:
        raise DataError("No circuit configured for the clearing time search")
    t_on = cfg.cct_t_on_s
    return FaultSpec(cfg.cct_circuit, t_on, t_on + cfg.dt_s, DEFAULT_FAULT_ADMITTANCE)


@dataclass(frozen=True)
class SimulationProbe:
    """Full simulation of the fault cleared after a number of steps."""

    scenario: Scenario
    fault: FaultSpec
    params: SimParams
    operating_point: PowerFlowSolution

    def schedule(self, clearing_steps: int) -> EventSchedule:
        dt = self.params.dt
        f = self.fault
        t_clear = f.t_on + clearing_steps * dt
        events = (
            EventSpec(EventKind.FAULT_ON, f.t_on, f.branch, g_fault_pu=f.fault_admittance),
            EventSpec(EventKind.FAULT_CLEAR, t_clear, f.branch),
        )
        return EventSchedule.from_specs(events, dt)

    def __call__(self, clearing_steps: int) -> TerminationReason:
        trace = run_simulation(
            self.scenario,
            self.params,
            self.schedule(clearing_steps),
            operating_point=self.operating_point,
        )
        return trace.reason


def cct_params(scenario: Scenario) -> SimParams:
    cfg = scenario.solver
    return SimParams.from_scenario(
        scenario, t_end=cfg.cct_t_end_s, channels=(), trace_subsample=1000
    )


def compute_cct(
    scenario: Scenario,
    fault: FaultSpec | None = None,
    *,
    params: SimParams | None = None,
    operating_point: PowerFlowSolution | None = None,
    probe: StabilityProbe | None = None,
) -> CctResult:
    """Critical clearing time of a fault under the scenario's controller settings."""
    cfg = scenario.solver
    params = params or cct_params(scenario)
    if probe is None:
        fault = fault or default_fault(scenario)
        if operating_point is None:
            operating_point = initial_solution(scenario)
        probe = SimulationProbe(scenario, fault, params, operating_point)
    return search_cct(
        probe,
        params.dt,
        start=cfg.cct_start_s,
        cap=cfg.cct_cap_s,
        resolution=cfg.cct_resolution_s,
    )


def constant_p_baseline(scenario: Scenario, p_hvdc_mw: float) -> Scenario:
    """Constant-power variant scheduled at the given HVDC transfer."""
    return scenario.with_acle(mode=AcleMode.CONSTANT_P, p_cons_mw=p_hvdc_mw)


BASELINE = 'constant_p'
SWEEP_COLUMNS = [
    'case',
    'K_pu_per_rad',
    'T_s',
    'cct_ms',
    'bracket_lo_ms',
    'bracket_hi_ms',
    'status',
]


@dataclass(frozen=True)
class SweepCell:
    index: int
    case: str
    k: float
    t: float | None
    result: CctResult | None = None
    error: str | None = None

    @property
    def baseline(self) -> bool:
        return self.t is None

    @property
    def status(self) -> str:
        if self.error is not None or self.result is None:
            return CctStatus.FAILED
        return self.result.status

    @property
    def cct(self) -> float | None:
        return self.result.cct if self.result else None


@dataclass(frozen=True)
class CaseSummary:
    case: str
    k: float
    t_min: float | None
    cct_min: float | None
    cct_baseline: float | None

    @property
    def gap(self) -> float | None:
        if self.cct_min is None or self.cct_baseline is None:
            return None
        return self.cct_min - self.cct_baseline


def case_name(k: float) -> str:
    return f"K{k:g}"


@dataclass(frozen=True)
class CctSweepResult:
    cells: tuple[SweepCell, ...]
    k_list: tuple[float, ...]
    t_grid: tuple[float, ...]

    def baseline(self, case: str) -> SweepCell:
        for c in self.cells:
            if c.case == case and c.baseline:
                return c
        raise KeyError(case)

    def row(self, case: str) -> list[SweepCell]:
        return [c for c in self.cells if c.case == case and not c.baseline]

    @property
    def cases(self) -> list[str]:
        return [case_name(k) for k in self.k_list]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for c in self.cells:
            lo, hi = c.result.bracket if c.result else (None, None)
            rows.append({
                'case': c.case if not c.baseline else f"{c.case}_{BASELINE}",
                'K_pu_per_rad': c.k,
                'T_s': c.t,
                'cct_ms': ms(c.cct),
                'bracket_lo_ms': ms(lo),
                'bracket_hi_ms': ms(hi),
                'status': str(c.status),
            })
        return pd.DataFrame(rows, columns=SWEEP_COLUMNS)

    def series(self, case: str) -> pd.DataFrame:
        rows = [{'T_s': c.t, 'cct_ms': ms(c.cct)} for c in self.row(case)]
        return pd.DataFrame(rows, columns=['T_s', 'cct_ms'])

    def summary(self) -> list[CaseSummary]:
        ret = []
        for k in self.k_list:
            case = case_name(k)
            valid = [c for c in self.row(case) if c.cct is not None]
            best = min(valid, key=lambda c: c.cct or 0.0) if valid else None
            ret.append(CaseSummary(
                case,
                k,
                best.t if best else None,
                best.cct if best else None,
                self.baseline(case).cct,
            ))
        return ret


def ms(seconds: float | None) -> float | None:
    return None if seconds is None else round(seconds * 1e3, 6)


@dataclass(frozen=True)
class CellTask:
    index: int
    case: str
    k: float
    t: float | None
    scenario: Scenario
    fault: FaultSpec
    operating_point: PowerFlowSolution | None
    error: str | None = None


def run_cell(task: CellTask) -> SweepCell:
    cell = SweepCell(task.index, task.case, task.k, task.t)
    if task.error is not None or task.operating_point is None:
        return replace(cell, error=task.error or "no operating point")
    try:
        result = compute_cct(
            task.scenario, task.fault, operating_point=task.operating_point
        )
    except AclestabError as ex:
        log.warning("Sweep cell %s T=%s failed: %s", task.case, task.t, ex)
        return replace(cell, error=str(ex))
    log.info("Sweep cell %s T=%s: %s", task.case, task.t, result)
    return replace(cell, result=result)


def sweep_tasks(
    scenario: Scenario,
    k_list: Sequence[float],
    t_grid: Sequence[float],
    fault: FaultSpec,
) -> list[CellTask]:
    tasks = []
    for k in k_list:
        case = case_name(k)
        emulating = scenario.with_acle(mode=AcleMode.AC_LINE_EMULATION, k_pu_per_rad=k)
        op: PowerFlowSolution | None = None
        error = None
        p_hvdc_mw = 0.0
        try:
            point = acle_operating_point(emulating)
            op = point.solution
            p_hvdc_mw = point.p_hvdc_mw
        except AclestabError as ex:
            error = f"operating point: {ex}"
        base = constant_p_baseline(emulating, p_hvdc_mw)
        tasks.append(CellTask(len(tasks), case, k, None, base, fault, op, error))
        for t in t_grid:
            sc = emulating.with_acle(t_filter_s=t)
            tasks.append(CellTask(len(tasks), case, k, t, sc, fault, op, error))
    return tasks


def sweep_cct(
    scenario: Scenario,
    k_list: Sequence[float],
    t_grid: Sequence[float],
    *,
    fault: FaultSpec | None = None,
    jobs: int = 1,
    runner: Callable[[CellTask], SweepCell] = run_cell,
) -> CctSweepResult:
    """CCT over the (K, T) grid with a constant-power baseline per K.

    Cells run in parallel when ``jobs > 1``; results keep grid order.
    """
    if not k_list or not t_grid:
        raise DataError("Sweep needs at least one gain and one filter time constant")
    fault = fault or default_fault(scenario)
    tasks = sweep_tasks(scenario, k_list, t_grid, fault)
    log.info("Sweeping %d cells with %d job(s)", len(tasks), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(runner, tasks))
    else:
        cells = [runner(t) for t in tasks]
    cells.sort(key=lambda c: c.index)
    return CctSweepResult(tuple(cells), tuple(k_list), tuple(t_grid))
