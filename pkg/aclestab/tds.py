"""Time-domain simulation of the AC grid with the VSC-HVDC link.

Each step applies the events due, solves the network for the present device
injections, evaluates all device derivatives and advances the states with a
partitioned explicit scheme that re-solves the network at every stage.
"""

from __future__ import annotations

import fnmatch
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import TYPE_CHECKING, TypeAlias

import numpy as np
import pandas as pd

from .acle import AcleState, acle_update, init_acle, measure_angle_difference
from .condition import (
    CurrentLimitActive,
    DcVoltageBandViolation,
    FeedforwardHeld,
    Issue,
    Log,
    MeasurementHeld,
    ModulationIndexExceeded,
    nolog,
)
from .errors import DataError, DcCollapseError, SolverError, TopologyError
from .machine import (
    NUM_STATES,
    S,
    MachineBank,
    bank_derivatives,
    clip_limited_states,
    init_machines,
    machine_norton_injection,
)
from .network import (
    FaultClear,
    FaultOn,
    NetworkModel,
    NetworkSolution,
    NetworkSolver,
    PhaseFollowingInjections,
    Reclose,
    TopologyEvent,
    Trip,
    apply_topology_event,
    augmented_matrix,
    build_ybus,
    freeze_loads,
)
from .powerflow import (
    AcleOperatingPoint,
    PowerFlowSolution,
    acle_operating_point,
    sequential_acdc_powerflow,
)
from .scenario.model import EventKind, EventSpec, Integrator, Scenario
from .typeshed import ComplexArray, FloatArray, StrPath
from .vsc import (
    ConverterPower,
    CurrentOrders,
    DAxisMode,
    DcGridState,
    Direction,
    LimitedOrders,
    QAxisMode,
    VscState,
    converter_power,
    dc_coupling,
    dc_grid_derivatives,
    enforce_limits,
    modulation_ok,
    outer_control,
    vsc_dynamics,
)

if TYPE_CHECKING:
    from .stability import SynchronismDetector


log = logging.getLogger(__name__)

VSC_STATES = 4
INIT_RESIDUAL_WARNING = 1e-6


class TerminationReason(StrEnum):
    COMPLETED = 'completed'
    LOSS_OF_SYNCHRONISM = 'loss_of_synchronism'
    DC_COLLAPSE = 'dc_collapse'
    SOLVER_FAILURE = 'solver_failure'


@dataclass(frozen=True)
class SimParams:
    """Settings of one time-domain run.

    The ``delta_diff`` channel compares the machines named by
    ``solver.angle_pair`` of the scenario; without one it compares the first
    and the last machine in scenario order. The synchronism check always uses
    the largest separation over all machines.
    """

    dt: float = 1e-3
    t_end: float = 10.0
    integrator: Integrator = Integrator.RK4
    network_tol: float = 1e-8
    network_max_iter: int = 50
    channels: tuple[str, ...] = ('*',)
    trace_subsample: int = 1
    sync_threshold: float = math.pi
    stop_on_instability: bool = True

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise DataError("Time step must be positive")
        if not self.t_end > self.dt:
            raise DataError("End time must exceed the time step")
        if self.trace_subsample < 1:
            raise DataError("Trace subsampling must be at least 1")

    @property
    def num_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @staticmethod
    def from_scenario(scenario: Scenario, **changes: object) -> SimParams:
        cfg = scenario.solver
        ret = SimParams(
            dt=cfg.dt_s,
            t_end=cfg.t_end_s,
            integrator=cfg.integrator,
            network_tol=cfg.network_tol,
            network_max_iter=cfg.network_max_iter,
            trace_subsample=cfg.trace_subsample,
            sync_threshold=cfg.sync_threshold_rad,
        )
        return replace(ret, **changes)  # type: ignore[arg-type]


@dataclass(frozen=True)
class SetpointChange:
    target: str
    value: float


Action: TypeAlias = TopologyEvent | SetpointChange


@dataclass(frozen=True)
class ScheduledEvent:
    step: int
    time: float
    action: Action


def expand_event(spec: EventSpec) -> list[tuple[float, Action]]:
    cid = spec.circuit or ''
    match spec.kind:
        case EventKind.TRIP:
            return [(spec.t_s, Trip(cid))]
        case EventKind.FAULT:
            t_clear = spec.t_s + (spec.duration_s or 0.0)
            return [
                (spec.t_s, FaultOn(cid, spec.g_fault_pu)),
                (t_clear, FaultClear(cid)),
            ]
        case EventKind.FAULT_ON:
            return [(spec.t_s, FaultOn(cid, spec.g_fault_pu))]
        case EventKind.FAULT_CLEAR:
            return [(spec.t_s, FaultClear(cid))]
        case EventKind.RECLOSE:
            return [(spec.t_s, Reclose(cid))]
        case EventKind.SETPOINT:
            assert spec.target is not None and spec.value is not None
            return [(spec.t_s, SetpointChange(spec.target, spec.value))]
    raise DataError(f"Unsupported event kind {spec.kind}")


@dataclass(frozen=True)
class EventSchedule:
    """Events snapped to the step grid, applied in list order within a step."""

    events: tuple[ScheduledEvent, ...] = ()

    def __post_init__(self) -> None:
        steps = [e.step for e in self.events]
        if steps != sorted(steps):
            raise DataError("Event times must be non-decreasing")

    @staticmethod
    def from_specs(specs: Iterable[EventSpec], dt: float) -> EventSchedule:
        pending: list[tuple[int, float, Action]] = []
        for spec in specs:
            for t, action in expand_event(spec):
                step = int(round(t / dt))
                if abs(step * dt - t) > 1e-9:
                    log.info(
                        "Event %s at %.6f s snapped to %.6f s", action, t, step * dt
                    )
                pending.append((step, step * dt, action))
        pending.sort(key=lambda e: e[0])
        return EventSchedule(tuple(ScheduledEvent(*e) for e in pending))

    def due(self, step: int) -> list[Action]:
        return [e.action for e in self.events if e.step == step]

    def validate(self, network: NetworkModel) -> None:
        """Dry run of the topology sequence, raising TopologyError on a bad event."""
        net = network
        for e in self.events:
            if not isinstance(e.action, SetpointChange):
                net = apply_topology_event(net, e.action)
                build_ybus(net)


@dataclass(frozen=True)
class StateLayout:
    machines: int
    converters: int
    dc_buses: int
    dc_lines: int

    @property
    def mach(self) -> slice:
        return slice(0, self.machines * NUM_STATES)

    @property
    def vsc(self) -> slice:
        start = self.mach.stop
        return slice(start, start + self.converters * VSC_STATES)

    @property
    def dc_u(self) -> slice:
        start = self.vsc.stop
        return slice(start, start + self.dc_buses)

    @property
    def dc_i(self) -> slice:
        start = self.dc_u.stop
        return slice(start, start + self.dc_lines)

    @property
    def size(self) -> int:
        return self.dc_i.stop


@dataclass(frozen=True)
class ConverterEval:
    orders: CurrentOrders
    limited: LimitedOrders
    power: ConverterPower
    p_loss: float
    p_dc: float
    u_dc: float
    u_s: float

    @property
    def power_balance_residual(self) -> float:
        return self.power.p_c + self.p_loss + self.p_dc


class DynamicSystem:
    """All device models of a scenario around one initialized operating point."""

    def __init__(
        self,
        scenario: Scenario,
        pf: PowerFlowSolution,
        params: SimParams,
        log: Log = nolog,
    ):
        self.scenario = scenario
        self.params = params
        self.log = log
        self.network = pf.network
        net = pf.network
        gens = scenario.generators
        chains = [scenario.chain(g) for g in gens]
        self.bank = MachineBank(gens, chains, net.s_base, net.f_hz)
        self.gen_idx = np.array([net.index(g.bus) for g in gens], dtype=np.int64)
        outputs = [pf.generator(g.name) for g in gens]
        s_gen = np.array([complex(o.p, o.q) for o in outputs])
        init = init_machines(self.bank, pf.v[self.gen_idx], s_gen)
        self.refs = init.refs
        self.loads = freeze_loads(net, pf.v)

        link = scenario.link
        self.link = link
        self.converters = link.converters if link else ()
        self.scale = link.s_base_mva / net.s_base if link else 1.0
        pcc = [net.index(c.ac_bus) for c in self.converters]
        self.pcc_idx = np.array(pcc, dtype=np.int64)
        self.pcc_kv = [net.buses[i].base_kv for i in pcc]
        self.dc_pos = [link.dc_index[c.dc_bus] for c in self.converters] if link else []
        self.layout = StateLayout(
            len(gens),
            len(self.converters),
            len(link.dc_buses) if link else 0,
            len(link.dc_lines) if link else 0,
        )
        self.p_ref: dict[str, float] = {}
        self.q_ref: dict[str, float] = {}
        x = np.zeros(self.layout.size)
        x[self.layout.mach] = init.x.ravel()
        xv = np.zeros((len(self.converters), VSC_STATES))
        for k, c in enumerate(self.converters):
            pt = pf.converter(c.name)
            self.p_ref[c.name] = pt.p_s
            self.q_ref[c.name] = pt.q_s
            xv[k] = (
                pt.i_d,
                pt.i_q,
                -pt.i_d if c.d_mode == DAxisMode.U_DC else 0.0,
                -pt.i_q if c.q_mode == QAxisMode.U_AC else 0.0,
            )
        x[self.layout.vsc] = xv.ravel()
        if link and pf.dc:
            x[self.layout.dc_u] = pf.dc.u
            x[self.layout.dc_i] = pf.dc.i_line
        self.x0 = x
        self.v0 = pf.v.copy()
        self.hold_angle = np.angle(pf.v[self.pcc_idx])
        self.last_orders: list[CurrentOrders | None] = [None] * len(self.converters)
        self.flags = np.zeros((len(self.converters), 4), dtype=bool)

        self.acle_settings = scenario.acle
        self.acle: AcleState | None = None
        self.acle_k = -1
        self.acle_diff = 0.0
        names = [c.name for c in self.converters]
        if self.acle_settings.converter in names and self.acle_settings.remote in names:
            self.acle = init_acle(pf, self.acle_settings, self.scale * net.s_base)
            self.acle_k = names.index(self.acle_settings.converter)
            self.acle_remote_k = names.index(self.acle_settings.remote)

        self.angle_pair = self._angle_pair()
        self.corridor = tuple(scenario.solver.corridor)
        self._rebuild()

    def _angle_pair(self) -> tuple[int, int]:
        names = self.bank.names
        pair = self.scenario.solver.angle_pair
        if pair:
            return names.index(pair[0]), names.index(pair[1])
        return 0, max(len(names) - 1, 0)

    def _rebuild(self) -> None:
        n = self.network.size
        xm = self.x0[self.layout.mach].reshape(-1, NUM_STATES)
        _, y_gen = machine_norton_injection(self.bank, xm)
        shunts = self.loads.shunts(n)
        np.add.at(shunts, self.gen_idx, y_gen)
        y = augmented_matrix(build_ybus(self.network), shunts)
        p = self.params
        self.solver = NetworkSolver(y, tol=p.network_tol, max_iter=p.network_max_iter)
        self.load_injections = self.loads.injections()

    def solve(self, x: FloatArray, v0: ComplexArray) -> NetworkSolution:
        n = self.network.size
        xm = x[self.layout.mach].reshape(-1, NUM_STATES)
        i_src, _ = machine_norton_injection(self.bank, xm)
        sources = np.zeros(n, dtype=complex)
        np.add.at(sources, self.gen_idx, i_src)
        xv = x[self.layout.vsc].reshape(-1, VSC_STATES)
        conv = PhaseFollowingInjections(
            self.pcc_idx,
            (xv[:, 0] + 1j * xv[:, 1]) * self.scale,
            np.zeros(len(self.pcc_idx)),
            self.hold_angle,
        )
        inj = PhaseFollowingInjections.concat([self.load_injections, conv])
        return self.solver.solve(sources, inj, v0)

    def derivatives(
        self, x: FloatArray, v: ComplexArray
    ) -> tuple[FloatArray, list[ConverterEval]]:
        lay = self.layout
        dx = np.zeros_like(x)
        xm = x[lay.mach].reshape(-1, NUM_STATES)
        dm, _ = bank_derivatives(self.bank, xm, v[self.gen_idx], self.refs)
        dx[lay.mach] = dm.ravel()
        evals: list[ConverterEval] = []
        if not self.converters:
            return dx, evals
        assert self.link
        xv = x[lay.vsc].reshape(-1, VSC_STATES)
        u_dc_bus = x[lay.dc_u]
        i_inj = np.zeros(lay.dc_buses)
        dv = np.zeros_like(xv)
        for k, c in enumerate(self.converters):
            u_s = float(abs(v[self.pcc_idx[k]]))
            u_dc = float(u_dc_bus[self.dc_pos[k]])
            st = VscState(*(float(s) for s in xv[k]))
            p_ref, q_ref = self.p_ref[c.name], self.q_ref[c.name]
            orders = outer_control(c, p_ref, q_ref, u_s, u_dc, st, self.last_orders[k])
            lim = enforce_limits(orders.i_d_ref, orders.i_q_ref, c)
            dv[k] = vsc_dynamics(st, orders, lim, c)
            pw = converter_power(c, u_s, st.i_d, st.i_q)
            p_loss = c.losses.loss(pw.i_s, Direction.of(pw.p_c))
            p_dc, i_dc = dc_coupling(pw.p_c, p_loss, u_dc, c.name)
            i_inj[self.dc_pos[k]] += i_dc
            evals.append(ConverterEval(orders, lim, pw, p_loss, p_dc, u_dc, u_s))
        dx[lay.vsc] = dv.ravel()
        grid = self.link.dc_model
        du, di = dc_grid_derivatives(grid, DcGridState(u_dc_bus, x[lay.dc_i]), i_inj)
        dx[lay.dc_u] = du
        dx[lay.dc_i] = di
        return dx, evals

    def _stage(self, x: FloatArray, v: ComplexArray) -> tuple[FloatArray, ComplexArray]:
        sol = self.solve(x, v)
        dx, _ = self.derivatives(x, sol.v)
        return dx, sol.v

    def advance(self, x: FloatArray, v: ComplexArray, k1: FloatArray) -> FloatArray:
        dt = self.params.dt
        if self.params.integrator == Integrator.TRAPEZOIDAL:
            k2, _ = self._stage(x + dt * k1, v)
            ret = x + 0.5 * dt * (k1 + k2)
        else:
            k2, v2 = self._stage(x + 0.5 * dt * k1, v)
            k3, v3 = self._stage(x + 0.5 * dt * k2, v2)
            k4, _ = self._stage(x + dt * k3, v3)
            ret = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        xm = ret[self.layout.mach].reshape(-1, NUM_STATES)
        clip_limited_states(self.bank, xm)
        ret[self.layout.mach] = xm.ravel()
        return ret

    def apply(self, action: Action, t: float) -> None:
        match action:
            case SetpointChange(target=target, value=value):
                self._apply_setpoint(target, value)
            case _:
                self.network = apply_topology_event(self.network, action)
                self._rebuild()
        log.info("t=%.3f s: applied %s", t, action)

    def _apply_setpoint(self, target: str, value: float) -> None:
        head, _, key = target.rpartition('.')
        if head == 'acle':
            if self.acle is None:
                raise DataError(f"Setpoint {target} without an emulating converter")
            self.acle_settings = replace(self.acle_settings, **{key: value})
            self._reset_acle_base()
            return
        names = [c.name for c in self.converters]
        if head not in names:
            raise DataError(f"Setpoint for unknown converter {head!r}")
        emulating = self.acle is not None and head == self.acle_settings.converter
        if key == 'p_ref' and emulating:
            self.acle = replace(self.acle, p_s1_ini=value)
        elif key == 'p_ref':
            self.p_ref[head] = value
        else:
            self.q_ref[head] = value

    def _reset_acle_base(self) -> None:
        assert self.acle is not None
        s = self.acle_settings
        d_0 = self.acle.delta0_1 - self.acle.delta0_2
        p_ini = s.p_cons(self.scale * self.network.s_base) - s.k * d_0
        self.acle = replace(self.acle, p_s1_ini=p_ini)

    def check_setpoints(self, schedule: EventSchedule) -> None:
        saved = (self.acle, self.acle_settings, dict(self.p_ref), dict(self.q_ref))
        for e in schedule.events:
            if isinstance(e.action, SetpointChange):
                self._apply_setpoint(e.action.target, e.action.value)
        self.acle, self.acle_settings, self.p_ref, self.q_ref = saved

    def end_step(self, t: float, v: ComplexArray) -> None:
        """Measurement holds and the emulation filter, once per accepted step."""
        vm = np.abs(v[self.pcc_idx])
        live = vm >= 0.01
        self.hold_angle = np.where(live, np.angle(v[self.pcc_idx]), self.hold_angle)
        if self.acle is None:
            return
        c = self.converters[self.acle_k]
        v_1 = complex(v[self.pcc_idx[self.acle_k]])
        v_2 = complex(v[self.pcc_idx[self.acle_remote_k]])
        was_held = self.acle.held
        diff, state = measure_angle_difference(v_1, v_2, self.acle)
        if state.held and not was_held:
            self.log(MeasurementHeld.issue(c.name, t))
        state, p_ref = acle_update(
            state, diff, self.acle_settings, self.params.dt, c.p_max
        )
        self.acle = state
        self.acle_diff = diff
        self.p_ref[c.name] = p_ref

    def accept(self, t: float, evals: Sequence[ConverterEval]) -> None:
        """Record feedforward orders and raise issues at the onset of a limit."""
        assert self.link or not evals
        u_dc_base_kv = self.link.u_dc_base_kv if self.link else 0.0
        for k, (c, ev) in enumerate(zip(self.converters, evals)):
            if not ev.orders.feedforward_held:
                self.last_orders[k] = ev.orders
            flags = (
                ev.limited.limited,
                ev.orders.feedforward_held,
                not modulation_ok(
                    c, ev.power.u_c, ev.u_dc, u_dc_base_kv, self.pcc_kv[k]
                ),
                abs(ev.u_dc - 1.0) > c.u_dc_band,
            )
            conds = (
                CurrentLimitActive,
                FeedforwardHeld,
                ModulationIndexExceeded,
                DcVoltageBandViolation,
            )
            for j, (now, cond) in enumerate(zip(flags, conds)):
                if now and not self.flags[k, j]:
                    self.log(cond.issue(c.name, t))
            self.flags[k] = flags

    def p_hvdc_mw(self, evals: Sequence[ConverterEval]) -> float:
        if self.acle_k < 0:
            if not evals:
                return 0.0
            return -evals[0].power.p_s * self.scale * self.network.s_base
        return -evals[self.acle_k].power.p_s * self.scale * self.network.s_base

    def circuit_flow_mw(self, circuit_id: str, v: ComplexArray) -> float:
        b = self.network.branch(circuit_id)
        if not b.in_service:
            return 0.0
        idx = self.network.bus_index
        ys = b.series_admittance()
        vf = v[idx[b.from_bus]]
        vt = v[idx[b.to_bus]]
        i_f = (ys + 0.5j * b.b_shunt) / b.tap**2 * vf - ys / b.tap * vt
        return float((vf * np.conj(i_f)).real * self.network.s_base)

    def channel_names(self) -> list[str]:
        ret = ['t']
        ret += [f"delta_{g}" for g in self.bank.names]
        ret += [f"omega_{g}" for g in self.bank.names]
        ret += [f"vm_{b.id}" for b in self.network.buses]
        ret += [f"va_{b.id}" for b in self.network.buses]
        ret += ['delta_diff', 'p_hvdc_mw', 'p_corridor_mw']
        ret += [f"p_{cid}_mw" for cid in self.corridor]
        ret += ['acle_ddelta', 'acle_y', 'acle_p_ref']
        for c in self.converters:
            ret += [
                f"{c.name}_{q}"
                for q in (
                    'p_s',
                    'q_s',
                    'i_d',
                    'i_q',
                    'u_dc',
                    'power_balance_residual',
                    'current_limited',
                    'feedforward_held',
                    'modulation_exceeded',
                    'dc_band_violation',
                )
            ]
        ret.append('network_residual')
        return ret

    def sample(
        self,
        t: float,
        x: FloatArray,
        v: ComplexArray,
        evals: Sequence[ConverterEval],
        residual: float,
    ) -> dict[str, float]:
        xm = x[self.layout.mach].reshape(-1, NUM_STATES)
        ret: dict[str, float] = {'t': t}
        deg = np.degrees(xm[:, S.DELTA])
        for k, g in enumerate(self.bank.names):
            ret[f"delta_{g}"] = float(deg[k])
            ret[f"omega_{g}"] = float(xm[k, S.OMEGA])
        vm = np.abs(v)
        va = np.degrees(np.angle(v))
        for k, b in enumerate(self.network.buses):
            ret[f"vm_{b.id}"] = float(vm[k])
            ret[f"va_{b.id}"] = float(va[k])
        i, j = self.angle_pair
        ret['delta_diff'] = float(deg[i] - deg[j]) if len(deg) else 0.0
        ret['p_hvdc_mw'] = self.p_hvdc_mw(evals)
        flows = {cid: self.circuit_flow_mw(cid, v) for cid in self.corridor}
        ret['p_corridor_mw'] = sum(flows.values())
        for cid, p in flows.items():
            ret[f"p_{cid}_mw"] = p
        acle = self.acle
        ret['acle_ddelta'] = math.degrees(self.acle_diff)
        ret['acle_y'] = acle.y if acle else 0.0
        ret['acle_p_ref'] = self.p_ref[self.acle_settings.converter] if acle else 0.0
        for k, (c, ev) in enumerate(zip(self.converters, evals)):
            st = x[self.layout.vsc].reshape(-1, VSC_STATES)[k]
            ret[f"{c.name}_p_s"] = ev.power.p_s
            ret[f"{c.name}_q_s"] = ev.power.q_s
            ret[f"{c.name}_i_d"] = float(st[0])
            ret[f"{c.name}_i_q"] = float(st[1])
            ret[f"{c.name}_u_dc"] = ev.u_dc
            ret[f"{c.name}_power_balance_residual"] = ev.power_balance_residual
            ret[f"{c.name}_current_limited"] = float(self.flags[k, 0])
            ret[f"{c.name}_feedforward_held"] = float(self.flags[k, 1])
            ret[f"{c.name}_modulation_exceeded"] = float(self.flags[k, 2])
            ret[f"{c.name}_dc_band_violation"] = float(self.flags[k, 3])
        ret['network_residual'] = residual
        return ret


def select_channels(names: Sequence[str], patterns: Sequence[str]) -> list[str]:
    return [
        n for n in names if n == 't' or any(fnmatch.fnmatchcase(n, p) for p in patterns)
    ]


@dataclass(frozen=True)
class SimulationTrace:
    time: FloatArray
    channels: Mapping[str, FloatArray]
    reason: TerminationReason = TerminationReason.COMPLETED
    t_stop: float | None = None
    message: str = ''
    issues: tuple[Issue, ...] = ()
    dt: float = 1e-3
    steps: int = 0

    def __post_init__(self) -> None:
        for name, values in self.channels.items():
            if len(values) != len(self.time):
                raise DataError(f"Trace channel {name} has the wrong length")

    def __len__(self) -> int:
        return len(self.time)

    def __getitem__(self, name: str) -> FloatArray:
        if name == 't':
            return self.time
        return self.channels[name]

    @property
    def names(self) -> list[str]:
        return ['t', *self.channels]

    @property
    def stable(self) -> bool:
        return self.reason == TerminationReason.COMPLETED

    def final(self, name: str) -> float:
        return float(self[name][-1])

    def to_frame(self) -> pd.DataFrame:
        data = {'t': self.time, **self.channels}
        return pd.DataFrame(data, columns=self.names)

    def write_csv(self, path: StrPath) -> None:
        self.to_frame().to_csv(path, index=False, float_format='%.9g')


class TraceRecorder:
    def __init__(self, names: Sequence[str], subsample: int = 1):
        self.names = [n for n in names if n != 't']
        self.subsample = subsample
        self.time: list[float] = []
        self.rows: dict[str, list[float]] = {n: [] for n in self.names}
        self._last: tuple[float, dict[str, float]] | None = None

    def record(self, step: int, sample: dict[str, float]) -> None:
        if step % self.subsample == 0:
            self._append(sample)
            self._last = None
        else:
            self._last = (sample['t'], sample)

    def _append(self, sample: dict[str, float]) -> None:
        self.time.append(sample['t'])
        for n in self.names:
            self.rows[n].append(sample[n])

    def finish(self, **kwargs: object) -> SimulationTrace:
        if self._last is not None:
            self._append(self._last[1])
        channels = {n: np.asarray(v, dtype=float) for n, v in self.rows.items()}
        return SimulationTrace(np.asarray(self.time), channels, **kwargs)  # type: ignore[arg-type]


def initial_solution(scenario: Scenario) -> PowerFlowSolution:
    link = scenario.link
    acle = scenario.acle
    if link and {acle.converter, acle.remote} <= {c.name for c in link.converters}:
        return acle_operating_point(scenario).solution
    return sequential_acdc_powerflow(scenario)


def run_simulation(
    scenario: Scenario,
    params: SimParams | None = None,
    schedule: EventSchedule | None = None,
    *,
    operating_point: PowerFlowSolution | AcleOperatingPoint | None = None,
    log: Log = nolog,
    detector: SynchronismDetector | None = None,
) -> SimulationTrace:
    """Fixed-step simulation from an initialized operating point.

    Solver failures and DC voltage collapse end the run with the matching
    termination reason instead of raising.
    """
    from .stability import SynchronismDetector

    logger = logging.getLogger(__name__)
    params = params or SimParams.from_scenario(scenario)
    if schedule is None:
        schedule = EventSchedule.from_specs(scenario.events, params.dt)
    if operating_point is None:
        operating_point = initial_solution(scenario)
    if isinstance(operating_point, AcleOperatingPoint):
        operating_point = operating_point.solution
    schedule.validate(operating_point.network)

    issues: list[Issue] = []

    def collect(issue: Issue) -> None:
        issues.append(issue)
        log(issue)

    system = DynamicSystem(scenario, operating_point, params, collect)
    system.check_setpoints(schedule)
    if detector is None:
        detector = SynchronismDetector(params.sync_threshold)
    names = select_channels(system.channel_names(), params.channels)
    recorder = TraceRecorder(names, params.trace_subsample)

    x = system.x0.copy()
    sol = system.solve(x, system.v0)
    v = sol.v
    k1, _ = system.derivatives(x, v)
    init_res = float(np.max(np.abs(k1))) if len(k1) else 0.0
    if init_res > INIT_RESIDUAL_WARNING:
        msg = "Initial state derivative %.3e exceeds %.1e"
        logger.warning(msg, init_res, INIT_RESIDUAL_WARNING)

    reason = TerminationReason.COMPLETED
    t_stop = None
    message = ''
    n_steps = params.num_steps
    step = 0
    try:
        for step in range(n_steps + 1):
            t = step * params.dt
            actions = schedule.due(step)
            for action in actions:
                system.apply(action, t)
            if actions:
                sol = system.solve(x, v)
                v = sol.v
            k1, evals = system.derivatives(x, v)
            system.accept(t, evals)
            recorder.record(step, system.sample(t, x, v, evals, sol.residual))
            deltas = x[system.layout.mach].reshape(-1, NUM_STATES)[:, S.DELTA]
            if detector.update(t, deltas) and params.stop_on_instability:
                reason = TerminationReason.LOSS_OF_SYNCHRONISM
                t_stop = detector.trip_time
                break
            if step == n_steps:
                break
            x = system.advance(x, v, k1)
            sol = system.solve(x, v)
            v = sol.v
            system.end_step(t + params.dt, v)
    except DcCollapseError as ex:
        reason = TerminationReason.DC_COLLAPSE
        t_stop = step * params.dt
        ex.time = t_stop
        message = str(ex)
    except (SolverError, TopologyError) as ex:
        reason = TerminationReason.SOLVER_FAILURE
        t_stop = step * params.dt
        message = f"t={t_stop:.3f} s: {ex}"
    if reason != TerminationReason.COMPLETED:
        logger.info("Simulation ended: %s %s", reason, message)
    return recorder.finish(
        reason=reason,
        t_stop=t_stop,
        message=message,
        issues=tuple(issues),
        dt=params.dt,
        steps=step,
    )


@dataclass(frozen=True)
class StepConvergence:
    deviation_deg: float | None
    reasons: tuple[TerminationReason, TerminationReason]
    dt: tuple[float, float] = field(default=(0.0, 0.0))

    @property
    def comparable(self) -> bool:
        return self.deviation_deg is not None


def step_convergence_check(
    scenario: Scenario,
    dt: float,
    dt_fine: float | None = None,
    *,
    t_end: float | None = None,
    operating_point: PowerFlowSolution | AcleOperatingPoint | None = None,
) -> StepConvergence:
    """Maximum machine-angle deviation between runs at ``dt`` and ``dt_fine``."""
    dt_fine = dt_fine or dt / 2.0
    ratio = dt / dt_fine
    if abs(ratio - round(ratio)) > 1e-9:
        raise DataError("Coarse step must be a multiple of the fine step")
    if operating_point is None:
        operating_point = initial_solution(scenario)
    base = SimParams.from_scenario(scenario, channels=('delta_*',), trace_subsample=1)
    if t_end is not None:
        base = replace(base, t_end=t_end)
    op = operating_point
    coarse = run_simulation(scenario, replace(base, dt=dt), operating_point=op)
    fine = run_simulation(scenario, replace(base, dt=dt_fine), operating_point=op)
    reasons = (coarse.reason, fine.reason)
    if coarse.reason != fine.reason:
        log.warning("Step convergence runs ended differently: %s vs %s", *reasons)
        return StepConvergence(None, reasons, (dt, dt_fine))
    stride = int(round(ratio))
    n = min(len(coarse), (len(fine) - 1) // stride + 1)
    dev = 0.0
    for name in coarse.channels:
        a = coarse[name][:n]
        b = fine[name][::stride][:n]
        dev = max(dev, float(np.max(np.abs(a - b))))
    return StepConvergence(dev, reasons, (dt, dt_fine))
