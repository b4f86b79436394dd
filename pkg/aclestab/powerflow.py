"""Steady-state initialization: AC and DC power flows and their sequential coupling.

AC quantities are per unit on the system base, converter quantities on the
converter base. Converter injections ``p_s``, ``q_s`` are powers delivered
into the AC grid at the PCC.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING
from warnings import warn

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .acle import wrap_angle
from .errors import DataError, SolverError, TopologyError
from .network import BranchFlow, BusKind, NetworkModel, branch_flows, build_ybus
from .typeshed import ComplexArray, FloatArray
from .vsc import (
    ConverterLossModel,
    DAxisMode,
    Direction,
    QAxisMode,
    VscHvdcLink,
    VscParams,
)

if TYPE_CHECKING:
    from .scenario.model import Scenario


log = logging.getLogger(__name__)

# setpoint step (converter pu) of the emulation seed and bracket search
_SEED_STEP = 0.1
_SEED_TRIES = 20


def converter_losses(i_s: float, direction: Direction, model: ConverterLossModel) -> float:
    return model.loss(i_s, direction)


@dataclass(frozen=True)
class ConverterPoint:
    name: str
    u_s: float
    theta_s: float
    p_s: float
    q_s: float
    i_s: float
    p_c: float
    p_loss: float
    p_dc: float
    u_dc: float = 1.0

    @property
    def direction(self) -> Direction:
        return Direction.of(self.p_c)

    @property
    def i_d(self) -> float:
        return self.p_s / self.u_s

    @property
    def i_q(self) -> float:
        return -self.q_s / self.u_s

    @property
    def p_reactor(self) -> float:
        return self.p_c - self.p_s

    @property
    def balance_residual(self) -> float:
        return self.p_c + self.p_loss + self.p_dc


def converter_point(
    vsc: VscParams, v_pcc: complex, p_s: float, q_s: float, u_dc: float = 1.0
) -> ConverterPoint:
    u_s = abs(v_pcc)
    i_s = math.hypot(p_s, q_s) / u_s
    p_c = p_s + vsc.r_s * i_s * i_s
    p_loss = converter_losses(i_s, Direction.of(p_c), vsc.losses)
    theta = math.atan2(v_pcc.imag, v_pcc.real)
    return ConverterPoint(
        vsc.name, u_s, theta, p_s, q_s, i_s, p_c, p_loss, -(p_c + p_loss), u_dc
    )


def p_s_from_p_dc(vsc: VscParams, p_dc: float, q_s: float, u_s: float) -> float:
    """AC injection of a converter that delivers ``-p_dc`` from its DC side."""
    p_c = -p_dc
    p_s = p_c
    for _ in range(100):
        i_s = math.hypot(p_s, q_s) / u_s
        p_c = -p_dc - vsc.losses.loss(i_s, Direction.of(p_c))
        p_next = p_c - vsc.r_s * i_s * i_s
        if abs(p_next - p_s) < 1e-15:
            return p_next
        p_s = p_next
    return p_s


@dataclass(frozen=True)
class GeneratorDispatch:
    bus: int
    p: float
    v_set: float


@dataclass(frozen=True)
class AcPowerFlow:
    v: ComplexArray
    s_gen: ComplexArray
    iterations: int
    mismatch: float


def _dsbus_dv(ybus: sp.csr_matrix, v: ComplexArray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    ibus = ybus @ v
    diag_v = sp.diags(v)
    diag_ib = sp.diags(ibus)
    diag_vn = sp.diags(v / np.abs(v))
    ds_dvm = diag_v @ (ybus @ diag_vn).conj() + diag_ib.conj() @ diag_vn
    ds_dva = 1j * diag_v @ (diag_ib - ybus @ diag_v).conj()
    return sp.csr_matrix(ds_dvm), sp.csr_matrix(ds_dva)


def check_slack_per_island(network: NetworkModel, slack: Sequence[int]) -> None:
    idx = network.bus_index
    live = [b for b in network.branches if b.in_service]
    f = [idx[b.from_bus] for b in live]
    t = [idx[b.to_bus] for b in live]
    n = network.size
    graph = sp.csr_matrix((np.ones(len(f)), (f, t)), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    per_island = np.bincount(labels[list(slack)], minlength=count)
    if np.any(per_island != 1):
        raise TopologyError("Each synchronous island needs exactly one slack bus")


def solve_ac_powerflow(
    network: NetworkModel,
    dispatch: Sequence[GeneratorDispatch],
    injections: Mapping[int, complex] | None = None,
    *,
    voltage_control: Mapping[int, float] | None = None,
    tol: float = 1e-10,
    max_iter: int = 30,
    v0: ComplexArray | None = None,
) -> AcPowerFlow:
    """Newton-Raphson power flow in polar coordinates.

    ``injections`` are fixed complex powers into the grid per bus id;
    ``voltage_control`` turns the listed PQ buses into PV buses.
    """
    ybus = build_ybus(network).entries
    n = network.size
    idx = network.bus_index
    kinds = [b.kind for b in network.buses]
    vm = np.array([b.v_mag for b in network.buses], dtype=float)
    va = np.array([b.v_ang for b in network.buses], dtype=float)
    sbus = np.zeros(n, dtype=complex)
    for ld in network.loads:
        sbus[idx[ld.bus]] -= complex(ld.p0, ld.q0) / network.s_base
    s_load = -sbus.copy()
    s_inj = np.zeros(n, dtype=complex)
    for bus, s in (injections or {}).items():
        s_inj[network.index(bus)] += s
    sbus += s_inj
    for d in dispatch:
        k = network.index(d.bus)
        if kinds[k] == BusKind.PQ:
            raise DataError(f"Generator dispatched at PQ bus {d.bus}")
        if kinds[k] == BusKind.PV:
            sbus[k] += d.p
        vm[k] = d.v_set
    for bus, v_set in (voltage_control or {}).items():
        k = network.index(bus)
        if kinds[k] == BusKind.PQ:
            kinds[k] = BusKind.PV
        vm[k] = v_set
    ref = [k for k in range(n) if kinds[k] == BusKind.SLACK]
    check_slack_per_island(network, ref)
    pv = np.array([k for k in range(n) if kinds[k] == BusKind.PV], dtype=np.int64)
    pq = np.array([k for k in range(n) if kinds[k] == BusKind.PQ], dtype=np.int64)
    pvpq = np.concatenate([pv, pq])
    if v0 is not None:
        va = np.angle(v0)
        vm[pq] = np.abs(v0[pq])
    v = vm * np.exp(1j * va)

    npvpq = len(pvpq)
    norm = math.inf
    for it in range(max_iter + 1):
        mis = v * np.conj(ybus @ v) - sbus
        f = np.concatenate([mis[pvpq].real, mis[pq].imag])
        norm = float(np.max(np.abs(f))) if len(f) else 0.0
        if norm < tol:
            s_calc = v * np.conj(ybus @ v)
            log.debug("AC power flow converged in %d iterations", it)
            return AcPowerFlow(v, s_calc + s_load - s_inj, it, norm)
        if it == max_iter:
            break
        ds_dvm, ds_dva = _dsbus_dv(ybus, v)
        j11 = ds_dva[pvpq][:, pvpq].real
        j12 = ds_dvm[pvpq][:, pq].real
        j21 = ds_dva[pq][:, pvpq].imag
        j22 = ds_dvm[pq][:, pq].imag
        jac = sp.bmat([[j11, j12], [j21, j22]], format='csc')
        try:
            dx = splu(jac).solve(-f)
        except RuntimeError as ex:
            raise SolverError(f"Singular power-flow Jacobian: {ex}", iterations=it) from ex
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
    raise SolverError("AC power flow diverged", iterations=max_iter, residual=norm)


@dataclass(frozen=True)
class DcFlow:
    bus_ids: tuple[int, ...]
    u: FloatArray
    i_line: FloatArray
    p: FloatArray
    r: FloatArray
    iterations: int

    @property
    def losses(self) -> float:
        return float(np.sum(self.r * self.i_line**2))

    def u_at(self, bus_id: int) -> float:
        return float(self.u[self.bus_ids.index(bus_id)])

    def p_at(self, bus_id: int) -> float:
        return float(self.p[self.bus_ids.index(bus_id)])


def solve_dc_network(
    link: VscHvdcLink,
    slack_bus: int,
    u_slack: float,
    p_inj: Mapping[int, float],
    *,
    tol: float = 1e-10,
    max_iter: int = 30,
) -> DcFlow:
    """Resistive DC network power flow with one voltage-controlling bus."""
    grid = link.dc_model
    nb = len(grid.bus_ids)
    adj = sp.csr_matrix(np.abs(grid.incidence) @ np.abs(grid.incidence).T)
    if connected_components(adj, directed=False)[0] != 1:
        raise TopologyError("DC grid is not connected")
    g = grid.conductance
    s = link.dc_index[slack_bus]
    others = np.array([k for k in range(nb) if k != s], dtype=np.int64)
    p_sched = np.zeros(nb)
    for bus, p in p_inj.items():
        p_sched[link.dc_index[bus]] += p
    u = np.full(nb, u_slack)
    it = 0
    for it in range(max_iter + 1):
        mis = (u * (g @ u) - p_sched)[others]
        norm = float(np.max(np.abs(mis))) if len(mis) else 0.0
        if norm < tol:
            break
        if it == max_iter:
            raise SolverError("DC power flow diverged", iterations=it, residual=norm)
        jac = np.diag(g @ u) + np.diag(u) @ g
        try:
            du = np.linalg.solve(jac[np.ix_(others, others)], -mis)
        except np.linalg.LinAlgError as ex:
            raise SolverError(f"Singular DC Jacobian: {ex}", iterations=it) from ex
        u[others] += du
        if np.any(u <= 0.0):
            raise SolverError(
                "DC power flow reached a non-positive voltage", iterations=it
            )
    i_line = (grid.incidence.T @ u) / grid.r
    return DcFlow(grid.bus_ids, u, i_line, u * (g @ u), grid.r, it)


@dataclass(frozen=True)
class GeneratorOutput:
    name: str
    bus: int
    p: float
    q: float


@dataclass(frozen=True)
class PowerFlowSolution:
    network: NetworkModel
    v: ComplexArray
    flows: tuple[BranchFlow, ...]
    generators: tuple[GeneratorOutput, ...]
    converters: tuple[ConverterPoint, ...] = ()
    dc: DcFlow | None = None
    iterations: Mapping[str, int] = field(default_factory=dict)
    s_conv: float = 1000.0

    @property
    def v_mag(self) -> FloatArray:
        return np.abs(self.v)

    @property
    def v_ang(self) -> FloatArray:
        return np.angle(self.v)

    def voltage(self, bus_id: int) -> complex:
        return complex(self.v[self.network.index(bus_id)])

    def converter(self, name: str) -> ConverterPoint:
        for c in self.converters:
            if c.name == name:
                return c
        raise KeyError(name)

    def generator(self, name: str) -> GeneratorOutput:
        for g in self.generators:
            if g.name == name:
                return g
        raise KeyError(name)

    def flow(self, circuit_id: str) -> BranchFlow:
        for f in self.flows:
            if f.circuit_id == circuit_id:
                return f
        raise KeyError(circuit_id)

    def p_hvdc_mw(self, converter: str) -> float:
        return -self.converter(converter).p_s * self.s_conv

    def balance(self) -> dict[str, float]:
        """System-wide active power bookkeeping in MW."""
        net = self.network
        shunt = sum(b.shunt_g * abs(self.voltage(b.id)) ** 2 for b in net.buses)
        conv = sum(c.p_loss + c.p_reactor for c in self.converters)
        return {
            'generation': sum(g.p for g in self.generators) * net.s_base,
            'load': sum(ld.p0 for ld in net.loads),
            'ac_losses': sum(f.losses for f in self.flows) + shunt * net.s_base,
            'converter_losses': conv * self.s_conv,
            'dc_losses': (self.dc.losses if self.dc else 0.0) * self.s_conv,
        }


def generator_dispatch(
    scenario: Scenario, network: NetworkModel
) -> list[GeneratorDispatch]:
    per_bus: dict[int, list[float]] = defaultdict(list)
    v_set: dict[int, float] = {}
    for g in scenario.generators:
        per_bus[g.bus].append(g.p_mw / network.s_base)
        v_set.setdefault(g.bus, g.v_set)
    return [GeneratorDispatch(b, sum(ps), v_set[b]) for b, ps in per_bus.items()]


def _generator_outputs(
    scenario: Scenario, network: NetworkModel, ac: AcPowerFlow
) -> tuple[GeneratorOutput, ...]:
    rating: dict[int, float] = defaultdict(float)
    for g in scenario.generators:
        rating[g.bus] += g.params.s_rated
    ret = []
    for g in scenario.generators:
        s = ac.s_gen[network.index(g.bus)] * g.params.s_rated / rating[g.bus]
        ret.append(GeneratorOutput(g.name, g.bus, float(s.real), float(s.imag)))
    return tuple(ret)


def sequential_acdc_powerflow(
    scenario: Scenario,
    p_schedule: Mapping[str, float] | None = None,
    *,
    network: NetworkModel | None = None,
) -> PowerFlowSolution:
    """Sequential AC/DC power flow.

    ``p_schedule`` overrides the AC injections (converter base) of
    power-controlling converters by name.
    """
    net = network or scenario.network
    cfg = scenario.solver
    dispatch = generator_dispatch(scenario, net)
    link = scenario.link
    if link is None or not link.converters:
        ac = solve_ac_powerflow(net, dispatch, tol=cfg.pf_tol, max_iter=cfg.pf_max_iter)
        flows = tuple(branch_flows(net, ac.v))
        gens = _generator_outputs(scenario, net, ac)
        return PowerFlowSolution(net, ac.v, flows, gens, iterations={'ac': ac.iterations})

    scale = link.s_base_mva / net.s_base
    slack = link.dc_slack
    p_sched = {c.name: c.p_ref for c in link.converters if c is not slack}
    p_sched.update(p_schedule or {})

    def q_of(c: VscParams) -> float:
        return c.q_ref if c.q_mode == QAxisMode.Q else 0.0

    def dc_flow(points: Sequence[ConverterPoint]) -> DcFlow:
        p_dc = {link.converter(pt.name).dc_bus: pt.p_dc for pt in points}
        return solve_dc_network(
            link,
            slack.dc_bus,
            slack.u_dc_ref,
            p_dc,
            tol=cfg.pf_tol,
            max_iter=cfg.pf_max_iter,
        )

    others = [c for c in link.converters if c is not slack]
    guess = [converter_point(c, 1.0 + 0.0j, p_sched[c.name], q_of(c)) for c in others]
    dc = dc_flow(guess)
    p_slack = p_s_from_p_dc(slack, dc.p_at(slack.dc_bus), q_of(slack), 1.0)

    v_guess = None
    trace: list[tuple[float, float]] = []
    ac_iters = 0
    for outer in range(1, cfg.outer_max_iter + 1):
        inj: dict[int, complex] = defaultdict(complex)
        vctl: dict[int, float] = {}
        for c in link.converters:
            p = p_slack if c is slack else p_sched[c.name]
            inj[c.ac_bus] += complex(p, q_of(c)) * scale
            if c.q_mode == QAxisMode.U_AC:
                vctl[c.ac_bus] = c.u_ac_ref
        ac = solve_ac_powerflow(
            net,
            dispatch,
            inj,
            voltage_control=vctl,
            tol=cfg.pf_tol,
            max_iter=cfg.pf_max_iter,
            v0=v_guess,
        )
        v_guess = ac.v
        ac_iters += ac.iterations

        def q_actual(c: VscParams) -> float:
            if c.q_mode == QAxisMode.U_AC:
                return float(ac.s_gen[net.index(c.ac_bus)].imag) / scale
            return c.q_ref

        points = [
            converter_point(c, ac.v[net.index(c.ac_bus)], p_sched[c.name], q_actual(c))
            for c in others
        ]
        dc = dc_flow(points)
        v_slack = ac.v[net.index(slack.ac_bus)]
        target = p_s_from_p_dc(slack, dc.p_at(slack.dc_bus), q_actual(slack), abs(v_slack))
        delta = target - p_slack
        trace.append((p_slack, delta))
        if abs(delta) < cfg.outer_tol:
            break
        p_slack += cfg.damping * delta
    else:
        raise SolverError(
            "Sequential AC/DC power flow did not converge",
            iterations=cfg.outer_max_iter,
            residual=abs(delta),
            trace=trace,
        )
    points.append(converter_point(slack, v_slack, p_slack, q_actual(slack)))
    order = [c.name for c in link.converters]
    ordered = [
        replace(pt, u_dc=dc.u_at(link.converter(pt.name).dc_bus))
        for pt in sorted(points, key=lambda pt: order.index(pt.name))
    ]
    for pt in ordered:
        if pt.i_s > link.converter(pt.name).i_max:
            warn(f"Converter {pt.name} operates above its current rating", RuntimeWarning)
    log.debug("Sequential AC/DC power flow converged in %d outer iterations", outer)
    return PowerFlowSolution(
        net,
        ac.v,
        tuple(branch_flows(net, ac.v)),
        _generator_outputs(scenario, net, ac),
        tuple(ordered),
        dc,
        {'ac': ac_iters, 'outer': outer, 'dc': dc.iterations},
        link.s_base_mva,
    )


@dataclass(frozen=True)
class AcleOperatingPoint:
    solution: PowerFlowSolution
    p_s1: float
    angle_difference: float
    iterations: int
    trace: tuple[tuple[float, float], ...]

    @property
    def p_hvdc_mw(self) -> float:
        return -self.p_s1 * self.solution.s_conv


def acle_operating_point(
    scenario: Scenario,
    k: float | None = None,
    p_cons: float | None = None,
    *,
    network: NetworkModel | None = None,
) -> AcleOperatingPoint:
    """Power flow satisfying ``p_s1 = p_cons - K (delta_s1 - delta_s2)``.

    ``k`` and ``p_cons`` (converter base, injection convention) default to the
    scenario controller settings. The search starts from the first setpoint
    near ``p_cons`` whose sequential power flow converges, steps along the
    residual until it changes sign and then solves the bracket with Brent's
    method. A setpoint of ``p_cons`` can lie beyond the AC corridor's transfer
    limit even when the emulation fixed point does not.
    """
    settings = scenario.acle
    link = scenario.link
    if link is None:
        raise DataError("AC-line emulation needs an HVDC link")
    if link.converter(settings.converter).d_mode != DAxisMode.P:
        raise DataError(f"Converter {settings.converter} must be in power control")
    k = settings.k if k is None else k
    p_cons = settings.p_cons(link.s_base_mva) if p_cons is None else p_cons
    cfg = scenario.solver
    trace: list[tuple[float, float]] = []
    solved: dict[float, tuple[PowerFlowSolution, float]] = {}

    def residual(p: float) -> float:
        sol = sequential_acdc_powerflow(scenario, {settings.converter: p}, network=network)
        th_1 = sol.converter(settings.converter).theta_s
        th_2 = sol.converter(settings.remote).theta_s
        d = wrap_angle(th_1 - th_2)
        r = p - (p_cons - k * d)
        solved[p] = (sol, d)
        trace.append((p, r))
        return r

    if k == 0.0:
        residual(p_cons)
        sol, d = solved[p_cons]
        return AcleOperatingPoint(sol, p_cons, d, 0, tuple(trace))
    p_a, r_a = _converged_seed(residual, p_cons)
    if r_a == 0.0:
        sol, d = solved[p_a]
        return AcleOperatingPoint(sol, p_a, d, 0, tuple(trace))
    p_b = _bracket_sign_change(residual, p_a, r_a)
    p, info = brentq(
        residual,
        min(p_a, p_b),
        max(p_a, p_b),
        xtol=cfg.outer_tol,
        maxiter=cfg.acle_max_iter,
        full_output=True,
        disp=False,
    )
    if not info.converged:
        raise SolverError(
            "Emulation operating point did not converge",
            iterations=info.iterations,
            trace=trace,
        )
    if p not in solved:
        residual(p)
    sol, d = solved[p]
    log.debug("Emulation operating point converged in %d iterations", info.iterations)
    return AcleOperatingPoint(sol, p, d, info.iterations, tuple(trace))


def _converged_seed(
    residual: Callable[[float], float], p_cons: float
) -> tuple[float, float]:
    """First setpoint of ``p_cons, p_cons - h, p_cons + h, p_cons - 2h, ...`` that solves."""
    candidates = [p_cons]
    for i in range(1, _SEED_TRIES + 1):
        candidates += [p_cons - i * _SEED_STEP, p_cons + i * _SEED_STEP]
    for p in candidates:
        try:
            return p, residual(p)
        except SolverError as ex:
            log.debug("No power flow at setpoint %.3f pu: %s", p, ex)
    raise SolverError(
        f"No converter setpoint within {_SEED_TRIES * _SEED_STEP:g} pu of"
        f" {p_cons:g} pu gives a converged power flow"
    )


def _bracket_sign_change(
    residual: Callable[[float], float], p_a: float, r_a: float
) -> float:
    """Walk from ``p_a`` against the residual until it changes sign.

    Steps into setpoints that do not solve are halved.
    """
    step = -math.copysign(_SEED_STEP, r_a)
    for _ in range(4 * _SEED_TRIES):
        p_b = p_a + step
        try:
            r_b = residual(p_b)
        except SolverError:
            step /= 2.0
            continue
        if math.copysign(1.0, r_b) != math.copysign(1.0, r_a):
            return p_b
        p_a, r_a = p_b, r_b
    raise SolverError("No sign change of the emulation residual found", residual=abs(r_a))


def post_event_operating_point(
    scenario: Scenario, circuits: Sequence[str]
) -> AcleOperatingPoint:
    """Operating point with the given circuits removed and the same controller law."""
    network = scenario.network.without_circuits(circuits)
    return acle_operating_point(scenario, network=network)
