"""AC network data model, nodal admittance matrix and algebraic network solution.

All network quantities are per unit on the system base (100 MVA, 220 kV by
default). Loads are given in MW/MVAr and converted on use.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from functools import cached_property
from typing import TypeAlias

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DataError, SolverError, TopologyError
from .typeshed import ComplexArray, FloatArray, IntArray


log = logging.getLogger(__name__)

DEFAULT_FAULT_ADMITTANCE = 1e5
LOAD_RAMP_VOLTAGE = 0.4


class BusKind(StrEnum):
    SLACK = 'slack'
    PV = 'PV'
    PQ = 'PQ'


class LoadPModel(StrEnum):
    CONSTANT_CURRENT = 'constant_current'


class LoadQModel(StrEnum):
    CONSTANT_IMPEDANCE = 'constant_impedance'


class FaultLocation(StrEnum):
    NEAR_FROM_BUS = 'near_from_bus'


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind = BusKind.PQ
    base_kv: float = 220.0
    v_mag: float = 1.0
    v_ang: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    circuit_id: str
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0
    tap: float = 1.0
    in_service: bool = True

    def series_admittance(self) -> complex:
        if self.x == 0.0:
            raise DataError(f"Zero-reactance branch {self.circuit_id}")
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class Load:
    bus: int
    p0: float
    q0: float
    dynamic_p_model: LoadPModel = LoadPModel.CONSTANT_CURRENT
    dynamic_q_model: LoadQModel = LoadQModel.CONSTANT_IMPEDANCE


@dataclass(frozen=True)
class FaultSpec:
    branch: str
    t_on: float
    t_clear: float
    fault_admittance: float = DEFAULT_FAULT_ADMITTANCE
    location: FaultLocation = FaultLocation.NEAR_FROM_BUS

    def __post_init__(self) -> None:
        if not self.t_clear > self.t_on:
            msg = f"Fault on {self.branch} must clear after it starts"
            raise DataError(msg)
        if self.fault_admittance < 1e4:
            raise DataError(f"Fault admittance below 1e4 pu on {self.branch}")

    @property
    def duration(self) -> float:
        return self.t_clear - self.t_on


@dataclass(frozen=True)
class ActiveFault:
    circuit_id: str
    bus: int
    admittance: float


@dataclass(frozen=True)
class Trip:
    circuit_id: str


@dataclass(frozen=True)
class FaultOn:
    circuit_id: str
    admittance: float = DEFAULT_FAULT_ADMITTANCE


@dataclass(frozen=True)
class FaultClear:
    circuit_id: str


@dataclass(frozen=True)
class Reclose:
    circuit_id: str


TopologyEvent: TypeAlias = Trip | FaultOn | FaultClear | Reclose


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[Load, ...] = ()
    faults: tuple[ActiveFault, ...] = ()
    s_base: float = 100.0
    v_base_kv: float = 220.0
    f_hz: float = 50.0

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def size(self) -> int:
        return len(self.buses)

    def index(self, bus_id: int) -> int:
        try:
            return self.bus_index[bus_id]
        except KeyError:
            raise TopologyError(f"Unknown bus {bus_id}") from None

    def branch(self, circuit_id: str) -> Branch:
        for b in self.branches:
            if b.circuit_id == circuit_id:
                return b
        raise TopologyError(f"Unknown circuit {circuit_id!r}")

    def fault(self, circuit_id: str) -> ActiveFault | None:
        for f in self.faults:
            if f.circuit_id == circuit_id:
                return f
        return None

    def with_branch_service(self, circuit_id: str, in_service: bool) -> NetworkModel:
        branches = tuple(
            replace(b, in_service=in_service) if b.circuit_id == circuit_id else b
            for b in self.branches
        )
        return replace(self, branches=branches)

    def without_circuits(self, circuit_ids: Iterable[str]) -> NetworkModel:
        ret = self
        for cid in circuit_ids:
            ret = apply_topology_event(ret, Trip(cid))
        return ret


@dataclass(frozen=True)
class AdmittanceMatrix:
    bus_ids: tuple[int, ...]
    entries: sp.csr_matrix = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.bus_ids)

    def at(self, from_bus: int, to_bus: int) -> complex:
        i = self.bus_ids.index(from_bus)
        j = self.bus_ids.index(to_bus)
        return complex(self.entries[i, j])

    def to_dense(self) -> ComplexArray:
        return np.asarray(self.entries.toarray(), dtype=complex)


def _branch_arrays(
    network: NetworkModel,
) -> tuple[IntArray, IntArray, ComplexArray, ComplexArray, ComplexArray, ComplexArray]:
    idx = network.bus_index
    live = [b for b in network.branches if b.in_service]
    for b in live:
        if b.from_bus == b.to_bus:
            raise DataError(f"Branch {b.circuit_id} connects bus {b.from_bus} to itself")
        if b.tap <= 0.0:
            raise DataError(f"Non-positive tap on branch {b.circuit_id}")
        if b.from_bus not in idx or b.to_bus not in idx:
            raise TopologyError(f"Branch {b.circuit_id} references an unknown bus")
    f = np.array([idx[b.from_bus] for b in live], dtype=np.int64)
    t = np.array([idx[b.to_bus] for b in live], dtype=np.int64)
    ys = np.array([b.series_admittance() for b in live], dtype=complex)
    bc = np.array([b.b_shunt for b in live])
    tap = np.array([b.tap for b in live])
    ytt = ys + 0.5j * bc
    yff = ytt / tap**2
    yft = -ys / tap
    return f, t, yff, yft, yft.copy(), ytt


def build_ybus(network: NetworkModel) -> AdmittanceMatrix:
    """Nodal admittance matrix of the passive network including bus shunts and faults.

    Out-of-service branches contribute nothing. An energized bus left without
    any in-service branch is rejected.
    """
    n = network.size
    f, t, yff, yft, ytf, ytt = _branch_arrays(network)
    if n > 1:
        degree = np.bincount(np.concatenate([f, t]), minlength=n)
        for i in np.flatnonzero(degree == 0):
            raise TopologyError(f"Isolated energized bus {network.buses[i].id}")
    ysh = np.array([complex(b.shunt_g, b.shunt_b) for b in network.buses])
    for flt in network.faults:
        ysh[network.index(flt.bus)] += flt.admittance
    rows = np.concatenate([f, f, t, t, np.arange(n)])
    cols = np.concatenate([f, t, f, t, np.arange(n)])
    data = np.concatenate([yff, yft, ytf, ytt, ysh])
    ybus = sp.csr_matrix((data, (rows, cols)), shape=(n, n), dtype=complex)
    ybus.sum_duplicates()
    return AdmittanceMatrix(tuple(b.id for b in network.buses), ybus)


def apply_topology_event(network: NetworkModel, event: TopologyEvent) -> NetworkModel:
    branch = network.branch(event.circuit_id)
    faulted = network.fault(event.circuit_id)
    match event:
        case Trip():
            if not branch.in_service:
                raise TopologyError(f"Circuit {branch.circuit_id} already tripped")
            if faulted:
                raise TopologyError(f"Trip of faulted circuit {branch.circuit_id}")
            ret = network.with_branch_service(branch.circuit_id, False)
        case FaultOn(admittance=g):
            if not branch.in_service:
                raise TopologyError(f"Fault on open circuit {branch.circuit_id}")
            if faulted:
                raise TopologyError(f"Circuit {branch.circuit_id} already faulted")
            flt = ActiveFault(branch.circuit_id, branch.from_bus, g)
            ret = replace(network, faults=(*network.faults, flt))
        case FaultClear():
            if not faulted:
                raise TopologyError(f"No fault to clear on {branch.circuit_id}")
            faults = tuple(f for f in network.faults if f is not faulted)
            ret = replace(network, faults=faults)
            ret = ret.with_branch_service(branch.circuit_id, False)
        case Reclose():
            if branch.in_service:
                raise TopologyError(f"Circuit {branch.circuit_id} is not open")
            ret = network.with_branch_service(branch.circuit_id, True)
    log.debug("Applied %s", event)
    return ret


@dataclass(frozen=True)
class BranchFlow:
    circuit_id: str
    p_from: float
    q_from: float
    p_to: float
    q_to: float

    @property
    def losses(self) -> float:
        return self.p_from + self.p_to


def branch_flows(network: NetworkModel, v: ComplexArray) -> list[BranchFlow]:
    """Complex power entering each branch at both ends, MW/MVAr."""
    ret = []
    idx = network.bus_index
    for b in network.branches:
        if not b.in_service:
            ret.append(BranchFlow(b.circuit_id, 0.0, 0.0, 0.0, 0.0))
            continue
        ys = b.series_admittance()
        ytt = ys + 0.5j * b.b_shunt
        vf = v[idx[b.from_bus]]
        vt = v[idx[b.to_bus]]
        i_f = ytt / b.tap**2 * vf - ys / b.tap * vt
        i_t = -ys / b.tap * vf + ytt * vt
        sf = vf * np.conj(i_f) * network.s_base
        st = vt * np.conj(i_t) * network.s_base
        ret.append(BranchFlow(b.circuit_id, sf.real, sf.imag, st.real, st.imag))
    return ret


@dataclass(frozen=True)
class PhaseFollowingInjections:
    """Current injections of fixed size that follow the local voltage phase.

    The injection at bus k is ``current * V / max(|V|, v_floor)``. With
    ``v_floor`` zero the injection keeps its magnitude down to ``v_hold`` and
    below that uses ``hold_angle`` as the phase of the bus voltage.
    """

    bus_index: IntArray
    current: ComplexArray
    v_floor: FloatArray
    hold_angle: FloatArray
    v_hold: float = 0.01

    @staticmethod
    def empty() -> PhaseFollowingInjections:
        e = np.zeros(0)
        return PhaseFollowingInjections(e.astype(np.int64), e.astype(complex), e, e)

    @staticmethod
    def concat(parts: Sequence[PhaseFollowingInjections]) -> PhaseFollowingInjections:
        if not parts:
            return PhaseFollowingInjections.empty()
        return PhaseFollowingInjections(
            np.concatenate([p.bus_index for p in parts]),
            np.concatenate([p.current for p in parts]),
            np.concatenate([p.v_floor for p in parts]),
            np.concatenate([p.hold_angle for p in parts]),
            min(p.v_hold for p in parts),
        )

    def __len__(self) -> int:
        return len(self.bus_index)

    def _unit(self, v: ComplexArray) -> tuple[ComplexArray, FloatArray, FloatArray]:
        vk = v[self.bus_index]
        vm = np.abs(vk)
        den = np.maximum(vm, self.v_floor)
        held = (self.v_floor == 0.0) & (vm < self.v_hold)
        safe = np.where(held, 1.0, den)
        unit = np.where(held, np.exp(1j * self.hold_angle), vk / safe)
        return unit, vm, den

    def evaluate(self, n: int, v: ComplexArray) -> ComplexArray:
        unit, _, _ = self._unit(v)
        ret = np.zeros(n, dtype=complex)
        np.add.at(ret, self.bus_index, self.current * unit)
        return ret

    def jacobian(self, n: int, v: ComplexArray) -> sp.csc_matrix:
        """Derivative of the injections with respect to (Re V, Im V)."""
        unit, vm, den = self._unit(v)
        cr, ci = self.current.real, self.current.imag
        ur, ui = unit.real, unit.imag
        following = (vm >= self.v_floor) & (vm >= self.v_hold)
        ramp = (self.v_floor > 0.0) & (vm < self.v_floor)
        inv = np.where(following | ramp, 1.0 / np.where(den > 0, den, 1.0), 0.0)
        # projection removing the radial component while following the phase
        prr = np.where(following, 1.0 - ur * ur, 1.0) * inv
        pii = np.where(following, 1.0 - ui * ui, 1.0) * inv
        pri = np.where(following, -ur * ui, 0.0) * inv
        k = self.bus_index
        rows = np.concatenate([k, k, k + n, k + n])
        cols = np.concatenate([k, k + n, k, k + n])
        data = np.concatenate([
            cr * prr - ci * pri,
            cr * pri - ci * pii,
            ci * prr + cr * pri,
            ci * pri + cr * pii,
        ])
        return sp.csc_matrix((data, (rows, cols)), shape=(2 * n, 2 * n))


@dataclass(frozen=True)
class FrozenLoads:
    """Load models frozen at an operating point.

    Active power is a constant current magnitude (phase following, ramped to
    zero below ``LOAD_RAMP_VOLTAGE``); reactive power is a constant admittance.
    """

    bus_index: IntArray
    i_p: FloatArray
    y_q: ComplexArray

    def shunts(self, n: int) -> ComplexArray:
        ret = np.zeros(n, dtype=complex)
        np.add.at(ret, self.bus_index, self.y_q)
        return ret

    def injections(self) -> PhaseFollowingInjections:
        m = len(self.bus_index)
        return PhaseFollowingInjections(
            self.bus_index,
            -self.i_p.astype(complex),
            np.full(m, LOAD_RAMP_VOLTAGE),
            np.zeros(m),
        )


def freeze_loads(network: NetworkModel, v0: ComplexArray) -> FrozenLoads:
    idx = np.array([network.index(ld.bus) for ld in network.loads], dtype=np.int64)
    p = np.array([ld.p0 for ld in network.loads]) / network.s_base
    q = np.array([ld.q0 for ld in network.loads]) / network.s_base
    vm = np.abs(v0[idx]) if len(idx) else np.zeros(0)
    if np.any(vm <= 0.0):
        raise DataError("Load bus with zero initial voltage")
    return FrozenLoads(idx, p / vm, -1j * q / vm**2)


@dataclass(frozen=True)
class NetworkSolution:
    v: ComplexArray
    iterations: int
    residual: float


class NetworkSolver:
    """Repeated solution of Y·V = I_src + I(V) for one network topology.

    Quasi-Newton iteration in real coordinates: the Jacobian is factorized
    once and reused across calls, and refreshed whenever a solve needs more
    than ``refresh_after`` corrections.
    """

    def __init__(
        self,
        y: sp.spmatrix,
        *,
        tol: float = 1e-8,
        max_iter: int = 50,
        refresh_after: int = 3,
    ):
        self.y = sp.csr_matrix(y, dtype=complex)
        self.n = self.y.shape[0]
        self.tol = tol
        self.max_iter = max_iter
        self.refresh_after = refresh_after
        g = self.y.real
        b = self.y.imag
        self._ybig = sp.bmat([[g, -b], [b, g]], format='csc')
        self._lu: object | None = None
        self.factorizations = 0

    def _factorize(self, inj: PhaseFollowingInjections, v: ComplexArray) -> None:
        jac = self._ybig
        if len(inj):
            jac = (jac - inj.jacobian(self.n, v)).tocsc()
        try:
            self._lu = splu(jac)
        except RuntimeError as ex:
            raise TopologyError(f"Singular network matrix: {ex}") from ex
        self.factorizations += 1

    def residual(
        self, v: ComplexArray, sources: ComplexArray, inj: PhaseFollowingInjections
    ) -> ComplexArray:
        mis = self.y @ v - sources
        if len(inj):
            mis -= inj.evaluate(self.n, v)
        return mis

    def solve(
        self,
        sources: ComplexArray,
        injections: PhaseFollowingInjections | None = None,
        v0: ComplexArray | None = None,
    ) -> NetworkSolution:
        inj = injections if injections is not None else PhaseFollowingInjections.empty()
        n = self.n
        v = np.zeros(n, dtype=complex) if v0 is None else np.array(v0, dtype=complex)
        res = np.inf
        since_refresh = 0
        for it in range(self.max_iter + 1):
            mis = self.residual(v, sources, inj)
            res = float(np.max(np.abs(mis))) if n else 0.0
            if res < self.tol:
                return NetworkSolution(v, it, res)
            if it == self.max_iter:
                break
            if self._lu is None or since_refresh >= self.refresh_after:
                self._factorize(inj, v)
                since_refresh = 0
            dx = self._lu.solve(-np.concatenate([mis.real, mis.imag]))  # type: ignore
            if not np.all(np.isfinite(dx)):
                raise TopologyError("Singular network matrix")
            v = v + dx[:n] + 1j * dx[n:]
            since_refresh += 1
        msg = "Network solution did not converge"
        raise SolverError(msg, iterations=self.max_iter, residual=res)


def augmented_matrix(ybus: AdmittanceMatrix, shunts: ComplexArray) -> sp.csr_matrix:
    return (ybus.entries + sp.diags(shunts, format='csr')).tocsr()


def solve_network(
    ybus: AdmittanceMatrix,
    sources: ComplexArray,
    loads: FrozenLoads | None = None,
    *,
    shunts: ComplexArray | None = None,
    injections: PhaseFollowingInjections | None = None,
    v0: ComplexArray | None = None,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> ComplexArray:
    """Per-bus voltages for given Norton current sources and frozen loads.

    ``shunts`` are the Norton admittances of the sources, added to the
    diagonal together with the load reactive admittances.
    """
    n = ybus.dimension
    diag = np.zeros(n, dtype=complex) if shunts is None else np.asarray(shunts, complex)
    parts = [] if injections is None else [injections]
    if loads is not None:
        diag = diag + loads.shunts(n)
        parts.append(loads.injections())
    solver = NetworkSolver(augmented_matrix(ybus, diag), tol=tol, max_iter=max_iter)
    inj = PhaseFollowingInjections.concat(parts)
    return solver.solve(np.asarray(sources, complex), inj, v0).v
