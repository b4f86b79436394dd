"""Point-to-point VSC-HVDC link: data model, outer/inner controls and DC side.

Converter quantities are per unit on the converter base (1000 MVA by
default, AC voltage base of the PCC bus). The DC side uses the pole-to-pole
voltage and the converter power rating as bases; capacitances and
inductances are converted to seconds on that base.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from functools import cached_property

import numpy as np

from .errors import DataError, DcCollapseError
from .typeshed import FloatArray


log = logging.getLogger(__name__)

FEEDFORWARD_MIN_VOLTAGE = 0.05
DC_COLLAPSE_VOLTAGE = 0.2


class DAxisMode(StrEnum):
    P = 'P'
    U_DC = 'u_dc'


class QAxisMode(StrEnum):
    Q = 'Q'
    U_AC = 'u_ac'


class Direction(StrEnum):
    RECTIFIER = 'rectifier'
    INVERTER = 'inverter'

    @staticmethod
    def of(p_c: float) -> Direction:
        return Direction.RECTIFIER if p_c < 0.0 else Direction.INVERTER


@dataclass(frozen=True)
class ConverterLossModel:
    a: float = 5.25e-3
    b: float = 1.65e-3
    c_rectifier: float = 2.10e-3
    c_inverter: float = 3.14e-3

    def __post_init__(self) -> None:
        if self.a < 0.0:
            raise DataError("Converter no-load loss must be non-negative")

    def loss(self, i_s: float, direction: Direction) -> float:
        c = self.c_rectifier if direction == Direction.RECTIFIER else self.c_inverter
        return self.a + self.b * i_s + c * i_s * i_s


@dataclass(frozen=True)
class VscParams:
    name: str
    ac_bus: int
    dc_bus: int
    d_mode: DAxisMode = DAxisMode.P
    q_mode: QAxisMode = QAxisMode.Q
    p_ref: float = 0.0
    q_ref: float = 0.0
    u_dc_ref: float = 1.0
    u_ac_ref: float = 1.0
    v_ac_kv: float | None = None  # kV base of u_c; None uses the PCC bus base
    r_s: float = 0.02
    x_s: float = 0.20
    tau: float = 0.005
    kp_dc: float = 10.0
    ki_dc: float = 20.0
    kp_ac: float = 1.0
    ki_ac: float = 20.0
    p_max: float = 1.0
    q_max: float = 0.45
    i_max: float = 1.0
    u_dc_band: float = 0.1
    m_max: float = 1.31
    c_vsc_uf: float = 193.57
    losses: ConverterLossModel = field(default_factory=ConverterLossModel)

    def __post_init__(self) -> None:
        if self.tau <= 0.0:
            raise DataError(f"Inner-loop time constant of {self.name} must be positive")
        for lim in ('p_max', 'q_max', 'i_max', 'u_dc_band', 'm_max'):
            if getattr(self, lim) <= 0.0:
                raise DataError(f"Limit {lim} of {self.name} must be positive")
        if self.v_ac_kv is not None and self.v_ac_kv <= 0.0:
            raise DataError(f"AC voltage base of {self.name} must be positive")


@dataclass(frozen=True)
class DcBus:
    id: int


@dataclass(frozen=True)
class DcLine:
    id: str
    from_bus: int
    to_bus: int
    length_km: float
    r_ohm_per_km: float = 0.0137
    l_mh_per_km: float = 0.9339
    c_uf_per_km: float = 0.0119

    def __post_init__(self) -> None:
        if self.length_km <= 0.0 or self.r_ohm_per_km <= 0.0:
            raise DataError(f"DC line {self.id} needs positive length and resistance")
        if self.l_mh_per_km <= 0.0:
            raise DataError(f"DC line {self.id} needs positive inductance")

    @property
    def r_ohm(self) -> float:
        return self.r_ohm_per_km * self.length_km

    @property
    def l_h(self) -> float:
        return self.l_mh_per_km * self.length_km * 1e-3

    @property
    def c_uf(self) -> float:
        return self.c_uf_per_km * self.length_km


@dataclass(frozen=True)
class DcGridModel:
    """Numeric DC network in per unit, time constants in seconds."""

    bus_ids: tuple[int, ...]
    c: FloatArray
    r: FloatArray
    l: FloatArray
    incidence: FloatArray  # buses x lines, +1 at the sending end

    @property
    def conductance(self) -> FloatArray:
        return self.incidence @ np.diag(1.0 / self.r) @ self.incidence.T


@dataclass(frozen=True)
class VscHvdcLink:
    converters: tuple[VscParams, ...]
    dc_buses: tuple[DcBus, ...]
    dc_lines: tuple[DcLine, ...]
    s_base_mva: float = 1000.0
    u_dc_base_kv: float = 640.0

    @cached_property
    def dc_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.dc_buses)}

    @property
    def z_base(self) -> float:
        return self.u_dc_base_kv**2 / self.s_base_mva

    def converter(self, name: str) -> VscParams:
        for c in self.converters:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def dc_slack(self) -> VscParams:
        slacks = [c for c in self.converters if c.d_mode == DAxisMode.U_DC]
        if len(slacks) != 1:
            raise DataError("Exactly one converter per DC grid must control u_dc")
        return slacks[0]

    def capacitance_uf(self, bus_id: int) -> float:
        """Equivalent DC bus capacitance: converter plus half of each line."""
        ret = sum(c.c_vsc_uf for c in self.converters if c.dc_bus == bus_id)
        for ln in self.dc_lines:
            if bus_id in (ln.from_bus, ln.to_bus):
                ret += ln.c_uf / 2.0
        return ret

    @cached_property
    def dc_model(self) -> DcGridModel:
        zb = self.z_base
        nb = len(self.dc_buses)
        inc = np.zeros((nb, len(self.dc_lines)))
        for j, ln in enumerate(self.dc_lines):
            inc[self.dc_index[ln.from_bus], j] = 1.0
            inc[self.dc_index[ln.to_bus], j] = -1.0
        return DcGridModel(
            tuple(b.id for b in self.dc_buses),
            np.array([self.capacitance_uf(b.id) * 1e-6 * zb for b in self.dc_buses]),
            np.array([ln.r_ohm / zb for ln in self.dc_lines]),
            np.array([ln.l_h / zb for ln in self.dc_lines]),
            inc,
        )


@dataclass(frozen=True)
class VscState:
    i_d: float
    i_q: float
    xi_dc: float = 0.0
    xi_ac: float = 0.0
    u_s: float = 1.0
    delta_s: float = 0.0


@dataclass(frozen=True)
class DcGridState:
    u_dc: FloatArray
    i_line: FloatArray


@dataclass(frozen=True)
class CurrentOrders:
    i_d_ref: float
    i_q_ref: float
    e_dc: float = 0.0
    e_ac: float = 0.0
    feedforward_held: bool = False


@dataclass(frozen=True)
class LimitedOrders:
    i_d: float
    i_q: float
    d_limited: bool
    q_limited: bool

    @property
    def limited(self) -> bool:
        return self.d_limited or self.q_limited


def outer_control(
    params: VscParams,
    p_ref: float,
    q_ref: float,
    u_s: float,
    u_dc: float,
    state: VscState,
    last: CurrentOrders | None = None,
) -> CurrentOrders:
    """Current references from the outer controllers.

    P/Q references are clamped to the converter ratings before the
    feedforward division. Below ``FEEDFORWARD_MIN_VOLTAGE`` the feedforward
    orders are held at their last values.
    """
    low = u_s < FEEDFORWARD_MIN_VOLTAGE
    held = False
    e_dc = e_ac = 0.0
    if params.d_mode == DAxisMode.U_DC:
        e_dc = params.u_dc_ref - u_dc
        i_d_ref = -(params.kp_dc * e_dc + state.xi_dc)
    elif low:
        i_d_ref = last.i_d_ref if last else 0.0
        held = True
    else:
        i_d_ref = float(np.clip(p_ref, -params.p_max, params.p_max)) / u_s
    if params.q_mode == QAxisMode.U_AC:
        e_ac = params.u_ac_ref - u_s
        i_q_ref = -(params.kp_ac * e_ac + state.xi_ac)
    elif low:
        i_q_ref = last.i_q_ref if last else 0.0
        held = True
    else:
        i_q_ref = -float(np.clip(q_ref, -params.q_max, params.q_max)) / u_s
    return CurrentOrders(i_d_ref, i_q_ref, e_dc, e_ac, held)


def enforce_limits(i_d_ref: float, i_q_ref: float, params: VscParams) -> LimitedOrders:
    """Current limit with d-axis priority."""
    i_max = params.i_max
    i_d = min(max(i_d_ref, -i_max), i_max)
    q_room = math.sqrt(max(0.0, i_max * i_max - i_d * i_d))
    i_q = min(max(i_q_ref, -q_room), q_room)
    return LimitedOrders(i_d, i_q, i_d != i_d_ref, i_q != i_q_ref)


def vsc_dynamics(
    state: VscState,
    orders: CurrentOrders,
    limited: LimitedOrders,
    params: VscParams,
) -> tuple[float, float, float, float]:
    """Derivatives (di_d, di_q, dxi_dc, dxi_ac) of the first-order inner loops."""
    di_d = (limited.i_d - state.i_d) / params.tau
    di_q = (limited.i_q - state.i_q) / params.tau
    dxi_dc = 0.0
    if params.d_mode == DAxisMode.U_DC:
        dxi_dc = params.ki_dc * orders.e_dc
        if limited.d_limited and (orders.i_d_ref > 0.0) == (dxi_dc < 0.0):
            dxi_dc = 0.0
    dxi_ac = 0.0
    if params.q_mode == QAxisMode.U_AC:
        dxi_ac = params.ki_ac * orders.e_ac
        if limited.q_limited and (orders.i_q_ref > 0.0) == (dxi_ac < 0.0):
            dxi_ac = 0.0
    return di_d, di_q, dxi_dc, dxi_ac


@dataclass(frozen=True)
class ConverterPower:
    p_s: float
    q_s: float
    p_c: float
    i_s: float
    u_c: float


def converter_power(
    params: VscParams, u_s: float, i_d: float, i_q: float
) -> ConverterPower:
    """AC-side powers for dq currents in the frame of the PCC voltage."""
    i = complex(i_d, i_q)
    z = complex(params.r_s, params.x_s)
    i_s = abs(i)
    u_c = abs(u_s + z * i)
    p_s = u_s * i_d
    return ConverterPower(p_s, -u_s * i_q, p_s + params.r_s * i_s * i_s, i_s, u_c)


def modulation_ok(
    params: VscParams, u_c: float, u_dc: float, u_dc_base_kv: float, pcc_base_kv: float
) -> bool:
    """Whether ``m_max`` at the present DC voltage can synthesize ``u_c``."""
    v_ac_kv = params.v_ac_kv or pcc_base_kv
    u_pole_kv = u_dc * u_dc_base_kv / 2.0
    u_c_max = params.m_max * u_pole_kv * math.sqrt(1.5) / v_ac_kv
    return u_c <= u_c_max


def dc_coupling(
    p_c: float, p_loss: float, u_dc: float, converter: str = ''
) -> tuple[float, float]:
    """DC power and current injected at the converter DC bus."""
    if u_dc <= DC_COLLAPSE_VOLTAGE:
        raise DcCollapseError(converter, u_dc)
    p_dc = -(p_c + p_loss)
    return p_dc, p_dc / u_dc


def dc_grid_derivatives(
    grid: DcGridModel, state: DcGridState, i_inj: FloatArray
) -> tuple[FloatArray, FloatArray]:
    du = (i_inj - grid.incidence @ state.i_line) / grid.c
    di = (grid.incidence.T @ state.u_dc - grid.r * state.i_line) / grid.l
    return du, di
