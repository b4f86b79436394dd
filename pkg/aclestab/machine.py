"""Synchronous machines with exciter, PSS and governor.

Round-rotor two-axis model with subtransient EMFs (x''d = x''q). Machine
quantities are per unit on the machine rating; the network interface converts
to the system base. The rotor frame is ``V_dq = V * exp(-j(delta - pi/2))``.

Evaluation is vectorized over a ``MachineBank``; state arrays have one row per
machine and the columns listed in ``S``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, fields
from enum import IntEnum, StrEnum

import numpy as np

from .errors import DataError, InitializationError
from .typeshed import BoolArray, ComplexArray, FloatArray


log = logging.getLogger(__name__)


class MachineModel(StrEnum):
    DETAILED = 'detailed'
    CLASSICAL = 'classical'


class S(IntEnum):
    DELTA = 0
    OMEGA = 1
    EQ_P = 2
    ED_P = 3
    EQ_PP = 4
    ED_PP = 5
    EFD = 6
    PM = 7
    PSS_W = 8
    PSS_1 = 9
    PSS_2 = 10


NUM_STATES = len(S)


@dataclass(frozen=True)
class MachineParams:
    s_rated: float = 900.0
    h: float = 4.5
    d: float = 0.0
    xd: float = 1.8
    xq: float = 1.7
    xd_p: float = 0.3
    xq_p: float = 0.55
    xd_pp: float = 0.25
    xq_pp: float = 0.25
    xl: float = 0.2
    ra: float = 0.0025
    td0_p: float = 8.0
    tq0_p: float = 0.4
    td0_pp: float = 0.03
    tq0_pp: float = 0.05

    def __post_init__(self) -> None:
        if not (self.xd >= self.xd_p >= self.xd_pp > self.xl >= 0.0):
            raise DataError("Reactances must satisfy xd >= x'd >= x''d > xl >= 0")
        if not (self.xq >= self.xq_p >= self.xq_pp):
            raise DataError("Reactances must satisfy xq >= x'q >= x''q")
        if self.xq_pp != self.xd_pp:
            raise DataError("Subtransient saliency is not modelled: x''q must equal x''d")
        if self.h <= 0.0 or self.s_rated <= 0.0:
            raise DataError("Inertia and rating must be positive")
        if min(self.td0_p, self.tq0_p, self.td0_pp, self.tq0_pp) <= 0.0:
            raise DataError("Machine time constants must be positive")


@dataclass(frozen=True)
class ControlChain:
    exciter_ka: float = 200.0
    exciter_ta: float = 0.01
    efd_min: float = -6.0
    efd_max: float = 6.0
    pss_enabled: bool = True
    pss_ks: float = 20.0
    pss_tw: float = 10.0
    pss_t1: float = 0.05
    pss_t2: float = 0.02
    pss_t3: float = 3.0
    pss_t4: float = 5.4
    pss_vmax: float = 0.2
    governor_enabled: bool = True
    gov_r: float = 0.05
    gov_tg: float = 0.5
    pm_min: float = 0.0
    pm_max: float = 1.0

    def __post_init__(self) -> None:
        taus = (self.exciter_ta, self.pss_tw, self.pss_t2, self.pss_t4, self.gov_tg)
        if min(taus) <= 0.0:
            raise DataError("Control time constants must be positive")
        if self.efd_min >= self.efd_max or self.pm_min >= self.pm_max:
            raise DataError("Control limits must be ordered")
        if self.gov_r <= 0.0:
            raise DataError("Governor droop must be positive")


@dataclass(frozen=True)
class Generator:
    name: str
    bus: int
    p_mw: float
    v_set: float
    params: MachineParams
    controls: str = 'default'
    model: MachineModel = MachineModel.DETAILED


@dataclass(frozen=True)
class MachineState:
    delta: float
    omega: float
    eq_p: float
    ed_p: float
    eq_pp: float
    ed_pp: float
    efd: float
    pm: float
    pss_w: float = 0.0
    pss_1: float = 0.0
    pss_2: float = 0.0

    def to_array(self) -> FloatArray:
        return np.array([getattr(self, f.name) for f in fields(self)])

    @staticmethod
    def from_array(x: FloatArray) -> MachineState:
        return MachineState(*(float(v) for v in x))


@dataclass(frozen=True)
class MachineRefs:
    v_ref: FloatArray
    p_ref: FloatArray


class MachineBank:
    """Parameter columns of a set of machines."""

    s_rated: FloatArray
    h: FloatArray
    d: FloatArray
    xd: FloatArray
    xq: FloatArray
    xd_p: FloatArray
    xq_p: FloatArray
    xd_pp: FloatArray
    xq_pp: FloatArray
    xl: FloatArray
    ra: FloatArray
    td0_p: FloatArray
    tq0_p: FloatArray
    td0_pp: FloatArray
    tq0_pp: FloatArray
    exciter_ka: FloatArray
    exciter_ta: FloatArray
    efd_min: FloatArray
    efd_max: FloatArray
    pss_ks: FloatArray
    pss_tw: FloatArray
    pss_t1: FloatArray
    pss_t2: FloatArray
    pss_t3: FloatArray
    pss_t4: FloatArray
    pss_vmax: FloatArray
    gov_r: FloatArray
    gov_tg: FloatArray
    pm_min: FloatArray
    pm_max: FloatArray

    def __init__(
        self,
        generators: Sequence[Generator],
        chains: Sequence[ControlChain],
        s_base: float = 100.0,
        f_hz: float = 50.0,
    ):
        self.names = tuple(g.name for g in generators)
        self.size = len(generators)
        for f in fields(MachineParams):
            col = [getattr(g.params, f.name) for g in generators]
            setattr(self, f.name, np.array(col, dtype=float))
        for f in fields(ControlChain):
            col = [getattr(c, f.name) for c in chains]
            setattr(self, f.name, np.array(col, dtype=float))
        self.pss_on: BoolArray = np.array([c.pss_enabled for c in chains], dtype=bool)
        self.gov_on: BoolArray = np.array([c.governor_enabled for c in chains], dtype=bool)
        self.classical: BoolArray = np.array(
            [g.model == MachineModel.CLASSICAL for g in generators], dtype=bool
        )
        self.scale = self.s_rated / s_base
        self.omega_s = 2.0 * math.pi * f_hz
        self.z_pp = self.ra + 1j * self.xd_pp

    def rotor_frame(self, x: FloatArray) -> ComplexArray:
        return np.exp(1j * (x[:, S.DELTA] - math.pi / 2.0))

    def emf(self, x: FloatArray) -> ComplexArray:
        """Subtransient EMF in the network frame."""
        return (x[:, S.ED_PP] + 1j * x[:, S.EQ_PP]) * self.rotor_frame(x)


def machine_norton_injection(
    bank: MachineBank, x: FloatArray
) -> tuple[ComplexArray, ComplexArray]:
    """Norton current source and shunt admittance on the system base."""
    y = bank.scale / bank.z_pp
    return bank.emf(x) * y, y


def stator_currents(bank: MachineBank, x: FloatArray, v_t: ComplexArray) -> ComplexArray:
    """Stator current in the rotor frame, machine base."""
    rot = np.conj(bank.rotor_frame(x))
    e_dq = x[:, S.ED_PP] + 1j * x[:, S.EQ_PP]
    return (e_dq - v_t * rot) / bank.z_pp


def pss_output(
    bank: MachineBank, x: FloatArray
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    u = bank.pss_ks * x[:, S.OMEGA]
    y_w = u - x[:, S.PSS_W]
    y_1 = x[:, S.PSS_1] + bank.pss_t1 / bank.pss_t2 * (y_w - x[:, S.PSS_1])
    y_2 = x[:, S.PSS_2] + bank.pss_t3 / bank.pss_t4 * (y_1 - x[:, S.PSS_2])
    v_s = np.where(bank.pss_on, np.clip(y_2, -bank.pss_vmax, bank.pss_vmax), 0.0)
    return v_s, u, y_w, y_1


def _anti_windup(
    dx: FloatArray, value: FloatArray, lo: FloatArray, hi: FloatArray
) -> FloatArray:
    stuck = ((value >= hi) & (dx > 0.0)) | ((value <= lo) & (dx < 0.0))
    return np.where(stuck, 0.0, dx)


def bank_derivatives(
    bank: MachineBank, x: FloatArray, v_t: ComplexArray, refs: MachineRefs
) -> tuple[FloatArray, FloatArray]:
    """State derivatives and air-gap power (machine base) of all machines."""
    i_dq = stator_currents(bank, x, v_t)
    i_d, i_q = i_dq.real, i_dq.imag
    pe = x[:, S.ED_PP] * i_d + x[:, S.EQ_PP] * i_q
    omega = x[:, S.OMEGA]
    dx = np.zeros_like(x)
    dx[:, S.DELTA] = bank.omega_s * omega
    dx[:, S.OMEGA] = (x[:, S.PM] - pe - bank.d * omega) / (2.0 * bank.h)

    detailed = ~bank.classical
    efd = x[:, S.EFD]
    dx[:, S.EQ_P] = (efd - x[:, S.EQ_P] - (bank.xd - bank.xd_p) * i_d) / bank.td0_p
    dx[:, S.ED_P] = (-x[:, S.ED_P] + (bank.xq - bank.xq_p) * i_q) / bank.tq0_p
    dx[:, S.EQ_PP] = (
        -x[:, S.EQ_PP] + x[:, S.EQ_P] - (bank.xd_p - bank.xd_pp) * i_d
    ) / bank.td0_pp
    dx[:, S.ED_PP] = (
        -x[:, S.ED_PP] + x[:, S.ED_P] + (bank.xq_p - bank.xq_pp) * i_q
    ) / bank.tq0_pp

    v_s, u, y_w, y_1 = pss_output(bank, x)
    dx[:, S.PSS_W] = np.where(bank.pss_on, (u - x[:, S.PSS_W]) / bank.pss_tw, 0.0)
    dx[:, S.PSS_1] = np.where(bank.pss_on, (y_w - x[:, S.PSS_1]) / bank.pss_t2, 0.0)
    dx[:, S.PSS_2] = np.where(bank.pss_on, (y_1 - x[:, S.PSS_2]) / bank.pss_t4, 0.0)

    d_efd = (bank.exciter_ka * (refs.v_ref - np.abs(v_t) + v_s) - efd) / bank.exciter_ta
    dx[:, S.EFD] = _anti_windup(d_efd, efd, bank.efd_min, bank.efd_max)
    pm = x[:, S.PM]
    d_pm = (refs.p_ref - omega / bank.gov_r - pm) / bank.gov_tg
    d_pm = _anti_windup(d_pm, pm, bank.pm_min, bank.pm_max)
    dx[:, S.PM] = np.where(bank.gov_on, d_pm, 0.0)

    frozen = slice(S.EQ_P, NUM_STATES)
    dx[:, frozen] = np.where(detailed[:, None], dx[:, frozen], 0.0)
    return dx, pe


def clip_limited_states(bank: MachineBank, x: FloatArray) -> None:
    """Clamp limited states in place after an integration step."""
    x[:, S.EFD] = np.clip(x[:, S.EFD], bank.efd_min, bank.efd_max)
    x[:, S.PM] = np.clip(x[:, S.PM], bank.pm_min, bank.pm_max)


def machine_derivatives(
    state: MachineState,
    v_t: complex,
    gen: Generator,
    controls: ControlChain,
    v_ref: float,
    p_ref: float,
    *,
    s_base: float = 100.0,
    f_hz: float = 50.0,
) -> MachineState:
    """Derivatives of a single machine, returned in state layout."""
    bank = MachineBank([gen], [controls], s_base, f_hz)
    refs = MachineRefs(np.array([v_ref]), np.array([p_ref]))
    dx, _ = bank_derivatives(bank, state.to_array()[None, :], np.array([v_t]), refs)
    return MachineState.from_array(dx[0])


@dataclass(frozen=True)
class MachineInit:
    x: FloatArray
    refs: MachineRefs


def init_machines(
    bank: MachineBank, v_t: ComplexArray, s_gen: ComplexArray
) -> MachineInit:
    """Back-initialize machine states from terminal voltages and outputs.

    ``s_gen`` is the complex power delivered by each machine, system base.
    """
    i_net = np.conj(s_gen / v_t) / bank.scale
    e_q = v_t + (bank.ra + 1j * bank.xq) * i_net
    delta = np.angle(e_q)
    rot = np.exp(-1j * (delta - math.pi / 2.0))
    v_dq = v_t * rot
    i_dq = i_net * rot
    vd, vq = v_dq.real, v_dq.imag
    i_d, i_q = i_dq.real, i_dq.imag
    eq_pp = vq + bank.ra * i_q + bank.xd_pp * i_d
    ed_pp = vd + bank.ra * i_d - bank.xq_pp * i_q
    ed_p = (bank.xq - bank.xq_p) * i_q
    eq_p = eq_pp + (bank.xd_p - bank.xd_pp) * i_d
    efd = eq_p + (bank.xd - bank.xd_p) * i_d
    pm = ed_pp * i_d + eq_pp * i_q

    x = np.zeros((bank.size, NUM_STATES))
    x[:, S.DELTA] = delta
    x[:, S.EQ_P] = eq_p
    x[:, S.ED_P] = ed_p
    x[:, S.EQ_PP] = eq_pp
    x[:, S.ED_PP] = ed_pp
    x[:, S.EFD] = efd
    x[:, S.PM] = pm
    for k, name in enumerate(bank.names):
        if bank.classical[k]:
            continue
        if not bank.efd_min[k] <= efd[k] <= bank.efd_max[k]:
            msg = f"required field voltage {efd[k]:.4f} pu outside limits"
            raise InitializationError(name, msg)
        if not bank.pm_min[k] <= pm[k] <= bank.pm_max[k]:
            msg = f"required mechanical power {pm[k]:.4f} pu outside limits"
            raise InitializationError(name, msg)
    v_ref = np.abs(v_t) + efd / bank.exciter_ka
    log.debug("Initialized %d machines", bank.size)
    return MachineInit(x, MachineRefs(v_ref, pm.copy()))
