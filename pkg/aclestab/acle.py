"""AC-line emulation: HVDC active-power setpoint from the PCC angle difference.

The converter setpoint follows

    p_ref = p_ini - K / (1 + T s) * (d_delta_1 - d_delta_2)

where ``d_delta_i`` is the angle increment of PCC ``i`` since initialization.
Powers are per unit on the converter base, injections into the AC grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import TYPE_CHECKING

from .errors import DataError, InitializationError

if TYPE_CHECKING:
    from .powerflow import PowerFlowSolution


log = logging.getLogger(__name__)

MEASUREMENT_MIN_VOLTAGE = 0.01
INIT_TOLERANCE = 1e-6


class AcleMode(StrEnum):
    CONSTANT_P = 'constant_p'
    AC_LINE_EMULATION = 'ac_line_emulation'


@dataclass(frozen=True)
class AcleSettings:
    mode: AcleMode = AcleMode.AC_LINE_EMULATION
    converter: str = 'VSC1'
    remote: str = 'VSC2'
    p_cons_mw: float = 0.0
    k_pu_per_rad: float = 1.0
    t_filter_s: float = 0.75

    def __post_init__(self) -> None:
        if self.k_pu_per_rad < 0.0:
            raise DataError("Emulation gain must be non-negative")
        if self.t_filter_s < 0.0:
            raise DataError("Filter time constant must be non-negative")

    @property
    def k(self) -> float:
        """Effective gain, zero in constant-power mode."""
        if self.mode == AcleMode.CONSTANT_P:
            return 0.0
        return self.k_pu_per_rad

    def p_cons(self, s_conv: float) -> float:
        """Scheduled injection of the emulating converter, converter base."""
        return -self.p_cons_mw / s_conv

    def x_hvdc(self, s_sys: float, s_conv: float) -> float:
        """Emulated reactance on the system base."""
        if self.k == 0.0:
            return math.inf
        return 1.0 / (self.k * s_conv / s_sys)


def gain_from_reactance(x_hvdc: float, s_sys: float, s_conv: float) -> float:
    if x_hvdc == 0.0:
        raise DataError("Emulated reactance must be non-zero")
    return (1.0 / x_hvdc) * s_sys / s_conv


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class AcleState:
    y: float
    delta0_1: float
    delta0_2: float
    p_s1_ini: float
    theta_1: float
    theta_2: float
    last_input: float = 0.0
    held: bool = False


def measure_angle_difference(
    v_1: complex, v_2: complex, state: AcleState
) -> tuple[float, AcleState]:
    """Unwrapped angle increment difference of the two PCCs.

    A de-energized PCC holds the last valid measurement.
    """
    if abs(v_1) <= MEASUREMENT_MIN_VOLTAGE or abs(v_2) <= MEASUREMENT_MIN_VOLTAGE:
        return state.last_input, replace(state, held=True)
    theta_1 = state.theta_1 + wrap_angle(math.atan2(v_1.imag, v_1.real) - state.theta_1)
    theta_2 = state.theta_2 + wrap_angle(math.atan2(v_2.imag, v_2.real) - state.theta_2)
    diff = (theta_1 - state.delta0_1) - (theta_2 - state.delta0_2)
    return diff, replace(state, theta_1=theta_1, theta_2=theta_2, held=False)


def acle_update(
    state: AcleState,
    angle_difference: float,
    settings: AcleSettings,
    dt: float,
    p_max: float = 1.0,
) -> tuple[AcleState, float]:
    """Advance the first-order filter by one step (trapezoidal rule)."""
    if dt <= 0.0:
        raise DataError("Controller step must be positive")
    k = settings.k
    t = settings.t_filter_s
    if t == 0.0:
        y = k * angle_difference
    else:
        a = dt / (2.0 * t)
        u = state.last_input + angle_difference
        y = ((1.0 - a) * state.y + a * k * u) / (1.0 + a)
    p_ref = min(max(state.p_s1_ini - y, -p_max), p_max)
    return replace(state, y=y, last_input=angle_difference), p_ref


def init_acle(pf: PowerFlowSolution, settings: AcleSettings, s_conv: float) -> AcleState:
    c_1 = pf.converter(settings.converter)
    c_2 = pf.converter(settings.remote)
    d_0 = wrap_angle(c_1.theta_s - c_2.theta_s)
    p_ini = settings.p_cons(s_conv) - settings.k * d_0
    if abs(p_ini - c_1.p_s) > INIT_TOLERANCE:
        msg = f"power flow injection {c_1.p_s:.6f} pu inconsistent with {p_ini:.6f} pu"
        raise InitializationError(settings.converter, msg)
    return AcleState(
        y=0.0,
        delta0_1=c_1.theta_s,
        delta0_2=c_2.theta_s,
        p_s1_ini=c_1.p_s,
        theta_1=c_1.theta_s,
        theta_2=c_2.theta_s,
    )
