import math

import numpy as np
import pytest

from aclestab.acle import AcleMode
from aclestab.errors import DataError, SolverError
from aclestab.network import FaultClear, FaultOn, FaultSpec
from aclestab.powerflow import acle_operating_point
from aclestab.stability import (
    CctResult,
    CctStatus,
    SimulationProbe,
    SweepCell,
    SynchronismDetector,
    cct_params,
    compute_cct,
    constant_p_baseline,
    default_fault,
    detect_loss_of_synchronism,
    first_swing_peak,
    search_cct,
    sweep_cct,
)
from aclestab.tds import SimulationTrace, TerminationReason

from .util import bundled, radial_tie, two_area_link


STABLE = TerminationReason.COMPLETED
UNSTABLE = TerminationReason.LOSS_OF_SYNCHRONISM


class ThresholdProbe:
    def __init__(self, critical_s, dt=1e-3):
        self.critical_s = critical_s
        self.dt = dt
        self.calls = []

    def __call__(self, clearing_steps):
        self.calls.append(clearing_steps)
        if clearing_steps * self.dt < self.critical_s:
            return STABLE
        return UNSTABLE


def test_detector_latches():
    det = SynchronismDetector(math.pi)
    assert not det.update(0.0, np.array([0.0, 1.0, 2.0]))
    assert det.max_separation == 2.0
    assert det.update(0.5, np.array([0.0, 3.2]))
    assert det.trip_time == 0.5
    assert det.update(0.6, np.array([0.0, 0.0]))
    assert det.trip_time == 0.5


def test_detector_single_machine():
    det = SynchronismDetector()
    assert not det.update(0.0, np.array([10.0]))
    assert not det.tripped


def synthetic_trace(separation_deg):
    t = np.arange(len(separation_deg)) * 0.01
    channels = {
        'delta_G1': np.asarray(separation_deg, dtype=float),
        'delta_G2': np.zeros(len(t)),
        'delta_diff': np.asarray(separation_deg, dtype=float),
    }
    return SimulationTrace(t, channels)


def test_detect_on_trace():
    got = detect_loss_of_synchronism(synthetic_trace([0.0, 90.0, 170.0, 190.0, 10.0]))
    assert got.tripped
    assert got.time == pytest.approx(0.03)
    got = detect_loss_of_synchronism(synthetic_trace([0.0, 90.0, 170.0, 90.0]))
    assert not got.tripped
    assert got.max_separation == pytest.approx(math.radians(170.0))


def test_first_swing_peak():
    t = np.arange(0.0, 3.0, 0.01)
    swing = 20.0 + 30.0 * np.sin(2.0 * np.pi * 0.5 * t) * np.exp(-0.3 * t)
    trace = SimulationTrace(t, {'delta_G1': swing, 'delta_G2': np.zeros(len(t))})
    got = first_swing_peak(trace, ('G1', 'G2'))
    assert 0.3 < got.time < 0.5
    assert got.deviation_deg == pytest.approx(np.max(swing[:100]) - 20.0)


def test_bisection_matches_threshold():
    probe = ThresholdProbe(0.25)
    got = search_cct(probe, 1e-3)
    assert got.status == CctStatus.OK
    assert got.cct == pytest.approx(0.249)
    assert got.bracket == pytest.approx((0.249, 0.250))
    assert probe.calls[0] == 0
    assert got.run_count == len(probe.calls)
    assert str(got) == "CCT = 249 ms [249, 250]"


def test_bisection_resolution():
    got = search_cct(ThresholdProbe(0.3333), 1e-3, resolution=5e-3)
    lo, hi = got.bracket
    assert hi - lo <= 5e-3 + 1e-12
    assert lo < 0.3333 <= hi


def test_above_cap():
    got = search_cct(ThresholdProbe(10.0), 1e-3, cap=2.0)
    assert got.status == CctStatus.ABOVE_CAP
    assert got.above_cap
    assert got.cct is None
    assert got.bracket == (2.0, None)
    assert str(got) == "CCT > 2 s"


def test_unstable_without_fault():
    with pytest.raises(DataError):
        search_cct(ThresholdProbe(0.0), 1e-3)


def test_critical_below_start():
    got = search_cct(ThresholdProbe(0.0405), 1e-3, start=0.1)
    assert got.cct == pytest.approx(0.040)


def test_non_monotone_probe_unconfirmed():
    seen = set()

    def flaky(steps):
        # second visit of the lower bracket end reports instability
        if steps == 249 and steps in seen:
            return UNSTABLE
        seen.add(steps)
        return STABLE if steps < 250 else UNSTABLE

    got = search_cct(flaky, 1e-3)
    assert got.status == CctStatus.UNCONFIRMED
    assert got.cct == pytest.approx(0.249)


def test_failed_runs_count_as_unstable():
    def probe(steps):
        return STABLE if steps < 120 else TerminationReason.SOLVER_FAILURE

    assert search_cct(probe, 1e-3).cct == pytest.approx(0.119)


def test_default_fault():
    sc = bundled()
    got = default_fault(sc)
    assert got.branch == '7-8a'
    assert got.t_on == 1.0
    with pytest.raises(DataError):
        default_fault(sc.with_solver(cct_circuit=None))


def test_probe_schedule():
    sc = two_area_link()
    fault = FaultSpec('L1', 0.5, 0.6)
    point = acle_operating_point(sc)
    probe = SimulationProbe(sc, fault, cct_params(sc), point.solution)
    sched = probe.schedule(120)
    assert [(e.step, e.action) for e in sched.events] == [
        (500, FaultOn('L1')),
        (620, FaultClear('L1')),
    ]
    zero = probe.schedule(0)
    assert zero.due(500) == [FaultOn('L1'), FaultClear('L1')]


def test_compute_cct_with_probe():
    got = compute_cct(two_area_link(), probe=ThresholdProbe(0.31))
    assert got.cct == pytest.approx(0.309)


@pytest.mark.slow
def test_compute_cct_radial_tie():
    sc = radial_tie(0.1).with_solver(
        cct_t_on_s=0.1, cct_t_end_s=2.0, cct_resolution_s=0.01, cct_cap_s=1.0
    )
    got = compute_cct(sc)
    assert got.status == CctStatus.OK
    assert 0.0 <= got.cct < 0.8
    lo, hi = got.bracket
    assert hi - lo <= 0.01 + 1e-12
    assert got.runs[0] == (0.0, STABLE)


def test_constant_p_baseline():
    sc = constant_p_baseline(two_area_link(), 250.0)
    assert sc.acle.mode == AcleMode.CONSTANT_P
    assert sc.acle.k == 0.0
    point = acle_operating_point(sc)
    assert point.p_hvdc_mw == pytest.approx(250.0)


def fake_runner(task):
    if task.t is not None and task.t > 1.0 and task.k == 2.0:
        return SweepCell(task.index, task.case, task.k, task.t, error="diverged")
    t = 0.0 if task.t is None else task.t
    cct = round(0.2 + 0.05 * task.k - 0.02 * abs(t - 0.5), 3)
    result = CctResult(cct, (cct, cct + 0.001), ((cct, STABLE),))
    return SweepCell(task.index, task.case, task.k, task.t, result)


def test_sweep_grid():
    sc = two_area_link()
    got = sweep_cct(sc, [1.0, 2.0], [0.0, 0.5, 1.5], runner=fake_runner)
    frame = got.to_frame()
    assert len(frame) == 2 * (1 + 3)
    assert list(frame['case'][:4]) == ['K1_constant_p', 'K1', 'K1', 'K1']
    assert frame['status'].tolist().count('failed') == 1
    assert got.cases == ['K1', 'K2']
    assert [c.t for c in got.row('K1')] == [0.0, 0.5, 1.5]
    summary = {s.case: s for s in got.summary()}
    assert summary['K1'].t_min in (0.0, 1.5)
    assert summary['K2'].cct_min == pytest.approx(0.29)
    assert summary['K1'].gap == pytest.approx(summary['K1'].cct_min - 0.24)
    series = got.series('K2')
    assert series['cct_ms'].isna().sum() == 1


def test_sweep_baseline_matches_emulation_transfer():
    captured = []

    def runner(task):
        captured.append(task)
        return fake_runner(task)

    sc = two_area_link()
    sweep_cct(sc, [2.0], [0.5], runner=runner)
    base, cell = captured
    point = acle_operating_point(sc, k=2.0)
    assert base.t is None
    assert base.scenario.acle.mode == AcleMode.CONSTANT_P
    assert base.scenario.acle.p_cons_mw == pytest.approx(point.p_hvdc_mw)
    assert cell.scenario.acle.k_pu_per_rad == 2.0
    assert cell.scenario.acle.t_filter_s == 0.5
    assert base.operating_point is cell.operating_point


def test_sweep_parallel_matches_serial():
    sc = two_area_link()
    serial = sweep_cct(sc, [1.0, 4.0], [0.0, 0.25], runner=fake_runner)
    parallel = sweep_cct(sc, [1.0, 4.0], [0.0, 0.25], runner=fake_runner, jobs=2)
    assert parallel.to_frame().equals(serial.to_frame())


def test_sweep_operating_point_failure(monkeypatch):
    import aclestab.stability as stability

    def broken(scenario, *args, **kwargs):
        raise SolverError("no convergence")

    monkeypatch.setattr(stability, 'acle_operating_point', broken)
    got = sweep_cct(two_area_link(), [1.0], [0.5])
    assert [c.status for c in got.cells] == ['failed', 'failed']
    assert 'operating point' in (got.cells[0].error or '')


def test_empty_sweep_rejected():
    with pytest.raises(DataError):
        sweep_cct(two_area_link(), [], [0.5], runner=fake_runner)


@pytest.mark.slow
def test_bundled_constant_power_cct():
    sc = bundled()
    point = acle_operating_point(sc)
    base = constant_p_baseline(sc, point.p_hvdc_mw)
    got = compute_cct(base, operating_point=point.solution)
    assert got.status == CctStatus.OK
    assert 0.05 < got.cct < 1.0
