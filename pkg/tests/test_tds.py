import math

import numpy as np
import pandas as pd
import pytest

from aclestab.errors import DataError, TopologyError
from aclestab.network import FaultClear, FaultOn, Trip
from aclestab.powerflow import acle_operating_point, post_event_operating_point
from aclestab.scenario import EventKind, EventSpec, Integrator, scenario_from_document
from aclestab.stability import constant_p_baseline, detect_loss_of_synchronism
from aclestab.tds import (
    DynamicSystem,
    EventSchedule,
    ScheduledEvent,
    SetpointChange,
    SimParams,
    SimulationTrace,
    TerminationReason,
    expand_event,
    run_simulation,
    select_channels,
    step_convergence_check,
)

from .util import (
    bundled,
    condition_names,
    radial_tie,
    three_bus,
    two_area_link,
    two_area_link_doc,
)


def short(scenario, t_end=0.2, **changes):
    return SimParams.from_scenario(scenario, t_end=t_end, **changes)


def test_sim_params_validation():
    with pytest.raises(DataError):
        SimParams(dt=0.0)
    with pytest.raises(DataError):
        SimParams(dt=0.01, t_end=0.005)
    assert SimParams(dt=1e-3, t_end=0.1).num_steps == 100


def test_fault_event_expands_to_on_and_clear():
    spec = EventSpec(EventKind.FAULT, 1.0, '7-8a', duration_s=0.15)
    got = expand_event(spec)
    assert [action for _, action in got] == [FaultOn('7-8a'), FaultClear('7-8a')]
    assert [t for t, _ in got] == pytest.approx([1.0, 1.15])


def test_schedule_snaps_to_step_grid():
    specs = [
        EventSpec(EventKind.TRIP, 0.5, 'L2'),
        EventSpec(EventKind.FAULT, 0.1004, 'L1', duration_s=0.05),
    ]
    sched = EventSchedule.from_specs(specs, 1e-3)
    assert [e.step for e in sched.events] == [100, 150, 500]
    assert sched.events[0].time == pytest.approx(0.1)
    assert sched.due(150) == [FaultClear('L1')]
    assert sched.due(151) == []


def test_schedule_keeps_order_within_step():
    specs = [
        EventSpec(EventKind.FAULT_ON, 0.2, 'L1'),
        EventSpec(EventKind.FAULT_CLEAR, 0.2, 'L1'),
    ]
    sched = EventSchedule.from_specs(specs, 1e-3)
    assert sched.due(200) == [FaultOn('L1'), FaultClear('L1')]


def test_schedule_must_be_sorted():
    with pytest.raises(DataError):
        EventSchedule((
            ScheduledEvent(5, 0.005, Trip('L1')),
            ScheduledEvent(3, 0.003, Trip('L2')),
        ))


def test_schedule_validation():
    net = two_area_link().network
    sched = EventSchedule.from_specs(
        [EventSpec(EventKind.TRIP, 0.1, 'L1'), EventSpec(EventKind.TRIP, 0.2, 'L1')], 1e-3
    )
    with pytest.raises(TopologyError):
        sched.validate(net)


def test_invalid_schedule_fails_before_running():
    sc = two_area_link()
    sched = EventSchedule.from_specs([EventSpec(EventKind.FAULT_CLEAR, 0.1, 'L1')], 1e-3)
    with pytest.raises(TopologyError):
        run_simulation(sc, short(sc), sched)


def test_select_channels():
    names = ['t', 'delta_G1', 'delta_G2', 'delta_diff', 'omega_G1', 'p_hvdc_mw']
    assert select_channels(names, ['delta_G*', 'p_*']) == [
        't',
        'delta_G1',
        'delta_G2',
        'p_hvdc_mw',
    ]
    assert select_channels(names, []) == ['t']


def test_ac_only_equilibrium_holds():
    sc = three_bus()
    trace = run_simulation(sc, short(sc, t_end=0.5))
    assert trace.reason == TerminationReason.COMPLETED
    assert len(trace) == 501
    diff = trace['delta_diff']
    assert np.max(np.abs(diff - diff[0])) < 1e-3
    assert np.max(np.abs(trace['omega_G1'])) < 1e-6
    assert trace['vm_3'][-1] == pytest.approx(trace['vm_3'][0], abs=1e-6)
    assert trace.issues == ()


def test_link_equilibrium_holds():
    sc = two_area_link()
    point = acle_operating_point(sc)
    trace = run_simulation(sc, short(sc, t_end=0.3), operating_point=point)
    assert trace.reason == TerminationReason.COMPLETED
    assert trace['p_hvdc_mw'][0] == pytest.approx(point.p_hvdc_mw, abs=1e-6)
    assert np.max(np.abs(trace['p_hvdc_mw'] - point.p_hvdc_mw)) < 0.01
    assert np.max(np.abs(trace['VSC2_u_dc'] - 1.0)) < 1e-5
    assert np.max(np.abs(trace['VSC1_power_balance_residual'])) < 1e-12
    assert np.max(np.abs(trace['acle_ddelta'])) < 1e-3
    assert trace.issues == ()


def test_initial_state_derivatives_vanish():
    sc = two_area_link()
    point = acle_operating_point(sc)
    system = DynamicSystem(sc, point.solution, short(sc))
    sol = system.solve(system.x0, system.v0)
    assert np.max(np.abs(sol.v - system.v0)) < 1e-8
    dx, evals = system.derivatives(system.x0, sol.v)
    assert np.max(np.abs(dx)) < 1e-6
    assert len(evals) == 2


def test_default_angle_pair_is_first_and_last_machine():
    doc = two_area_link_doc()
    del doc['solver']['angle_pair']
    sc = scenario_from_document(doc, 'two_area_link')
    trace = run_simulation(sc, short(sc, t_end=0.05, channels=('delta_*',)))
    assert np.allclose(trace['delta_diff'], trace['delta_G1'] - trace['delta_G2'])
    flipped = sc.with_solver(angle_pair=('G2', 'G1'))
    trace = run_simulation(flipped, short(flipped, t_end=0.05, channels=('delta_*',)))
    assert np.allclose(trace['delta_diff'], trace['delta_G2'] - trace['delta_G1'])


def test_modulation_base_is_pcc_bus():
    doc = two_area_link_doc()
    doc['buses'][2]['base_kv'] = 400.0
    sc = scenario_from_document(doc, 'two_area_link')
    point = acle_operating_point(sc)
    system = DynamicSystem(sc, point.solution, short(sc))
    assert system.pcc_kv == [400.0, 220.0]


def test_trapezoidal_integrator_runs():
    sc = three_bus()
    params = short(sc, t_end=0.1, integrator=Integrator.TRAPEZOIDAL)
    trace = run_simulation(sc, params)
    assert trace.stable


def test_channels_and_subsampling():
    sc = two_area_link()
    params = short(sc, t_end=0.1, channels=('delta_*', 'p_hvdc_mw'), trace_subsample=10)
    trace = run_simulation(sc, params)
    assert trace.names == ['t', 'delta_G1', 'delta_G2', 'delta_diff', 'p_hvdc_mw']
    assert len(trace) == 11
    assert trace.time[-1] == pytest.approx(0.1)


def test_trace_csv(tmp_path):
    sc = three_bus()
    trace = run_simulation(sc, short(sc, t_end=0.05, channels=('delta_*', 'vm_*')))
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    got = pd.read_csv(path)
    assert list(got.columns) == trace.names
    assert len(got) == len(trace)
    assert got['delta_G1'].iloc[-1] == pytest.approx(trace.final('delta_G1'), rel=1e-8)


def test_trace_channel_lengths_checked():
    with pytest.raises(DataError):
        SimulationTrace(np.zeros(3), {'a': np.zeros(2)})


def test_reactive_setpoint_event():
    sc = two_area_link()
    events = (EventSpec(EventKind.SETPOINT, 0.05, target='VSC2.q_ref', value=0.1),)
    sc = sc.with_events(events)
    trace = run_simulation(sc, short(sc, t_end=0.3))
    assert trace.reason == TerminationReason.COMPLETED
    assert trace['VSC2_q_s'][0] == pytest.approx(0.0, abs=1e-9)
    assert trace.final('VSC2_q_s') == pytest.approx(0.1, abs=1e-3)


def test_scheduled_power_setpoint_event():
    sc = two_area_link()
    point = acle_operating_point(sc)
    events = (EventSpec(EventKind.SETPOINT, 0.05, target='acle.p_cons_mw', value=100.0),)
    sc = sc.with_events(events)
    trace = run_simulation(sc, short(sc, t_end=0.2), operating_point=point)
    assert trace.reason == TerminationReason.COMPLETED
    p_ref = trace['acle_p_ref']
    assert p_ref[0] == pytest.approx(point.p_s1, abs=1e-9)
    assert p_ref[-1] < point.p_s1 - 0.05


def test_setpoint_for_unknown_converter():
    sc = two_area_link()
    sched = EventSchedule((ScheduledEvent(10, 0.01, SetpointChange('VSC9.q_ref', 0.1)),))
    with pytest.raises(DataError):
        run_simulation(sc, short(sc), sched)


def test_tie_overload_loses_synchronism():
    sc = radial_tie()
    events = (EventSpec(EventKind.FAULT, 0.1, '1-3a', duration_s=0.05),)
    sc = sc.with_events(events)
    trace = run_simulation(sc, short(sc, t_end=3.0, channels=('delta_*',)))
    assert trace.reason == TerminationReason.LOSS_OF_SYNCHRONISM
    assert trace.t_stop is not None and 0.1 < trace.t_stop < 3.0
    assert not trace.stable
    assert trace.time[-1] == pytest.approx(trace.t_stop)


def test_short_fault_recovers():
    sc = two_area_link()
    events = (EventSpec(EventKind.FAULT, 0.1, 'L1', duration_s=0.05),)
    sc = sc.with_events(events)
    trace = run_simulation(sc, short(sc, t_end=1.0, channels=('delta_*', 'p_*')))
    assert trace.reason == TerminationReason.COMPLETED
    # the faulted circuit carries nothing once cleared
    assert trace['p_L1_mw'][-1] == 0.0
    # the fault sits at the PCC of the emulating converter
    names = condition_names(trace.issues)
    assert 'FeedforwardHeld' in names
    assert 'MeasurementHeld' in names


def test_no_stop_on_instability():
    sc = radial_tie()
    sc = sc.with_events((EventSpec(EventKind.FAULT, 0.1, '1-3a', duration_s=0.05),))
    params = short(sc, t_end=3.0, channels=('delta_*',), stop_on_instability=False)
    trace = run_simulation(sc, params)
    check = detect_loss_of_synchronism(trace)
    assert check.tripped
    assert check.max_separation > math.pi
    assert trace.time[-1] > check.time


@pytest.mark.slow
def test_bundled_fault_is_cleared_stably():
    sc = bundled()
    trace = run_simulation(sc, channels_only(sc, ('delta_*', 'p_hvdc_mw', 'p_7-8b_mw')))
    assert trace.reason == TerminationReason.COMPLETED
    p_hvdc = trace['p_hvdc_mw']
    assert p_hvdc[0] == pytest.approx(438.0, rel=0.05)
    # fault on 7-8a at bus 7 from 1.0 s to 1.15 s
    p_78b = trace['p_7-8b_mw']
    during = (trace.time > 1.01) & (trace.time < 1.14)
    assert np.max(np.abs(p_78b[during])) < 0.2 * p_78b[0]
    assert p_hvdc[-1] > p_hvdc[0] + 20.0


@pytest.mark.slow
def test_bundled_step_convergence():
    sc = bundled()
    got = step_convergence_check(sc, 2e-3, 1e-3, t_end=3.0)
    assert got.comparable
    assert got.deviation_deg < 0.1


def channels_only(scenario, channels):
    return SimParams.from_scenario(scenario, channels=channels, trace_subsample=10)


def test_slow_filter_acts_as_constant_power():
    sc = two_area_link().with_acle(t_filter_s=1e6)
    sc = sc.with_events((EventSpec(EventKind.TRIP, 0.05, 'L1'),))
    point = acle_operating_point(sc)
    params = short(sc, t_end=0.5, channels=('delta_diff', 'p_hvdc_mw'))
    emulating = run_simulation(sc, params, operating_point=point)
    base = constant_p_baseline(sc, point.p_hvdc_mw)
    constant = run_simulation(base, params, operating_point=point)
    assert emulating.reason == constant.reason == TerminationReason.COMPLETED
    assert np.max(np.abs(emulating['p_hvdc_mw'] - constant['p_hvdc_mw'])) < 1e-3
    assert np.max(np.abs(emulating['delta_diff'] - constant['delta_diff'])) < 1e-4


def test_fault_shifts_transfer_to_link():
    sc = two_area_link()
    sc = sc.with_events((EventSpec(EventKind.FAULT, 0.1, 'L1', duration_s=0.05),))
    point = acle_operating_point(sc)
    params = short(sc, t_end=1.2, channels=('p_L2_mw', 'p_hvdc_mw'))
    trace = run_simulation(sc, params, operating_point=point)
    assert trace.reason == TerminationReason.COMPLETED
    during = (trace.time > 0.105) & (trace.time < 0.145)
    p_l2 = trace['p_L2_mw']
    assert p_l2[0] > 100.0
    # the fault sits at the sending end of the surviving circuit
    assert np.max(np.abs(p_l2[during])) < 0.2 * p_l2[0]
    p_hvdc = trace['p_hvdc_mw']
    assert p_hvdc[-1] > p_hvdc[0] + 10.0


@pytest.mark.slow
@pytest.mark.parametrize('t_filter, t_end, dt', [(0.75, 20.0, 1e-3), (50.0, 300.0, 5e-3)])
def test_trip_settles_at_post_event_point(t_filter, t_end, dt):
    sc = two_area_link().with_acle(t_filter_s=t_filter)
    sc = sc.with_events((EventSpec(EventKind.TRIP, 0.5, 'L1'),))
    before = acle_operating_point(sc)
    after = post_event_operating_point(sc, ['L1'])
    channels = ('p_hvdc_mw', 'p_L2_mw')
    params = short(sc, t_end=t_end, dt=dt, channels=channels, trace_subsample=100)
    trace = run_simulation(sc, params, operating_point=before)
    assert trace.reason == TerminationReason.COMPLETED
    # load voltage dependence and governor sharing keep a small offset
    got = trace.final('p_hvdc_mw') - trace['p_hvdc_mw'][0]
    assert got == pytest.approx(after.p_hvdc_mw - before.p_hvdc_mw, rel=0.1)
    got = trace.final('p_L2_mw') - trace['p_L2_mw'][0]
    expect = after.solution.flow('L2').p_from - before.solution.flow('L2').p_from
    assert got == pytest.approx(expect, rel=0.1)


@pytest.mark.slow
def test_link_equilibrium_holds_long():
    sc = two_area_link()
    point = acle_operating_point(sc)
    params = short(sc, t_end=20.0, channels=('delta_diff', 'p_hvdc_mw', 'VSC2_u_dc'))
    trace = run_simulation(sc, params, operating_point=point)
    assert trace.reason == TerminationReason.COMPLETED
    drift = np.radians(trace['delta_diff'] - trace['delta_diff'][0])
    assert np.max(np.abs(drift)) < 1e-6
    p_pu = trace['p_hvdc_mw'] / sc.link.s_base_mva
    assert np.max(np.abs(p_pu - point.p_hvdc_mw / sc.link.s_base_mva)) < 1e-6
    assert np.max(np.abs(trace['VSC2_u_dc'] - 1.0)) < 1e-6
