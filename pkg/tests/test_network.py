import numpy as np
import pytest

from aclestab.errors import DataError, TopologyError
from aclestab.network import (
    Branch,
    Bus,
    BusKind,
    FaultClear,
    FaultOn,
    NetworkModel,
    PhaseFollowingInjections,
    Reclose,
    Trip,
    apply_topology_event,
    branch_flows,
    build_ybus,
    freeze_loads,
    solve_network,
    Load,
)

from .util import bundled


def corridor(*, out=()):
    buses = tuple(Bus(i) for i in (6, 7, 8, 9, 10))
    branches = (
        Branch('6-7', 6, 7, 0.0, 0.025),
        Branch('7-8a', 7, 8, 0.0, 0.11),
        Branch('7-8b', 7, 8, 0.0, 0.11),
        Branch('8-9a', 8, 9, 0.0, 0.11),
        Branch('8-9b', 8, 9, 0.0, 0.11),
        Branch('9-10', 9, 10, 0.0, 0.025),
    )
    return NetworkModel(buses, branches).without_circuits(out)


def kron_reactance(network, a, b):
    y = build_ybus(network).to_dense()
    ids = [bus.id for bus in network.buses]
    keep = [ids.index(a), ids.index(b)]
    drop = [k for k in range(len(ids)) if k not in keep]
    y_red = y[np.ix_(keep, keep)] - y[np.ix_(keep, drop)] @ np.linalg.solve(
        y[np.ix_(drop, drop)], y[np.ix_(drop, keep)]
    )
    return 1.0 / y_red[0, 1].imag


def test_ybus_two_bus_entries():
    net = NetworkModel(
        (Bus(1, shunt_b=0.5), Bus(2)),
        (Branch('a', 1, 2, 0.01, 0.1, b_shunt=0.2, tap=1.05),),
    )
    y = build_ybus(net)
    ys = 1.0 / complex(0.01, 0.1)
    assert y.at(1, 2) == pytest.approx(-ys / 1.05)
    assert y.at(2, 1) == pytest.approx(-ys / 1.05)
    assert y.at(1, 1) == pytest.approx((ys + 0.1j) / 1.05**2 + 0.5j)
    assert y.at(2, 2) == pytest.approx(ys + 0.1j)


def test_ybus_is_symmetric():
    y = build_ybus(bundled().network).to_dense()
    assert np.allclose(y, y.T)


def test_corridor_kron_reactance():
    assert kron_reactance(corridor(), 6, 10) == pytest.approx(0.16)


def test_corridor_kron_reactance_one_circuit_out():
    assert kron_reactance(corridor(out=['7-8a']), 6, 10) == pytest.approx(0.215)


def test_trip_halves_parallel_admittance():
    net = bundled().network
    before = build_ybus(net).at(7, 8)
    after = build_ybus(apply_topology_event(net, Trip('7-8a'))).at(7, 8)
    assert after == pytest.approx(before / 2.0)
    assert after == pytest.approx(-1.0 / complex(0.01035, 0.1035))


def test_fault_adds_shunt_at_from_bus():
    net = bundled().network
    before = build_ybus(net).at(7, 7)
    faulted = apply_topology_event(net, FaultOn('7-8a', 1e5))
    assert build_ybus(faulted).at(7, 7) == pytest.approx(before + 1e5)
    assert build_ybus(faulted).at(8, 8) == pytest.approx(build_ybus(net).at(8, 8))


def test_fault_clear_matches_rebuild_without_circuit():
    net = bundled().network
    faulted = apply_topology_event(net, FaultOn('7-8a'))
    cleared = apply_topology_event(faulted, FaultClear('7-8a'))
    expect = build_ybus(net.without_circuits(['7-8a'])).to_dense()
    assert np.allclose(build_ybus(cleared).to_dense(), expect, rtol=0, atol=1e-12)


def test_reclose_restores_network():
    net = bundled().network
    seq = [FaultOn('7-8a'), FaultClear('7-8a'), Reclose('7-8a')]
    got = net
    for event in seq:
        got = apply_topology_event(got, event)
    assert got == net
    assert np.array_equal(build_ybus(got).to_dense(), build_ybus(net).to_dense())


def test_invalid_transitions():
    net = bundled().network
    tripped = apply_topology_event(net, Trip('7-8a'))
    with pytest.raises(TopologyError):
        apply_topology_event(tripped, Trip('7-8a'))
    with pytest.raises(TopologyError):
        apply_topology_event(tripped, FaultOn('7-8a'))
    with pytest.raises(TopologyError):
        apply_topology_event(net, FaultClear('7-8a'))
    with pytest.raises(TopologyError):
        apply_topology_event(net, Reclose('7-8a'))
    with pytest.raises(TopologyError):
        apply_topology_event(net, Trip('no-such-line'))


def test_isolated_bus_rejected():
    net = bundled().network
    with pytest.raises(TopologyError):
        build_ybus(net.without_circuits(['5-6', 'T1']))


def test_zero_reactance_rejected():
    net = NetworkModel((Bus(1), Bus(2)), (Branch('z', 1, 2, 0.0, 0.0),))
    with pytest.raises(DataError):
        build_ybus(net)


def test_solve_network_linear_sources():
    net = NetworkModel(
        (Bus(1), Bus(2), Bus(3)),
        (Branch('a', 1, 2, 0.01, 0.1), Branch('b', 2, 3, 0.02, 0.2)),
    )
    ybus = build_ybus(net)
    shunts = np.array([1.0 / 0.25j, 0.0, 0.5])
    sources = np.array([4.0 - 1.0j, 0.0, 0.0])
    v = solve_network(ybus, sources, shunts=shunts, tol=1e-12)
    expect = np.linalg.solve(ybus.to_dense() + np.diag(shunts), sources)
    assert np.allclose(v, expect, atol=1e-10)


def test_solve_network_frozen_loads_reproduce_power():
    net = NetworkModel(
        (Bus(1, kind=BusKind.SLACK), Bus(2)),
        (Branch('a', 1, 2, 0.0, 0.1),),
        loads=(Load(2, 50.0, 20.0),),
    )
    v0 = np.array([1.0 + 0.0j, 0.98 * np.exp(-0.05j)])
    loads = freeze_loads(net, v0)
    # a stiff source at bus 1 holding the voltage near v0[0]
    y_src = 1e6
    v = solve_network(
        build_ybus(net),
        np.array([v0[0] * y_src, 0.0]),
        loads,
        shunts=np.array([y_src, 0.0]),
        v0=v0,
        tol=1e-12,
    )
    s_load = v[1] * np.conj(loads.i_p[0] * v[1] / abs(v[1]) + loads.y_q[0] * v[1])
    assert s_load.real == pytest.approx(0.5 * abs(v[1]) / 0.98, rel=1e-9)
    assert s_load.imag == pytest.approx(0.2 * (abs(v[1]) / 0.98) ** 2, rel=1e-9)


def test_phase_following_injection_keeps_magnitude():
    inj = PhaseFollowingInjections(
        np.array([0]), np.array([0.3 - 0.1j]), np.zeros(1), np.zeros(1)
    )
    v = np.array([0.9 * np.exp(0.4j)])
    got = inj.evaluate(1, v)[0]
    assert abs(got) == pytest.approx(abs(0.3 - 0.1j))
    assert np.angle(got / (0.3 - 0.1j)) == pytest.approx(0.4)


def test_phase_following_injection_holds_angle_when_dead():
    inj = PhaseFollowingInjections(
        np.array([0]), np.array([0.5 + 0.0j]), np.zeros(1), np.array([0.7])
    )
    got = inj.evaluate(1, np.array([0.0 + 0.0j]))[0]
    assert got == pytest.approx(0.5 * np.exp(0.7j))


def test_branch_flows_losses():
    net = NetworkModel(
        (Bus(1), Bus(2)),
        (Branch('r', 1, 2, 0.01, 0.1), Branch('x', 1, 2, 0.0, 0.1)),
    )
    v = np.array([1.0, 0.98 * np.exp(-0.1j)])
    flows = branch_flows(net, v)
    assert flows[0].losses > 0.0
    assert flows[1].losses == pytest.approx(0.0, abs=1e-9)
    assert flows[1].p_from == pytest.approx(-flows[1].p_to)
    assert flows[1].p_from == pytest.approx(0.98 * np.sin(0.1) / 0.1 * 100.0)
