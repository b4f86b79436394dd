import math

import numpy as np
import pytest
from scipy.optimize import brentq

from aclestab.errors import DataError, SolverError, TopologyError
from aclestab.network import Branch, Bus, BusKind, Load, NetworkModel
from aclestab.powerflow import (
    GeneratorDispatch,
    acle_operating_point,
    converter_point,
    p_s_from_p_dc,
    post_event_operating_point,
    sequential_acdc_powerflow,
    solve_ac_powerflow,
    solve_dc_network,
)
from aclestab.vsc import Direction

from .util import bundled, three_bus, two_area_link


def test_single_line_against_angle_search():
    net = NetworkModel(
        (Bus(1, kind=BusKind.SLACK), Bus(2)),
        (Branch('a', 1, 2, 0.0, 0.1),),
        loads=(Load(2, 100.0, 0.0),),
    )
    got = solve_ac_powerflow(net, [GeneratorDispatch(1, 0.0, 1.0)], tol=1e-12)

    # receiving end with zero reactive power: V2 = cos(theta), P = V2 sin(theta) / x
    def mismatch(theta):
        return math.cos(theta) * math.sin(theta) / 0.1 - 1.0

    theta = brentq(mismatch, 0.0, math.pi / 4, xtol=1e-14)
    assert abs(got.v[1]) == pytest.approx(math.cos(theta), abs=1e-8)
    assert np.angle(got.v[1]) == pytest.approx(-theta, abs=1e-8)
    assert got.s_gen[0].real == pytest.approx(1.0, abs=1e-8)


def test_generator_at_pq_bus_rejected():
    sc = three_bus()
    with pytest.raises(DataError):
        solve_ac_powerflow(sc.network, [GeneratorDispatch(3, 1.0, 1.0)])


def test_island_without_slack_rejected():
    net = bundled().network.without_circuits(['7-8a', '7-8b'])
    with pytest.raises(TopologyError):
        sequential_acdc_powerflow(bundled(), network=net)


def test_ac_only_power_flow():
    sol = sequential_acdc_powerflow(three_bus())
    assert sol.converters == ()
    assert sol.generator('G2').p == pytest.approx(6.0)
    assert abs(sol.voltage(1)) == pytest.approx(1.02)
    assert abs(sol.voltage(2)) == pytest.approx(1.01)
    bal = sol.balance()
    got = bal['generation'] - bal['load'] - bal['ac_losses']
    assert got == pytest.approx(0.0, abs=1e-6)


def test_dc_two_bus_quadratic():
    link = two_area_link().link
    r = link.dc_model.r[0]
    p1 = 0.6
    got = solve_dc_network(link, 2, 1.0, {1: p1}, tol=1e-13)
    # bus 1 injects p1: u1 (u1 - u2) / r = p1
    u1 = (1.0 + math.sqrt(1.0 + 4.0 * p1 * r)) / 2.0
    assert got.u_at(1) == pytest.approx(u1, abs=1e-10)
    assert got.i_line[0] == pytest.approx((u1 - 1.0) / r, abs=1e-10)
    assert got.losses == pytest.approx(r * got.i_line[0] ** 2)
    assert got.p_at(2) == pytest.approx(-(p1 - got.losses), abs=1e-10)


def test_converter_point_balance():
    vsc = two_area_link().link.converter('VSC1')
    pt = converter_point(vsc, 0.98 * np.exp(0.2j), -0.45, 0.1)
    assert pt.direction == Direction.RECTIFIER
    assert pt.balance_residual == pytest.approx(0.0, abs=1e-15)
    assert pt.p_dc > 0.0
    assert pt.i_s == pytest.approx(math.hypot(0.45, 0.1) / 0.98)
    assert pt.p_loss == pytest.approx(vsc.losses.loss(pt.i_s, Direction.RECTIFIER))
    assert pt.i_d * pt.u_s == pytest.approx(pt.p_s)


def test_p_s_from_p_dc_inverts_converter_point():
    vsc = two_area_link().link.converter('VSC2')
    for p_s in (-0.7, 0.3, 0.9):
        pt = converter_point(vsc, 1.01 + 0.0j, p_s, -0.05)
        assert p_s_from_p_dc(vsc, pt.p_dc, -0.05, 1.01) == pytest.approx(p_s, abs=1e-12)


def test_acdc_power_balance():
    sol = sequential_acdc_powerflow(two_area_link(), {'VSC1': -0.3})
    assert sol.converter('VSC1').p_s == pytest.approx(-0.3)
    assert sol.p_hvdc_mw('VSC1') == pytest.approx(300.0)
    assert sol.converter('VSC2').u_dc == pytest.approx(1.0)
    assert sol.converter('VSC1').u_dc > 1.0
    bal = sol.balance()
    residual = (
        bal['generation']
        - bal['load']
        - bal['ac_losses']
        - bal['converter_losses']
        - bal['dc_losses']
    )
    assert residual == pytest.approx(0.0, abs=1e-5)


def test_acle_law_holds():
    sc = two_area_link()
    point = acle_operating_point(sc)
    c1 = point.solution.converter('VSC1')
    c2 = point.solution.converter('VSC2')
    d = c1.theta_s - c2.theta_s
    assert point.angle_difference == pytest.approx(d)
    assert c1.p_s == pytest.approx(point.p_s1)
    assert point.p_s1 == pytest.approx(-1.0 * d, abs=1e-9)
    assert point.p_hvdc_mw > 0.0


def test_infeasible_schedule_seeds_elsewhere():
    sc = bundled()
    # the whole area transfer on the AC corridor exceeds its limit
    with pytest.raises(SolverError):
        sequential_acdc_powerflow(sc, {'VSC1': 0.0})
    point = acle_operating_point(sc)
    assert point.p_s1 == pytest.approx(-point.angle_difference, abs=1e-8)
    assert 300.0 < point.p_hvdc_mw < 600.0
    assert point.iterations > 0
    assert all(p != 0.0 for p, _ in point.trace)


def test_zero_gain_returns_schedule():
    point = acle_operating_point(two_area_link(), k=0.0, p_cons=-0.2)
    assert point.p_s1 == -0.2
    assert point.iterations == 0
    assert point.solution.converter('VSC1').p_s == pytest.approx(-0.2)


def test_transfer_grows_with_gain():
    sc = two_area_link()
    got = [acle_operating_point(sc, k=k).p_hvdc_mw for k in (1.0, 2.0, 4.0)]
    assert got[0] < got[1] < got[2]


def test_emulating_converter_must_control_power():
    sc = two_area_link().with_acle(converter='VSC2', remote='VSC1')
    with pytest.raises(DataError):
        acle_operating_point(sc)


def test_post_event_point_moves_more_power():
    sc = two_area_link()
    before = acle_operating_point(sc)
    after = post_event_operating_point(sc, ['L1'])
    assert after.p_hvdc_mw > before.p_hvdc_mw
    assert not after.solution.network.branch('L1').in_service


@pytest.mark.slow
@pytest.mark.parametrize('k, p_mw', [(1.0, 438.0), (2.0, 556.30), (4.0, 645.30)])
def test_published_transfer(k, p_mw):
    point = acle_operating_point(bundled(), k=k)
    assert point.p_hvdc_mw == pytest.approx(p_mw, rel=0.05)


@pytest.mark.slow
def test_corridor_loading():
    sol = acle_operating_point(bundled()).solution
    assert sol.flow('7-8a').p_from == pytest.approx(236.4, abs=2.0)
    assert sol.flow('7-8b').p_from == pytest.approx(sol.flow('7-8a').p_from)
