import copy
from functools import cache

from aclestab.scenario import Scenario, load_scenario, scenario_from_document


BUNDLED = "kundur_two_area_hvdc"

_THREE_BUS = {
    'system': {'name': 'three_bus'},
    'buses': [
        {'id': 1, 'kind': 'slack', 'v_mag': 1.02},
        {'id': 2, 'kind': 'PV', 'v_mag': 1.01},
        {'id': 3},
    ],
    'branches': [
        {'circuit_id': '1-3', 'from_bus': 1, 'to_bus': 3, 'r': 0.002, 'x': 0.03, 'b_shunt': 0.02},
        {'circuit_id': '2-3', 'from_bus': 2, 'to_bus': 3, 'r': 0.002, 'x': 0.03, 'b_shunt': 0.02},
        {'circuit_id': '1-2', 'from_bus': 1, 'to_bus': 2, 'r': 0.004, 'x': 0.06},
    ],
    'loads': [{'bus': 3, 'p0': 1200.0, 'q0': 150.0}],
    'machines': {
        'G1': {'bus': 1, 'p_mw': 600.0, 'v_set': 1.02},
        'G2': {'bus': 2, 'p_mw': 600.0, 'v_set': 1.01},
    },
    'solver': {'angle_pair': ['G1', 'G2'], 'corridor': ['1-3'], 'cct_circuit': '1-3'},
}

_TWO_AREA_LINK = {
    'system': {'name': 'two_area_link'},
    'buses': [
        {'id': 1, 'kind': 'slack'},
        {'id': 2, 'kind': 'PV'},
        {'id': 3},
        {'id': 4},
    ],
    'branches': [
        {'circuit_id': 'T1', 'from_bus': 1, 'to_bus': 3, 'r': 0.0, 'x': 0.02},
        {'circuit_id': 'T2', 'from_bus': 2, 'to_bus': 4, 'r': 0.0, 'x': 0.02},
        {'circuit_id': 'L1', 'from_bus': 3, 'to_bus': 4, 'r': 0.005, 'x': 0.05, 'b_shunt': 0.05},
        {'circuit_id': 'L2', 'from_bus': 3, 'to_bus': 4, 'r': 0.005, 'x': 0.05, 'b_shunt': 0.05},
    ],
    'loads': [
        {'bus': 3, 'p0': 300.0, 'q0': 50.0},
        {'bus': 4, 'p0': 1100.0, 'q0': 100.0},
    ],
    'machines': {
        'G1': {'bus': 1, 'p_mw': 700.0, 'v_set': 1.0},
        'G2': {'bus': 2, 'p_mw': 700.0, 'v_set': 1.0},
    },
    'hvdc': {
        'converters': {
            'VSC1': {'ac_bus': 3, 'dc_bus': 1, 'd_mode': 'P'},
            'VSC2': {'ac_bus': 4, 'dc_bus': 2, 'd_mode': 'u_dc'},
        },
        'dc_buses': [{'id': 1}, {'id': 2}],
        'dc_lines': [{'id': 'DC1', 'from_bus': 1, 'to_bus': 2, 'length_km': 240.0}],
    },
    'acle': {'k_pu_per_rad': 1.0, 't_filter_s': 0.75},
    'solver': {
        'angle_pair': ['G1', 'G2'],
        'corridor': ['L1', 'L2'],
        'cct_circuit': 'L1',
        'cct_cap_s': 1.0,
        'cct_t_end_s': 3.0,
    },
}


def three_bus_doc() -> dict:
    return copy.deepcopy(_THREE_BUS)


def two_area_link_doc() -> dict:
    return copy.deepcopy(_TWO_AREA_LINK)


def three_bus() -> Scenario:
    return scenario_from_document(three_bus_doc(), 'three_bus')


def two_area_link() -> Scenario:
    return scenario_from_document(two_area_link_doc(), 'two_area_link')


def radial_tie_doc(x_circuit: float = 0.25) -> dict:
    """Generator 1 exports 600 MW to the load bus over two parallel circuits.

    A single 0.25 pu circuit tops out near 420 MW, so losing one is unstable
    whatever the clearing time. At 0.1 pu the case has a finite clearing time.
    """
    doc = three_bus_doc()
    doc['system']['name'] = 'radial_tie'
    doc['buses'][0]['kind'] = 'PV'
    doc['buses'][1]['kind'] = 'slack'
    doc['branches'] = [
        {'circuit_id': '1-3a', 'from_bus': 1, 'to_bus': 3, 'r': 0.0, 'x': x_circuit},
        {'circuit_id': '1-3b', 'from_bus': 1, 'to_bus': 3, 'r': 0.0, 'x': x_circuit},
        {'circuit_id': '2-3', 'from_bus': 2, 'to_bus': 3, 'r': 0.002, 'x': 0.03, 'b_shunt': 0.02},
    ]
    doc['controls'] = {'default': {'governor_enabled': False}}
    doc['solver'] = {
        'angle_pair': ['G1', 'G2'],
        'corridor': ['1-3a', '1-3b'],
        'cct_circuit': '1-3a',
    }
    return doc


def radial_tie(x_circuit: float = 0.25) -> Scenario:
    return scenario_from_document(radial_tie_doc(x_circuit), 'radial_tie')


@cache
def bundled() -> Scenario:
    return load_scenario(BUNDLED)


def condition_names(issues):
    return [type(i.condition).__name__ for i in issues]
