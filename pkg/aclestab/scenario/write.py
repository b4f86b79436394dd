from __future__ import annotations

import dataclasses
from enum import Enum
from pathlib import Path
from typing import Any

import tomli_w

from ..typeshed import StrPath
from .model import Scenario


def _pod(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_pod(v) for v in value]
    return value


def record_table(record: Any, omit: tuple[str, ...] = ()) -> dict[str, Any]:
    """TOML table of a dataclass record; ``None`` values are left out."""
    ret = {}
    for f in dataclasses.fields(record):
        value = getattr(record, f.name)
        if f.name in omit or value is None:
            continue
        ret[f.name] = _pod(value)
    return ret


def scenario_document(scenario: Scenario) -> dict[str, Any]:
    net = scenario.network
    doc: dict[str, Any] = {}
    doc['system'] = {'name': scenario.name} | record_table(
        net, omit=('buses', 'branches', 'loads', 'faults')
    )
    doc['buses'] = [record_table(b) for b in net.buses]
    doc['branches'] = [record_table(b) for b in net.branches]
    if net.loads:
        doc['loads'] = [record_table(ld) for ld in net.loads]
    doc['machines'] = {
        g.name: record_table(g, omit=('name', 'params')) | record_table(g.params)
        for g in scenario.generators
    }
    if scenario.controls:
        doc['controls'] = {k: record_table(c) for k, c in scenario.controls.items()}
    if link := scenario.link:
        hvdc = record_table(link, omit=('converters', 'dc_buses', 'dc_lines'))
        hvdc['converters'] = {
            c.name: record_table(c, omit=('name', 'losses'))
            | {'losses': record_table(c.losses)}
            for c in link.converters
        }
        hvdc['dc_buses'] = [record_table(b) for b in link.dc_buses]
        hvdc['dc_lines'] = [record_table(ln) for ln in link.dc_lines]
        doc['hvdc'] = hvdc
    doc['acle'] = record_table(scenario.acle)
    if scenario.events:
        doc['events'] = [record_table(e) for e in scenario.events]
    doc['solver'] = record_table(scenario.solver)
    return doc


def dumps_scenario(scenario: Scenario) -> str:
    return tomli_w.dumps(scenario_document(scenario))


def write_scenario(scenario: Scenario, path: StrPath) -> Path:
    ret = Path(path)
    ret.write_text(dumps_scenario(scenario), encoding='utf-8')
    return ret
