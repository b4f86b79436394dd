"""Scenario TOML documents to the scenario data model.

Every problem found is reported as an issue; ``load_scenario`` collects them
all and raises one ``ScenarioError``.
"""

from __future__ import annotations

import dataclasses
import tomllib
import types
from collections.abc import Iterable, Mapping
from enum import StrEnum
from importlib import resources
from pathlib import Path
from typing import Any, TypeVar, Union, get_args, get_origin, get_type_hints

from .. import condition as fc
from ..acle import AcleSettings
from ..condition import Log, nolog
from ..errors import AclestabError, ScenarioError
from ..machine import ControlChain, Generator, MachineParams
from ..network import Branch, Bus, BusKind, Load, NetworkModel
from ..typeshed import StrPath
from ..vsc import ConverterLossModel, DcBus, DcLine, VscHvdcLink, VscParams
from .model import EventKind, EventSpec, Scenario, SolverSettings
from .overrides import apply_overrides


T = TypeVar('T')

SECTIONS = (
    'system',
    'buses',
    'branches',
    'loads',
    'machines',
    'controls',
    'hvdc',
    'acle',
    'events',
    'solver',
)
REQUIRED_SECTIONS = ('system', 'buses', 'branches', 'machines')
GENERATOR_KEYS = ('bus', 'p_mw', 'v_set', 'controls', 'model')
LINK_PARTS = ('converters', 'dc_buses', 'dc_lines')
BUNDLED_PACKAGE = 'aclestab.scenarios'


class _Invalid(Exception):
    pass


def _coerce(hint: Any, value: Any) -> Any:
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        args = [a for a in get_args(hint) if a is not type(None)]
        return _coerce(args[0], value)
    if origin is tuple:
        if not isinstance(value, list):
            raise _Invalid("expected an array")
        return tuple(_coerce(get_args(hint)[0], v) for v in value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _Invalid("expected a number")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _Invalid("expected an integer")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise _Invalid("expected true or false")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise _Invalid("expected a string")
        return value
    if isinstance(hint, type) and issubclass(hint, StrEnum):
        try:
            return hint(value)
        except ValueError:
            allowed = ", ".join(m.value for m in hint)
            raise _Invalid(f"expected one of {allowed}") from None
    raise _Invalid(f"unsupported type {hint}")


def load_record(
    log: Log,
    section: str,
    data: Any,
    klas: type[T],
    fixed: Mapping[str, Any] | None = None,
    skip: Iterable[str] = (),
) -> T | None:
    """Build a dataclass record from one TOML table, logging every problem."""
    if not isinstance(data, dict):
        log(fc.InvalidValue.issue(section, '*', "expected a table"))
        return None
    fixed = dict(fixed or {})
    hints = get_type_hints(klas)
    known = {f.name: f for f in dataclasses.fields(klas)}  # type: ignore[arg-type]
    skip = set(skip)
    kwargs: dict[str, Any] = {}
    rejected: set[str] = set()
    ok = True
    for key, value in data.items():
        if key in skip:
            continue
        if key not in known or key in fixed:
            log(fc.UnknownKey.issue(section, key))
            ok = False
            continue
        try:
            kwargs[key] = _coerce(hints[key], value)
        except _Invalid as ex:
            log(fc.InvalidValue.issue(section, key, str(ex)))
            rejected.add(key)
            ok = False
    kwargs.update(fixed)
    for name, f in known.items():
        missing = f.default is dataclasses.MISSING
        missing = missing and f.default_factory is dataclasses.MISSING
        if missing and name not in kwargs and name not in rejected:
            log(fc.MissingKey.issue(section, name))
            ok = False
    if not ok:
        return None
    try:
        return klas(**kwargs)
    except AclestabError as ex:
        log(fc.InvalidValue.issue(section, '*', str(ex)))
        return None


def _rows(log: Log, doc: Mapping[str, Any], section: str) -> list[Any]:
    got = doc.get(section, [])
    if not isinstance(got, list):
        log(fc.InvalidValue.issue(section, '*', "expected an array of tables"))
        return []
    return got


def _named(log: Log, doc: Mapping[str, Any], section: str) -> dict[str, Any]:
    got = doc.get(section, {})
    if not isinstance(got, dict):
        log(fc.InvalidValue.issue(section, '*', "expected a table of named entries"))
        return {}
    return got


def _check_unique(log: Log, section: str, key: str, values: Iterable[object]) -> None:
    seen: set[object] = set()
    for v in values:
        if v in seen:
            log(fc.DuplicateId.issue(section, key, str(v)))
        seen.add(v)


def _rejected_ids(rows: list[Any], records: list[Any], key: str) -> set[Any]:
    """Identifiers of rows that failed to load, still valid as reference targets."""
    return {
        row[key]
        for row, rec in zip(rows, records)
        if rec is None and isinstance(row, dict) and key in row
    }


def parse_network(log: Log, doc: Mapping[str, Any]) -> NetworkModel | None:
    system = doc.get('system', {})
    if not isinstance(system, dict):
        log(fc.InvalidValue.issue('system', '*', "expected a table"))
        return None
    sys_fields = {k: v for k, v in system.items() if k != 'name'}
    empty = {'buses': (), 'branches': (), 'loads': (), 'faults': ()}
    shell = load_record(log, 'system', sys_fields, NetworkModel, fixed=empty)
    bus_rows = _rows(log, doc, 'buses')
    buses = [load_record(log, 'buses', r, Bus) for r in bus_rows]
    branches = [
        load_record(log, 'branches', r, Branch) for r in _rows(log, doc, 'branches')
    ]
    loads = [load_record(log, 'loads', r, Load) for r in _rows(log, doc, 'loads')]
    if shell is None:
        return None
    ok_buses = [b for b in buses if b]
    ok_branches = [b for b in branches if b]
    ok_loads = [ld for ld in loads if ld]
    _check_unique(log, 'buses', 'id', (b.id for b in ok_buses))
    _check_unique(log, 'branches', 'circuit_id', (b.circuit_id for b in ok_branches))
    ids = {b.id for b in ok_buses} | _rejected_ids(bus_rows, buses, 'id')
    for br in ok_branches:
        for end in ('from_bus', 'to_bus'):
            if getattr(br, end) not in ids:
                log(fc.UnresolvedReference.issue('branches', end, br.circuit_id))
    for ld in ok_loads:
        if ld.bus not in ids:
            log(fc.UnresolvedReference.issue('loads', 'bus', str(ld.bus)))
    if None in buses or None in branches or None in loads:
        return None
    return dataclasses.replace(
        shell, buses=tuple(ok_buses), branches=tuple(ok_branches), loads=tuple(ok_loads)
    )


def parse_generators(
    log: Log, doc: Mapping[str, Any], network: NetworkModel | None
) -> tuple[Generator, ...] | None:
    ret = []
    ok = True
    kinds = {b.id: b.kind for b in network.buses} if network else {}
    for name, row in _named(log, doc, 'machines').items():
        section = f"machines.{name}"
        if not isinstance(row, dict):
            log(fc.InvalidValue.issue(section, '*', "expected a table"))
            ok = False
            continue
        params = load_record(log, section, row, MachineParams, skip=GENERATOR_KEYS)
        top = {k: v for k, v in row.items() if k in GENERATOR_KEYS}
        fixed = {'name': name, 'params': params}
        gen = load_record(log, section, top, Generator, fixed=fixed)
        if gen is None or params is None:
            ok = False
            continue
        if network and gen.bus not in kinds:
            log(fc.UnresolvedReference.issue(section, 'bus', str(gen.bus)))
            ok = False
        elif network and kinds[gen.bus] == BusKind.PQ:
            log(fc.InvalidValue.issue(section, 'bus', f"bus {gen.bus} is a PQ bus"))
            ok = False
        ret.append(gen)
    return tuple(ret) if ok else None


def parse_controls(log: Log, doc: Mapping[str, Any]) -> dict[str, ControlChain] | None:
    ret: dict[str, ControlChain] = {}
    ok = True
    for name, row in _named(log, doc, 'controls').items():
        chain = load_record(log, f"controls.{name}", row, ControlChain)
        if chain is None:
            ok = False
        else:
            ret[name] = chain
    return ret if ok else None


def parse_converter(log: Log, name: str, row: Any) -> VscParams | None:
    section = f"hvdc.converters.{name}"
    if not isinstance(row, dict):
        log(fc.InvalidValue.issue(section, '*', "expected a table"))
        return None
    losses_row = row.get('losses', {})
    losses = load_record(log, f"{section}.losses", losses_row, ConverterLossModel)
    fixed = {'name': name, 'losses': losses}
    ret = load_record(log, section, row, VscParams, fixed=fixed, skip=('losses',))
    return ret if losses else None


def parse_link(
    log: Log, doc: Mapping[str, Any], network: NetworkModel | None
) -> VscHvdcLink | None:
    hvdc = doc['hvdc']
    if not isinstance(hvdc, dict):
        log(fc.InvalidValue.issue('hvdc', '*', "expected a table"))
        return None
    top = {k: v for k, v in hvdc.items() if k not in LINK_PARTS}
    empty = {k: () for k in LINK_PARTS}
    shell = load_record(log, 'hvdc', top, VscHvdcLink, fixed=empty)
    rows = _rows(log, hvdc, 'dc_buses')
    dc_buses = [load_record(log, 'hvdc.dc_buses', r, DcBus) for r in rows]
    rows = _rows(log, hvdc, 'dc_lines')
    dc_lines = [load_record(log, 'hvdc.dc_lines', r, DcLine) for r in rows]
    named = _named(log, hvdc, 'converters')
    converters = [parse_converter(log, name, row) for name, row in named.items()]
    if shell is None or None in dc_buses or None in dc_lines or None in converters:
        return None
    ok_dc = [b for b in dc_buses if b]
    ok_lines = [ln for ln in dc_lines if ln]
    ok_conv = [c for c in converters if c]
    _check_unique(log, 'hvdc.dc_buses', 'id', (b.id for b in ok_dc))
    _check_unique(log, 'hvdc.dc_lines', 'id', (ln.id for ln in ok_lines))
    dc_ids = {b.id for b in ok_dc}
    ac_ids = {b.id for b in network.buses} if network else set()
    for ln in ok_lines:
        for end in ('from_bus', 'to_bus'):
            if getattr(ln, end) not in dc_ids:
                log(fc.UnresolvedReference.issue('hvdc.dc_lines', end, ln.id))
    for c in ok_conv:
        section = f"hvdc.converters.{c.name}"
        if c.dc_bus not in dc_ids:
            log(fc.UnresolvedReference.issue(section, 'dc_bus', str(c.dc_bus)))
        if network and c.ac_bus not in ac_ids:
            log(fc.UnresolvedReference.issue(section, 'ac_bus', str(c.ac_bus)))
    return dataclasses.replace(
        shell,
        converters=tuple(ok_conv),
        dc_buses=tuple(ok_dc),
        dc_lines=tuple(ok_lines),
    )


def _check_references(log: Log, sc: Scenario) -> None:
    circuits = {b.circuit_id for b in sc.network.branches}
    machines = {g.name for g in sc.generators}
    converters = {c.name for c in sc.link.converters} if sc.link else set()
    for g in sc.generators:
        if g.controls not in sc.controls and g.controls != 'default':
            section = f"machines.{g.name}"
            log(fc.UnresolvedReference.issue(section, 'controls', g.controls))
    if sc.link:
        for key in ('converter', 'remote'):
            name = getattr(sc.acle, key)
            if name not in converters:
                log(fc.UnresolvedReference.issue('acle', key, name))
        try:
            sc.link.dc_slack
        except AclestabError as ex:
            log(fc.InvalidValue.issue('hvdc', 'converters', str(ex)))
    for e in sc.events:
        if e.kind == EventKind.SETPOINT:
            head = (e.target or '').rpartition('.')[0]
            if head != 'acle' and head not in converters:
                log(fc.UnresolvedReference.issue('events', 'target', e.target or ''))
        elif e.circuit not in circuits:
            log(fc.UnresolvedReference.issue('events', 'circuit', e.circuit or ''))
    for name in sc.solver.angle_pair:
        if name not in machines:
            log(fc.UnresolvedReference.issue('solver', 'angle_pair', name))
    for cid in sc.solver.corridor:
        if cid not in circuits:
            log(fc.UnresolvedReference.issue('solver', 'corridor', cid))
    cct_circuit = sc.solver.cct_circuit
    if cct_circuit is not None and cct_circuit not in circuits:
        log(fc.UnresolvedReference.issue('solver', 'cct_circuit', cct_circuit))


def parse_scenario(log: Log, doc: Mapping[str, Any]) -> Scenario | None:
    """Scenario from a TOML document; ``None`` when any issue was logged."""
    issues: list[fc.Issue] = []

    def both(issue: fc.Issue) -> None:
        issues.append(issue)
        log(issue)

    for key in doc:
        if key not in SECTIONS:
            both(fc.UnknownKey.issue(key, '*'))
    for section in REQUIRED_SECTIONS:
        if section not in doc:
            both(fc.MissingSection.issue(section))
    if issues:
        return None
    system = doc['system']
    name = system.get('name', 'scenario') if isinstance(system, dict) else 'scenario'
    network = parse_network(both, doc)
    generators = parse_generators(both, doc, network)
    controls = parse_controls(both, doc)
    link = parse_link(both, doc, network) if 'hvdc' in doc else None
    acle = load_record(both, 'acle', doc.get('acle', {}), AcleSettings)
    rows = _rows(both, doc, 'events')
    events = [load_record(both, 'events', r, EventSpec) for r in rows]
    solver = load_record(both, 'solver', doc.get('solver', {}), SolverSettings)
    if issues or network is None or generators is None or controls is None:
        return None
    if acle is None or solver is None or None in events:
        return None
    ret = Scenario(
        str(name),
        network,
        generators,
        controls,
        link,
        acle,
        tuple(e for e in events if e),
        solver,
    )
    _check_references(both, ret)
    return None if issues else ret


def resolve_scenario(source: StrPath) -> Path:
    """A scenario path, or the bundled scenario of that name."""
    path = Path(source)
    if path.is_file():
        return path
    bundled = resources.files(BUNDLED_PACKAGE) / f"{source}.toml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ScenarioError([fc.ScenarioNotFound.issue(str(source))], str(source))


def bundled_names() -> list[str]:
    root = resources.files(BUNDLED_PACKAGE)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith('.toml'))


def read_document(source: StrPath) -> dict[str, Any]:
    path = resolve_scenario(source)
    try:
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as ex:
        raise ScenarioError([fc.TomlSyntaxError.issue(str(ex))], str(path)) from ex


def scenario_from_document(
    doc: Mapping[str, Any], source: str | None = None, log: Log = nolog
) -> Scenario:
    issues: list[fc.Issue] = []

    def collect(issue: fc.Issue) -> None:
        issues.append(issue)
        log(issue)

    ret = parse_scenario(collect, doc)
    if ret is None or issues:
        raise ScenarioError(issues, source)
    return ret


def load_scenario(
    source: StrPath, overrides: Iterable[str] = (), log: Log = nolog
) -> Scenario:
    """Read, override and validate a scenario file or bundled scenario name."""
    doc = apply_overrides(read_document(source), overrides)
    return scenario_from_document(doc, str(source), log)
