"""``section.key=value`` overrides applied to a raw scenario document."""

from __future__ import annotations

import copy
import tomllib
from collections.abc import Iterable
from typing import Any

from ..condition import InvalidOverride
from ..errors import ScenarioError


ALIASES = {
    'acle.k': 'acle.k_pu_per_rad',
    'acle.t': 'acle.t_filter_s',
    'acle.p_cons': 'acle.p_cons_mw',
    'solver.dt': 'solver.dt_s',
    'solver.t_end': 'solver.t_end_s',
}
ROW_KEYS = ('id', 'circuit_id', 'bus')


def parse_value(text: str) -> Any:
    """A TOML literal, or the bare text when it is not one."""
    try:
        return tomllib.loads(f"v = {text}")['v']
    except tomllib.TOMLDecodeError:
        return text.strip()


def split_override(text: str) -> tuple[list[str], Any]:
    key, sep, value = text.partition('=')
    key = key.strip()
    if not sep or not key or any(not part for part in key.split('.')):
        raise ScenarioError([InvalidOverride.issue(text)])
    key = ALIASES.get(key, key)
    return key.split('.'), parse_value(value)


def _child(node: Any, part: str, text: str) -> Any:
    if isinstance(node, dict):
        return node.setdefault(part, {})
    if isinstance(node, list):
        for row in node:
            if isinstance(row, dict) and any(str(row.get(k)) == part for k in ROW_KEYS):
                return row
    raise ScenarioError([InvalidOverride.issue(f"{text}: no entry {part!r}")])


def apply_overrides(doc: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Copy of ``doc`` with the overrides applied in order.

    Array rows such as buses or branches are addressed by their identifier,
    e.g. ``branches.7-8a.x=0.12``.
    """
    ret = copy.deepcopy(doc)
    for text in overrides:
        path, value = split_override(text)
        node: Any = ret
        for part in path[:-1]:
            node = _child(node, part, text)
        if not isinstance(node, dict):
            raise ScenarioError([InvalidOverride.issue(text)])
        node[path[-1]] = value
    return ret


def override_pairs(overrides: Iterable[str]) -> dict[str, Any]:
    """Resolved key and value of each override, for run manifests."""
    ret = {}
    for text in overrides:
        path, value = split_override(text)
        ret['.'.join(path)] = value
    return ret
