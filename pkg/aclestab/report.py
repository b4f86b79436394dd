"""Output files of the command-line workflows: CSV tables, issues, manifests
and text summaries."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import pandas as pd
from hidos import swhid_from_path

from .condition import Issue
from .jinja import PackageTextGenerator
from .scenario import Scenario, write_scenario
from .stability import SWEEP_COLUMNS, CctResult, CctSweepResult, ms

if TYPE_CHECKING:
    from .powerflow import AcleOperatingPoint, PowerFlowSolution
    from .typeshed import JsonData


FLOAT_FORMAT = '%.9g'
INPUT_DIR = 'input'
SCENARIO_COPY = 'scenario.toml'


def bus_frame(sol: PowerFlowSolution) -> pd.DataFrame:
    net = sol.network
    s_base = net.s_base
    gen_p = {b.id: 0.0 for b in net.buses}
    gen_q = dict(gen_p)
    load_p = dict(gen_p)
    load_q = dict(gen_p)
    for g in sol.generators:
        gen_p[g.bus] += g.p * s_base
        gen_q[g.bus] += g.q * s_base
    for ld in net.loads:
        load_p[ld.bus] += ld.p0
        load_q[ld.bus] += ld.q0
    rows = []
    for b, vm, va in zip(net.buses, sol.v_mag, sol.v_ang):
        rows.append({
            'bus': b.id,
            'kind': str(b.kind),
            'v_mag_pu': float(vm),
            'v_ang_deg': math.degrees(float(va)),
            'p_gen_mw': gen_p[b.id],
            'q_gen_mvar': gen_q[b.id],
            'p_load_mw': load_p[b.id],
            'q_load_mvar': load_q[b.id],
        })
    return pd.DataFrame(rows)


def branch_frame(sol: PowerFlowSolution) -> pd.DataFrame:
    rows = []
    for br, f in zip(sol.network.branches, sol.flows):
        rows.append({
            'circuit_id': f.circuit_id,
            'from_bus': br.from_bus,
            'to_bus': br.to_bus,
            'in_service': br.in_service,
            'p_from_mw': f.p_from,
            'q_from_mvar': f.q_from,
            'p_to_mw': f.p_to,
            'q_to_mvar': f.q_to,
            'loss_mw': f.losses,
        })
    return pd.DataFrame(rows)


def converter_frame(sol: PowerFlowSolution) -> pd.DataFrame:
    s = sol.s_conv
    rows = []
    for c in sol.converters:
        rows.append({
            'converter': c.name,
            'direction': str(c.direction),
            'u_s_pu': c.u_s,
            'theta_s_deg': math.degrees(c.theta_s),
            'p_s_mw': c.p_s * s,
            'q_s_mvar': c.q_s * s,
            'i_s_pu': c.i_s,
            'p_loss_mw': c.p_loss * s,
            'p_dc_mw': c.p_dc * s,
            'u_dc_pu': c.u_dc,
        })
    return pd.DataFrame(rows)


def operating_point_tables(sol: PowerFlowSolution) -> dict[str, pd.DataFrame]:
    return {
        'buses': bus_frame(sol),
        'branches': branch_frame(sol),
        'converters': converter_frame(sol),
    }


def write_operating_point(sol: PowerFlowSolution, path: Path) -> None:
    """One CSV file with a ``# <table>`` line ahead of each block."""
    with open(path, 'w', newline='') as f:
        for i, (name, frame) in enumerate(operating_point_tables(sol).items()):
            if i:
                f.write('\n')
            f.write(f"# {name}\n")
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT)


def write_issues(issues: Iterable[Issue], path: Path) -> None:
    with open(path, 'w') as f:
        json.dump([i.as_pod() for i in issues], f, indent=4, sort_keys=True)
        f.write('\n')


def cct_frame(
    scenario: Scenario, result: CctResult, case: str | None = None
) -> pd.DataFrame:
    acle = scenario.acle
    t = acle.t_filter_s if acle.k else None
    lo, hi = result.bracket
    row = {
        'case': case or str(acle.mode),
        'K_pu_per_rad': acle.k,
        'T_s': t,
        'cct_ms': ms(result.cct),
        'bracket_lo_ms': ms(lo),
        'bracket_hi_ms': ms(hi),
        'status': str(result.status),
    }
    return pd.DataFrame([row], columns=SWEEP_COLUMNS)


def write_cct(scenario: Scenario, result: CctResult, path: Path) -> None:
    cct_frame(scenario, result).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_sweep(result: CctSweepResult, out: Path) -> list[Path]:
    """``sweep.csv`` plus one ``series_<case>.csv`` per gain."""
    ret = [out / 'sweep.csv']
    result.to_frame().to_csv(ret[0], index=False, float_format=FLOAT_FORMAT)
    for case in result.cases:
        path = out / f"series_{case}.csv"
        result.series(case).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        ret.append(path)
    return ret


def version() -> str:
    try:
        from ._version import version

        return str(version)
    except ImportError:
        return "0.0.0"


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    overrides: Mapping[str, Any] = field(default_factory=dict)
    scenario: str | None = None
    scenario_swhid: str | None = None
    outputs: list[str] = field(default_factory=list)
    version: str = field(default_factory=version)

    def as_pod(self) -> dict[str, JsonData]:
        return {
            'command': self.command,
            'argv': list(self.argv),
            'overrides': dict(self.overrides),
            'scenario': self.scenario,
            'scenario_swhid': self.scenario_swhid,
            'outputs': sorted(self.outputs),
            'version': self.version,
        }

    def add_output(self, out: Path, path: Path) -> None:
        self.outputs.append(path.relative_to(out).as_posix())

    def dump_json(self, path: Path) -> None:
        """Write JSON to path."""

        with open(path, 'w') as file:
            json.dump(self.as_pod(), file, indent=4, sort_keys=True)
            file.write('\n')


def store_input(scenario: Scenario, out: Path, manifest: RunManifest) -> None:
    """Copy the effective scenario under ``input/`` and record its SWHID."""
    input_dir = out / INPUT_DIR
    input_dir.mkdir(parents=True, exist_ok=True)
    path = write_scenario(scenario, input_dir / SCENARIO_COPY)
    manifest.scenario = path.relative_to(out).as_posix()
    manifest.scenario_swhid = swhid_from_path(input_dir)


def write_manifest(out: Path, manifest: RunManifest) -> Path:
    ret = out / 'manifest.json'
    manifest.dump_json(ret)
    return ret


_TEXT = PackageTextGenerator()


def powerflow_summary(
    scenario: Scenario,
    sol: PowerFlowSolution,
    acle_point: AcleOperatingPoint | None = None,
) -> str:
    tables = operating_point_tables(sol)
    ctx = {
        'name': scenario.name,
        'acle': scenario.acle,
        'acle_point': acle_point,
        'angle_deg': math.degrees(acle_point.angle_difference) if acle_point else None,
        'p_hvdc_mw': sol.p_hvdc_mw(scenario.acle.converter) if sol.converters else None,
        'iterations': dict(sol.iterations),
        'buses': tables['buses'].to_dict('records'),
        'branches': tables['branches'].to_dict('records'),
        'converters': tables['converters'].to_dict('records'),
        'balance': sol.balance(),
    }
    return _TEXT.render('powerflow.txt.jinja', ctx)


def cct_summary(scenario: Scenario, result: CctResult) -> str:
    ctx = {
        'name': scenario.name,
        'acle': scenario.acle,
        'circuit': scenario.solver.cct_circuit,
        'result': result,
        'bracket_ms': [ms(b) for b in result.bracket],
        'runs': result.run_count,
    }
    return _TEXT.render('cct.txt.jinja', ctx)


def sweep_summary(scenario: Scenario, result: CctSweepResult) -> str:
    ctx = {
        'name': scenario.name,
        'cells': len(result.cells),
        't_grid': result.t_grid,
        'failed': [c for c in result.cells if c.status == 'failed'],
        'cases': [
            {
                'case': s.case,
                'k': s.k,
                't_min': s.t_min,
                'cct_min_ms': ms(s.cct_min),
                'baseline_ms': ms(s.cct_baseline),
                'gap_ms': ms(s.gap),
            }
            for s in result.summary()
        ],
    }
    return _TEXT.render('sweep.txt.jinja', ctx)
