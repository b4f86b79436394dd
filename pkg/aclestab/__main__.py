import argparse, logging, math, sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

import numpy as np

from .acle import AcleMode
from .errors import (
    AclestabError,
    DataError,
    InitializationError,
    ScenarioError,
    SolverError,
    TopologyError,
)
from .powerflow import (
    AcleOperatingPoint,
    PowerFlowSolution,
    acle_operating_point,
    sequential_acdc_powerflow,
)
from .report import (
    RunManifest,
    cct_summary,
    powerflow_summary,
    store_input,
    sweep_summary,
    version,
    write_cct,
    write_issues,
    write_manifest,
    write_operating_point,
    write_sweep,
)
from .scenario import Scenario, load_scenario
from .scenario.overrides import override_pairs
from .stability import CctStatus, compute_cct, constant_p_baseline, sweep_cct
from .tds import SimParams, TerminationReason, run_simulation


DEFAULT_SCENARIO = "kundur_two_area_hvdc"
DEFAULT_T_GRID = "0:0.05:2"
DEFAULT_K_LIST = "1,2,4"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2
EXIT_UNSTABLE = 3

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_grid(text: str) -> tuple[float, ...]:
    """``start:step:stop`` (stop included) or a comma separated list."""
    try:
        if ":" not in text:
            ret = tuple(float(v) for v in text.split(","))
        else:
            start, step, stop = (float(v) for v in text.split(":"))
            if step <= 0.0 or stop < start:
                raise ValueError(text)
            n = (stop - start) / step
            if abs(n - round(n)) > 1e-9:
                raise ValueError(text)
            grid = np.round(start + step * np.arange(round(n) + 1), 12)
            ret = tuple(float(v) for v in grid)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}") from None
    if not ret or any(not math.isfinite(v) or v < 0.0 for v in ret):
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}")
    return ret


def parse_k_list(text: str) -> tuple[float, ...]:
    try:
        ret = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid gain list {text!r}") from None
    if any(not math.isfinite(v) or v < 0.0 for v in ret):
        raise argparse.ArgumentTypeError(f"invalid gain list {text!r}")
    return ret


def positive_float(text: str) -> float:
    try:
        ret = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not ret > 0.0:
        raise argparse.ArgumentTypeError(f"{text} is not positive")
    return ret


def positive_int(text: str) -> int:
    try:
        ret = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if ret < 1:
        raise argparse.ArgumentTypeError(f"{text} is not positive")
    return ret


def common_options() -> argparse.ArgumentParser:
    ret = argparse.ArgumentParser(add_help=False)
    ret.add_argument(
        "--scenario",
        default=DEFAULT_SCENARIO,
        help="scenario TOML path or bundled scenario name",
    )
    ret.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a scenario value (repeatable)",
    )
    ret.add_argument("--out", type=Path, help="output directory")
    ret.add_argument(
        "-v", "--verbose", action="store_true", help="log progress to standard error"
    )
    return ret


def time_options() -> argparse.ArgumentParser:
    ret = argparse.ArgumentParser(add_help=False)
    ret.add_argument("--dt", type=positive_float, help="time step in seconds")
    ret.add_argument("--t-end", type=positive_float, help="simulated time in seconds")
    ret.add_argument(
        "--baseline",
        action="store_true",
        help="constant-power control at the emulation operating point",
    )
    return ret


class Main:
    command: str
    scenario: str
    overrides: list[str]
    out: Path | None
    verbose: bool
    dt: float | None
    t_end: float | None
    baseline: bool
    channels: list[str] | None
    circuit: str | None
    t_grid: tuple[float, ...]
    k_list: tuple[float, ...]
    jobs: int

    def __init__(self, cmd_line_args: Any = None):
        self.argv = list(sys.argv[1:] if cmd_line_args is None else cmd_line_args)
        parser = ArgumentParser(
            prog="aclestab",
            description="Transient stability of VSC-HVDC links emulating AC lines",
        )
        parser.add_argument("--version", action="version", version=version())
        sub = parser.add_subparsers(dest="command", required=True)
        common = common_options()
        timing = time_options()
        sub.add_parser(
            "powerflow", parents=[common], help="initial AC/DC operating point"
        )
        sim = sub.add_parser(
            "simulate", parents=[common, timing], help="time-domain simulation"
        )
        sim.add_argument(
            "--channel",
            dest="channels",
            action="append",
            metavar="PATTERN",
            help="trace channel name or glob pattern (repeatable)",
        )
        cct = sub.add_parser(
            "cct", parents=[common, timing], help="critical clearing time of one fault"
        )
        cct.add_argument("--circuit", help="faulted circuit id")
        sweep = sub.add_parser(
            "sweep", parents=[common, timing], help="clearing time over a (K, T) grid"
        )
        sweep.add_argument("--circuit", help="faulted circuit id")
        sweep.add_argument(
            "--t-grid",
            type=parse_grid,
            default=parse_grid(DEFAULT_T_GRID),
            help=f"filter time constants start:step:stop (default {DEFAULT_T_GRID})",
        )
        sweep.add_argument(
            "--k-list",
            type=parse_k_list,
            default=parse_k_list(DEFAULT_K_LIST),
            help=f"emulation gains in pu/rad (default {DEFAULT_K_LIST})",
        )
        sweep.add_argument(
            "--jobs", type=positive_int, default=1, help="parallel worker processes"
        )
        self.channels = None
        self.circuit = None
        self.baseline = False
        self.dt = self.t_end = None
        parser.parse_args(cmd_line_args, self)
        if self.command in ("simulate", "sweep") and self.out is None:
            parser.error(f"--out is required for {self.command}")

    def effective_overrides(self) -> list[str]:
        ret = list(self.overrides)
        if self.dt is not None:
            ret.append(f"solver.dt_s={self.dt!r}")
        if self.t_end is not None:
            searching = self.command in ("cct", "sweep")
            key = "solver.cct_t_end_s" if searching else "solver.t_end_s"
            ret.append(f"{key}={self.t_end!r}")
        if self.circuit is not None:
            ret.append(f'solver.cct_circuit="{self.circuit}"')
        return ret

    def load(self) -> Scenario:
        return load_scenario(self.scenario, self.effective_overrides())

    def start_manifest(self, scenario: Scenario) -> RunManifest | None:
        if self.out is None:
            return None
        self.out.mkdir(parents=True, exist_ok=True)
        ret = RunManifest(
            self.command, self.argv, override_pairs(self.effective_overrides())
        )
        store_input(scenario, self.out, ret)
        return ret

    def finish_manifest(self, manifest: RunManifest | None, paths: Sequence[Path]) -> None:
        if manifest is None or self.out is None:
            return
        for p in paths:
            manifest.add_output(self.out, p)
        write_manifest(self.out, manifest)

    def run(self) -> int:
        logging.basicConfig(
            level=logging.DEBUG if self.verbose else logging.WARNING,
            stream=sys.stderr,
            format="%(levelname)s %(name)s: %(message)s",
        )
        try:
            return getattr(self, f"cmd_{self.command}")()  # type: ignore[no-any-return]
        except (ScenarioError, DataError, TopologyError) as ex:
            print(ex, file=sys.stderr)
            return EXIT_INPUT
        except (SolverError, InitializationError) as ex:
            print(ex, file=sys.stderr)
            return EXIT_SOLVER
        except AclestabError as ex:
            print(ex, file=sys.stderr)
            return EXIT_SOLVER

    def operating_point(
        self, scenario: Scenario
    ) -> tuple[Scenario, PowerFlowSolution, AcleOperatingPoint | None]:
        """Scenario to run and its initial point, switched to the baseline on request."""
        acle = scenario.acle
        link = scenario.link
        emulating = link is not None and {acle.converter, acle.remote} <= {
            c.name for c in link.converters
        }
        if not emulating:
            if self.baseline:
                raise DataError("Constant-power baseline needs the emulating link")
            return scenario, sequential_acdc_powerflow(scenario), None
        if self.baseline:
            scenario = scenario.with_acle(mode=AcleMode.AC_LINE_EMULATION)
        point = acle_operating_point(scenario)
        if self.baseline:
            scenario = constant_p_baseline(scenario, point.p_hvdc_mw)
            log.info("Constant-power baseline at %.2f MW", point.p_hvdc_mw)
        return scenario, point.solution, point

    def cmd_powerflow(self) -> int:
        scenario = self.load()
        manifest = self.start_manifest(scenario)
        scenario, sol, point = self.operating_point(scenario)
        print(powerflow_summary(scenario, sol, point), end="")
        if self.out is not None:
            path = self.out / "operating_point.csv"
            write_operating_point(sol, path)
            self.finish_manifest(manifest, [path])
        return EXIT_OK

    def cmd_simulate(self) -> int:
        scenario = self.load()
        manifest = self.start_manifest(scenario)
        scenario, sol, _ = self.operating_point(scenario)
        channels = tuple(self.channels) if self.channels else ("*",)
        params = SimParams.from_scenario(scenario, channels=channels)
        trace = run_simulation(scenario, params, operating_point=sol)
        assert self.out is not None
        paths = [self.out / "trace.csv", self.out / "issues.json"]
        trace.write_csv(paths[0])
        write_issues(trace.issues, paths[1])
        self.finish_manifest(manifest, paths)
        if trace.reason == TerminationReason.COMPLETED:
            print(f"{scenario.name}: completed {trace.steps} steps")
            return EXIT_OK
        print(f"{scenario.name}: {trace.reason} at t={trace.t_stop:.3f} s {trace.message}")
        if trace.reason == TerminationReason.LOSS_OF_SYNCHRONISM:
            return EXIT_UNSTABLE
        return EXIT_SOLVER

    def cmd_cct(self) -> int:
        scenario = self.load()
        manifest = self.start_manifest(scenario)
        scenario, sol, _ = self.operating_point(scenario)
        result = compute_cct(scenario, operating_point=sol)
        print(cct_summary(scenario, result), end="")
        if self.out is not None:
            path = self.out / "cct.csv"
            write_cct(scenario, result, path)
            self.finish_manifest(manifest, [path])
        return EXIT_OK

    def cmd_sweep(self) -> int:
        if self.baseline:
            raise DataError("Sweeps always include the constant-power baseline")
        scenario = self.load()
        manifest = self.start_manifest(scenario)
        result = sweep_cct(scenario, self.k_list, self.t_grid, jobs=self.jobs)
        print(sweep_summary(scenario, result), end="")
        assert self.out is not None
        self.finish_manifest(manifest, write_sweep(result, self.out))
        failed = [c for c in result.cells if c.status == CctStatus.FAILED]
        return EXIT_SOLVER if failed else EXIT_OK


def main(args: Any = None) -> int:
    try:
        cmd = Main(args)
    except UsageError as ex:
        print(ex, file=sys.stderr)
        return EXIT_INPUT
    return cmd.run()


if __name__ == "__main__":
    exit(main())
