from __future__ import annotations

from collections.abc import Iterable, Sequence

from .condition import Issue


class AclestabError(Exception):
    pass


class ScenarioError(AclestabError):
    def __init__(self, issues: Iterable[Issue], source: str | None = None):
        self.issues: tuple[Issue, ...] = tuple(issues)
        self.source = source
        where = f" in {source}" if source else ""
        lines = [f"{len(self.issues)} scenario issue(s){where}"]
        lines += [f"  {i}" for i in self.issues]
        super().__init__("\n".join(lines))


class DataError(AclestabError, ValueError):
    pass


class TopologyError(AclestabError):
    pass


class SolverError(AclestabError):
    def __init__(
        self,
        msg: str,
        *,
        iterations: int | None = None,
        residual: float | None = None,
        trace: Sequence[tuple[float, float]] = (),
    ):
        self.iterations = iterations
        self.residual = residual
        self.trace = tuple(trace)
        if iterations is not None:
            msg += f" after {iterations} iterations"
        if residual is not None:
            msg += f" (residual {residual:.3e})"
        super().__init__(msg)


class InitializationError(AclestabError):
    def __init__(self, device: str, msg: str):
        self.device = device
        super().__init__(f"{device}: {msg}")


class DcCollapseError(AclestabError):
    def __init__(self, converter: str, u_dc: float, time: float | None = None):
        self.converter = converter
        self.u_dc = u_dc
        self.time = time
        when = "" if time is None else f" at t={time:.3f} s"
        super().__init__(f"DC voltage collapse at {converter}{when}: u_dc={u_dc:.4f} pu")
