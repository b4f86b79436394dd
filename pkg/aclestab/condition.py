from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING, TypeAlias

if TYPE_CHECKING:
    from .typeshed import JsonData


class Condition:
    def __str__(self) -> str:
        return self.__doc__ or type(self).__name__

    @property
    def names(self) -> tuple[str, ...]:
        return (type(self).__name__,)

    def as_pod(self) -> list[JsonData]:
        return list(self.names)


@dataclass(frozen=True)
class Issue:
    condition: Condition

    def __str__(self) -> str:
        return str(self.condition)

    def as_pod(self) -> dict[str, JsonData]:
        ret: dict[str, JsonData] = {}
        ret['condition'] = self.condition.as_pod()
        return ret


Log: TypeAlias = Callable[[Issue], None]


def nolog(issue: Issue) -> None:
    pass


@dataclass(frozen=True)
class SimpleIssue(Issue):
    text: str | None

    def __str__(self) -> str:
        msg = str(self.condition)
        if self.text:
            msg += f": {self.text}"
        return msg

    def as_pod(self) -> dict[str, JsonData]:
        ret = super().as_pod()
        if self.text:
            ret['text'] = self.text
        return ret


@dataclass(frozen=True)
class SimpleCondition(Condition):
    """Scenario condition"""

    @classmethod
    def issue(klas, text: str) -> Issue:
        return SimpleIssue(klas(), text)


class TomlSyntaxError(SimpleCondition):
    """TOML syntax error"""


class ScenarioNotFound(SimpleCondition):
    """Scenario not found"""


class InvalidOverride(SimpleCondition):
    """Invalid override"""


@dataclass(frozen=True)
class ScenarioIssue(Issue):
    info: str | None = None

    def __str__(self) -> str:
        msg = str(self.condition)
        if self.info:
            msg += f": {self.info}"
        return msg

    def as_pod(self) -> dict[str, JsonData]:
        ret = super().as_pod()
        if self.info:
            ret['info'] = self.info
        return ret


@dataclass(frozen=True)
class MissingSection(Condition):
    """Missing scenario section"""

    section: str

    def __str__(self) -> str:
        return f"{self.__doc__} [{self.section}]"

    @classmethod
    def issue(klas, section: str) -> Issue:
        return ScenarioIssue(klas(section))

    @property
    def names(self) -> tuple[str, ...]:
        return (type(self).__name__, self.section)


@dataclass(frozen=True)
class KeyCondition(Condition):
    section: str
    key: str

    def __str__(self) -> str:
        return f"{self.__doc__} {self.section}.{self.key}"

    @classmethod
    def issue(klas, section: str, key: str, info: str | None = None) -> Issue:
        return ScenarioIssue(klas(section, key), info)

    @property
    def names(self) -> tuple[str, ...]:
        return (type(self).__name__, self.section, self.key)


class UnknownKey(KeyCondition):
    """Unknown scenario key"""


class MissingKey(KeyCondition):
    """Missing scenario key"""


class InvalidValue(KeyCondition):
    """Invalid scenario value"""


class UnresolvedReference(KeyCondition):
    """Unresolved scenario reference"""


class DuplicateId(KeyCondition):
    """Duplicate identifier"""


@dataclass(frozen=True)
class SimIssue(Issue):
    time: float
    info: str | None = None

    def __str__(self) -> str:
        msg = f"t={self.time:.3f} s: {self.condition}"
        if self.info:
            msg += f": {self.info}"
        return msg

    def as_pod(self) -> dict[str, JsonData]:
        ret = super().as_pod()
        ret['time'] = self.time
        if self.info:
            ret['info'] = self.info
        return ret


@dataclass(frozen=True)
class DeviceCondition(Condition):
    device: str

    def __str__(self) -> str:
        return f"{self.__doc__} {self.device}"

    @classmethod
    def issue(klas, device: str, time: float, info: str | None = None) -> Issue:
        return SimIssue(klas(device), time, info)

    @property
    def names(self) -> tuple[str, ...]:
        return (type(self).__name__, self.device)


class CurrentLimitActive(DeviceCondition):
    """Converter current limit active"""


class FeedforwardHeld(DeviceCondition):
    """Converter feedforward held at low PCC voltage"""


class MeasurementHeld(DeviceCondition):
    """PCC angle measurement held"""


class ModulationIndexExceeded(DeviceCondition):
    """Converter modulation index exceeded"""


class DcVoltageBandViolation(DeviceCondition):
    """DC voltage outside normal band"""
