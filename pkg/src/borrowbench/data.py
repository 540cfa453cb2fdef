"""Arm-level trial summaries: types, CSV ingestion and the bundled case studies."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Union

from .errors import DuplicateLabel, InvalidCount, MalformedRow, MissingRole, UnknownDataset


class Endpoint(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class BinaryArm:
    n: int
    y: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidCount(f"n must be >= 1, got {self.n}")
        if not 0 <= self.y <= self.n:
            raise InvalidCount(f"y must lie in [0, n], got y={self.y}, n={self.n}")

    @property
    def rate(self) -> float:
        return self.y / self.n


@dataclass(frozen=True)
class ContinuousArm:
    n: int
    mean: float
    sd: float

    def __post_init__(self):
        if self.n < 2:
            raise InvalidCount(f"n must be >= 2 for a continuous arm, got {self.n}")
        if not (self.sd > 0 and math.isfinite(self.sd)):
            raise InvalidCount(f"sd must be positive and finite, got {self.sd}")
        if not math.isfinite(self.mean):
            raise InvalidCount(f"mean must be finite, got {self.mean}")

    @property
    def se(self) -> float:
        return self.sd / math.sqrt(self.n)


Arm = Union[BinaryArm, ContinuousArm]

_ARM_TYPE = {Endpoint.BINARY: BinaryArm, Endpoint.CONTINUOUS: ContinuousArm}
_HEADER = {
    Endpoint.BINARY: ("role", "label", "n", "y"),
    Endpoint.CONTINUOUS: ("role", "label", "n", "mean", "sd"),
}


@dataclass(frozen=True)
class StudySet:
    """Historical controls (in order) plus the current control and treatment arms."""

    endpoint: Endpoint
    historical: tuple[tuple[str, Arm], ...]
    current_control: Arm
    current_treatment: Arm
    control_label: str = "CC"
    treatment_label: str = "CT"

    def __post_init__(self):
        object.__setattr__(self, "endpoint", Endpoint(self.endpoint))
        object.__setattr__(self, "historical", tuple((str(l), a) for l, a in self.historical))
        if not self.historical:
            raise MissingRole("at least one historical (H) arm is required")
        kind = _ARM_TYPE[self.endpoint]
        arms = [a for _, a in self.historical] + [self.current_control, self.current_treatment]
        if not all(isinstance(a, kind) for a in arms):
            raise MalformedRow(f"all arms must be {kind.__name__} for a {self.endpoint.value} endpoint")
        labels = self.labels
        seen = set()
        for label in labels:
            if label in seen:
                raise DuplicateLabel(f"duplicate historical label {label!r}")
            seen.add(label)
        clash = seen & {self.control_label, self.treatment_label}
        if clash:
            raise DuplicateLabel(f"historical label(s) {sorted(clash)} reuse a current-trial label")

    @property
    def K(self) -> int:
        return len(self.historical)

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.historical]

    @property
    def arms(self) -> list[Arm]:
        return [arm for _, arm in self.historical]

    @property
    def n_cc(self) -> int:
        return self.current_control.n

    @property
    def n_historical(self) -> int:
        return sum(a.n for a in self.arms)

    def to_csv(self) -> str:
        return serialize(self)


def _parse_int(value: str, field: str, line: int) -> int:
    try:
        out = float(value)
    except ValueError:
        raise MalformedRow(f"line {line}: field {field!r} is not numeric: {value!r}") from None
    if not out.is_integer():
        raise InvalidCount(f"line {line}: field {field!r} must be an integer count, got {value!r}")
    return int(out)


def _parse_float(value: str, field: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise MalformedRow(f"line {line}: field {field!r} is not numeric: {value!r}") from None


def load_study_set(source: str, endpoint: Endpoint | str) -> StudySet:
    """Parse CSV text (header ``role,label,n,y`` or ``role,label,n,mean,sd``)."""
    endpoint = Endpoint(endpoint)
    header = _HEADER[endpoint]
    reader = csv.reader(io.StringIO(source.lstrip("﻿")))
    rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    if not rows:
        raise MalformedRow("empty input")
    got = tuple(c.strip().lower() for c in rows[0])
    if got != header:
        raise MalformedRow(f"expected header {','.join(header)!r}, got {','.join(got)!r}")

    historical: list[tuple[str, Arm]] = []
    control = treatment = None
    control_label, treatment_label = "CC", "CT"
    for line, row in enumerate(rows[1:], start=2):
        cells = [c.strip() for c in row]
        if len(cells) > len(header):
            raise MalformedRow(f"line {line}: expected {len(header)} fields, got {row!r}")
        missing = [h for h, c in zip(header, cells + [""] * len(header)) if c == ""]
        if missing:
            raise MalformedRow(f"line {line}: missing value for field(s) {', '.join(missing)}")
        role, label = cells[0].upper(), cells[1]
        n = _parse_int(cells[2], "n", line)
        try:
            if endpoint is Endpoint.BINARY:
                arm: Arm = BinaryArm(n, _parse_int(cells[3], "y", line))
            else:
                arm = ContinuousArm(n, _parse_float(cells[3], "mean", line), _parse_float(cells[4], "sd", line))
        except InvalidCount as exc:
            raise InvalidCount(f"line {line}: {exc}") from None
        if role == "H":
            historical.append((label, arm))
        elif role == "CC":
            if control is not None:
                raise DuplicateLabel(f"line {line}: more than one CC row")
            control, control_label = arm, label
        elif role == "CT":
            if treatment is not None:
                raise DuplicateLabel(f"line {line}: more than one CT row")
            treatment, treatment_label = arm, label
        else:
            raise MalformedRow(f"line {line}: unknown role {cells[0]!r} (expected H, CC or CT)")
    if control is None:
        raise MissingRole("no current_control (CC) row")
    if treatment is None:
        raise MissingRole("no current_treatment (CT) row")
    return StudySet(endpoint, tuple(historical), control, treatment, control_label, treatment_label)


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize(study: StudySet) -> str:
    """Inverse of :func:`load_study_set`."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_HEADER[study.endpoint])
    rows = [("H", label, arm) for label, arm in study.historical]
    rows += [("CC", study.control_label, study.current_control), ("CT", study.treatment_label, study.current_treatment)]
    for role, label, arm in rows:
        if isinstance(arm, BinaryArm):
            writer.writerow([role, label, arm.n, arm.y])
        else:
            writer.writerow([role, label, arm.n, _fmt(arm.mean), _fmt(arm.sd)])
    return buf.getvalue()


BUILTIN_DATASETS = {
    "as_binary": Endpoint.BINARY,
    "adcs_continuous": Endpoint.CONTINUOUS,
}


def builtin_dataset(name: str) -> StudySet:
    """Return one of the two bundled case studies.

    ``as_binary``: ankylosing spondylitis ASAS20 responders, eight historical
    placebo arms. ``adcs_continuous``: 52-week ADAS-cog change, five
    historical ADCS placebo arms.
    """
    try:
        endpoint = BUILTIN_DATASETS[name]
    except KeyError:
        raise UnknownDataset(f"unknown dataset {name!r}; choose from {sorted(BUILTIN_DATASETS)}") from None
    text = resources.files("borrowbench.datasets").joinpath(f"{name}.csv").read_text(encoding="utf-8")
    return load_study_set(text, endpoint)
