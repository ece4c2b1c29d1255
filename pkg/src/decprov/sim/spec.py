"""Scenario description: agents, components, dependencies and scripted faults."""

from __future__ import annotations

import copy
import json
import os
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..errors import InvalidSpec, IoFailure, WindowOutOfRange
from ..provlog import Boundary, format_ts, parse_ts

FAULT_KINDS = ("ModelStale", "ServiceBadUpdate", "ProcessSkipped", "SensorBias")

_DURATION = re.compile(r"(\d+(?:\.\d+)?)(ms|d|h|m|s)")
_UNIT_MS = {"d": 86_400_000, "h": 3_600_000, "m": 60_000, "s": 1000, "ms": 1}


def parse_duration(value: Any) -> int:
    """Duration in milliseconds from ``"213d19h30m"``, ``"500ms"`` or plain seconds."""
    if isinstance(value, bool):
        raise InvalidSpec(f"bad duration {value!r}")
    if isinstance(value, (int, float)):
        return int(round(value * 1000))
    if not isinstance(value, str) or not value:
        raise InvalidSpec(f"bad duration {value!r}")
    pos, total = 0, 0.0
    for m in _DURATION.finditer(value):
        if m.start() != pos:
            break
        total += float(m.group(1)) * _UNIT_MS[m.group(2)]
        pos = m.end()
    if pos != len(value):
        raise InvalidSpec(f"bad duration {value!r}")
    return int(round(total))


def format_duration(ms: int) -> str:
    if ms == 0:
        return "0s"
    out, rest = [], ms
    for unit in ("d", "h", "m", "s", "ms"):
        n, rest = divmod(rest, _UNIT_MS[unit])
        if n:
            out.append(f"{n}{unit}")
    return "".join(out)


@dataclass(frozen=True)
class FaultInjection:
    kind: str
    target: str
    window: tuple[int, int]
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise InvalidSpec(f"unknown fault kind {self.kind!r}")
        start, end = self.window
        if start > end:
            raise InvalidSpec(f"fault window starts after it ends: {self.window}")
        object.__setattr__(self, "window", (int(start), int(end)))
        object.__setattr__(self, "params", dict(self.params))

    def active(self, t: int) -> bool:
        return self.window[0] <= t <= self.window[1]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FaultInjection":
        try:
            params = {k: v for k, v in d.items() if k not in ("kind", "target", "window")}
            w = d["window"]
            return cls(d["kind"], d["target"], (parse_duration(w[0]), parse_duration(w[1])),
                       params)
        except (KeyError, TypeError, IndexError) as exc:
            raise InvalidSpec(f"malformed fault {d!r}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "target": self.target,
                "window": [format_duration(self.window[0]), format_duration(self.window[1])],
                **self.params}


@dataclass(frozen=True)
class Dependency:
    consumer: str
    producer: str
    category: str
    boundary: Boundary = Boundary.TECHNICAL
    mode: str = "pull"

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.mode not in ("pull", "push"):
            raise InvalidSpec(f"dependency mode must be pull or push, got {self.mode!r}")


@dataclass
class ScenarioSpec:
    name: str
    start: datetime
    horizon: int
    seed: int
    agents: list[dict[str, Any]]
    components: list[dict[str, Any]]
    dependencies: list[Dependency]
    faults: tuple[FaultInjection, ...] = ()
    incident: dict[str, Any] = field(default_factory=dict)
    series: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    events: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        self.faults = tuple(self.faults)

    # -- (de)serialization

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScenarioSpec":
        try:
            spec = cls(
                name=doc.get("name", "scenario"),
                start=parse_ts(doc["start"]),
                horizon=parse_duration(doc["horizon"]),
                seed=int(doc.get("seed", 0)),
                agents=copy.deepcopy(list(doc.get("agents", []))),
                components=copy.deepcopy(list(doc.get("components", []))),
                dependencies=[Dependency(**d) for d in doc.get("dependencies", [])],
                faults=tuple(FaultInjection.from_dict(f) for f in doc.get("faults", [])),
                incident=copy.deepcopy(dict(doc.get("incident", {}))),
                series={k: [(parse_duration(t), float(v)) for t, v in pts]
                        for k, pts in doc.get("series", {}).items()},
                events=copy.deepcopy(list(doc.get("events", []))),
            )
        except InvalidSpec:
            raise
        except Exception as exc:
            raise InvalidSpec(f"malformed scenario: {exc}") from exc
        spec.validate()
        return spec

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "start": format_ts(self.start),
            "horizon": format_duration(self.horizon),
            "seed": self.seed,
            "incident": copy.deepcopy(self.incident),
            "series": {k: [[format_duration(t), v] for t, v in pts]
                       for k, pts in self.series.items()},
            "events": copy.deepcopy(self.events),
            "agents": copy.deepcopy(self.agents),
            "components": copy.deepcopy(self.components),
            "dependencies": [{"consumer": d.consumer, "producer": d.producer,
                              "category": d.category, "boundary": d.boundary.value,
                              "mode": d.mode} for d in self.dependencies],
            "faults": [f.to_dict() for f in self.faults],
        }

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ScenarioSpec":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: {exc}") from exc

    # -- checks

    def validate(self) -> None:
        if self.horizon < 0:
            raise InvalidSpec("horizon must not be negative")
        agent_names = [a.get("name") for a in self.agents]
        if len(set(agent_names)) != len(agent_names) or None in agent_names:
            raise InvalidSpec("agent names must be present and unique")
        comp_names = [c.get("name") for c in self.components]
        if len(set(comp_names)) != len(comp_names) or None in comp_names:
            raise InvalidSpec("component names must be present and unique")
        if set(agent_names) & set(comp_names):
            raise InvalidSpec("agents and components share a name")
        for c in self.components:
            if c.get("agent") not in agent_names:
                raise InvalidSpec(f"component {c['name']!r} belongs to undeclared agent")
        for d in self.dependencies:
            for ref in (d.consumer, d.producer):
                if ref not in comp_names:
                    raise InvalidSpec(f"dependency references undeclared component {ref!r}")
        for f in self.faults:
            if f.target not in comp_names:
                raise InvalidSpec(f"fault targets undeclared component {f.target!r}")
            check_window(self, f)

    def component(self, name: str) -> dict[str, Any]:
        for c in self.components:
            if c["name"] == name:
                return c
        raise InvalidSpec(f"no component {name!r}")

    def at(self, offset_ms: int) -> datetime:
        return self.start + timedelta(milliseconds=offset_ms)


def check_window(spec: ScenarioSpec, fault: FaultInjection) -> None:
    start, end = fault.window
    if start < 0 or end > spec.horizon:
        raise WindowOutOfRange(
            f"{fault.kind} window {format_duration(start)}..{format_duration(end)} "
            f"outside horizon {format_duration(spec.horizon)}")


def inject(spec: ScenarioSpec, fault: FaultInjection) -> ScenarioSpec:
    """Copy of ``spec`` with ``fault`` added."""
    check_window(spec, fault)
    if fault.target not in [c["name"] for c in spec.components]:
        raise InvalidSpec(f"fault targets undeclared component {fault.target!r}")
    return replace(spec, faults=spec.faults + (fault,))


def remove_fault(spec: ScenarioSpec, fault: FaultInjection | str) -> ScenarioSpec:
    """Copy without ``fault`` (or without every fault of that kind, given a name)."""
    if isinstance(fault, str):
        kept = tuple(f for f in spec.faults if f.kind != fault)
    else:
        kept = list(spec.faults)
        if fault in kept:
            kept.remove(fault)
        kept = tuple(kept)
    return replace(spec, faults=kept)


def bundled_path(name: str = "smart-city.json") -> Path:
    return Path(str(resources.files("decprov.data").joinpath(name)))


def load_bundled(name: str = "smart-city.json") -> ScenarioSpec:
    return ScenarioSpec.load(bundled_path(name))


def resolve_scenario(ref: str | os.PathLike) -> ScenarioSpec:
    """Load a scenario file, falling back to the bundled file of that name."""
    path = Path(ref)
    if path.exists():
        return ScenarioSpec.load(path)
    bundled = bundled_path(path.name)
    if bundled.exists():
        return ScenarioSpec.load(bundled)
    raise IoFailure(f"no scenario file {ref}")
