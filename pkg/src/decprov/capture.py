"""Capture policies: decide what reaches the log, and in what form.

Rules are evaluated in order and the first match wins. Patterns are literal
strings or globs with a single ``*``.

Emitters mark individual attribute values with :class:`Tagged` (``pd`` for
personal data, ``payload`` for bulky content). The gate unwraps tags before
anything touches the log, so tags themselves are never stored.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .errors import IntegrityError, IoFailure, MalformedPattern
from .provlog import (
    AttrValue,
    FlowEvent,
    Kind,
    Payload,
    ProvLog,
    ProvNode,
    ProvRelation,
    Snapshot,
    as_snapshot,
    to_utc,
)

REDACTED = "[REDACTED]"


class CaptureAction(str, Enum):
    RECORD_FULL = "record_full"
    RECORD_METADATA_ONLY = "record_metadata_only"
    REDACT = "redact"
    DROP = "drop"


@dataclass(frozen=True)
class Tagged:
    value: AttrValue
    pd: bool = False
    payload: bool = False


def personal(value: AttrValue) -> Tagged:
    return Tagged(value, pd=True)


def bulky(value: AttrValue) -> Tagged:
    return Tagged(value, payload=True)


def untag(value: Any) -> AttrValue:
    return value.value if isinstance(value, Tagged) else value


def attr_text(value: AttrValue) -> str:
    """String form used for pattern matching (JSON spelling for non-strings)."""
    value = untag(value)
    return value if isinstance(value, str) else json.dumps(value)


# -- patterns -----------------------------------------------------------------

def check_pattern(pattern: Any) -> str:
    if not isinstance(pattern, str):
        raise MalformedPattern(f"pattern must be a string, got {pattern!r}")
    if pattern.count("*") > 1:
        raise MalformedPattern(f"at most one '*' allowed: {pattern!r}")
    return pattern


def glob_match(pattern: str, text: str) -> bool:
    check_pattern(pattern)
    if "*" not in pattern:
        return pattern == text
    head, tail = pattern.split("*")
    return len(text) >= len(head) + len(tail) and text.startswith(head) and text.endswith(tail)


@dataclass(frozen=True)
class Candidate:
    """What a capture rule sees of a payload."""

    kind: str
    agent: str | None = None
    attrs: Mapping[str, AttrValue] = field(default_factory=dict)
    boundary: str = "None"


def candidate_for(payload: Payload, source: ProvLog | Snapshot | None = None,
                  agent: str | None = None) -> Candidate:
    """Build the rule-matching view of a payload.

    The agent of a node defaults to its ``agent`` attr (or ``name`` for Agent
    nodes); for a flow it is the sender's name, resolved through ``source``.
    """
    if isinstance(payload, ProvNode):
        attrs = {k: untag(v) for k, v in payload.attrs.items()}
        if agent is None:
            agent = attrs.get("agent")
            if agent is None and payload.kind == Kind.AGENT:
                agent = attrs.get("name")
        return Candidate(payload.kind.value, None if agent is None else str(agent), attrs)
    if isinstance(payload, FlowEvent):
        if agent is None:
            agent = payload.from_agent
            if source is not None and payload.from_agent in source:
                agent = as_snapshot(source).get_node(payload.from_agent).attrs.get("name", agent)
        return Candidate("Flow", str(agent), {}, payload.boundary.value)
    if isinstance(payload, ProvRelation):
        return Candidate("Relation", agent, {"rel": payload.rel.value})
    raise TypeError(f"not a payload: {payload!r}")


@dataclass(frozen=True)
class Match:
    kind: str = "*"
    agent: str = "*"
    attrs: Mapping[str, str] = field(default_factory=dict)
    boundary: str = "*"

    def __post_init__(self):
        for p in (self.kind, self.agent, self.boundary, *self.attrs.values()):
            check_pattern(p)
        object.__setattr__(self, "attrs", dict(self.attrs))

    def matches(self, cand: Candidate) -> bool:
        if not glob_match(self.kind, cand.kind):
            return False
        if self.agent != "*" and (cand.agent is None or not glob_match(self.agent, cand.agent)):
            return False
        if not glob_match(self.boundary, cand.boundary):
            return False
        for key, pattern in self.attrs.items():
            if key not in cand.attrs or not glob_match(pattern, attr_text(cand.attrs[key])):
                return False
        return True

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "agent": self.agent, "attrs": dict(self.attrs),
                "boundary": self.boundary}


@dataclass(frozen=True)
class CaptureRule:
    match: Match
    action: CaptureAction
    retention: timedelta | None = None

    def __post_init__(self):
        object.__setattr__(self, "action", CaptureAction(self.action))
        if self.retention is not None and self.retention <= timedelta(0):
            raise MalformedPattern("retention must be positive")


@dataclass
class CapturePolicy:
    rules: list[CaptureRule] = field(default_factory=list)
    default_action: CaptureAction = CaptureAction.RECORD_FULL

    def __post_init__(self):
        self.default_action = CaptureAction(self.default_action)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CapturePolicy":
        try:
            rules = []
            for raw in doc.get("rules", []):
                m = raw.get("match", {})
                unknown = set(m) - {"kind", "agent", "attrs", "boundary"}
                if unknown:
                    raise MalformedPattern(f"unknown match fields {sorted(unknown)}")
                retention = raw.get("retention_s")
                rules.append(CaptureRule(
                    Match(**m),
                    CaptureAction(raw["action"]),
                    None if retention is None else timedelta(seconds=retention),
                ))
            return cls(rules, CaptureAction(doc.get("default_action", "record_full")))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise MalformedPattern(f"malformed capture policy: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        rules = []
        for r in self.rules:
            d: dict[str, Any] = {"match": r.match.to_dict(), "action": r.action.value}
            if r.retention is not None:
                d["retention_s"] = r.retention.total_seconds()
            rules.append(d)
        return {"default_action": self.default_action.value, "rules": rules}

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CapturePolicy":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def first_match(self, cand: Candidate) -> tuple[int, CaptureRule] | None:
        for i, rule in enumerate(self.rules):
            if rule.match.matches(cand):
                return i, rule
        return None


def evaluate(policy: CapturePolicy, candidate: Candidate | Payload) -> CaptureAction:
    """Action of the first matching rule, else the policy default."""
    if not isinstance(candidate, Candidate):
        candidate = candidate_for(candidate)
    hit = policy.first_match(candidate)
    return policy.default_action if hit is None else hit[1].action


# -- gate ---------------------------------------------------------------------

def transform(payload: Payload, action: CaptureAction) -> Payload | None:
    """Apply a capture action; None means drop."""
    action = CaptureAction(action)
    if action == CaptureAction.DROP:
        return None
    if not isinstance(payload, ProvNode):
        return payload
    attrs: dict[str, AttrValue] = {}
    for key, value in payload.attrs.items():
        tagged = isinstance(value, Tagged)
        if action == CaptureAction.REDACT and tagged and value.pd:
            attrs[key] = REDACTED
        elif action == CaptureAction.RECORD_METADATA_ONLY and tagged and (value.pd or value.payload):
            continue
        else:
            attrs[key] = untag(value)
    if action != CaptureAction.RECORD_FULL:
        attrs["capture_action"] = action.value
    return replace(payload, attrs=attrs)


@dataclass(frozen=True)
class GateResult:
    appended: str | None
    action_taken: CaptureAction


def gate_append(policy: CapturePolicy, payload: Payload, log: ProvLog,
                agent: str | None = None) -> GateResult:
    action = evaluate(policy, candidate_for(payload, log, agent))
    stored = transform(payload, action)
    if stored is None:
        return GateResult(None, action)
    return GateResult(log.append(stored), action)


# -- retention ----------------------------------------------------------------

@dataclass
class ExpireResult:
    log: ProvLog
    tombstoned: list[str]


def is_expired(policy: CapturePolicy, node: ProvNode, now: datetime) -> bool:
    if node.attrs.get("tombstone") is True:
        return False
    hit = policy.first_match(candidate_for(node))
    if hit is None or hit[1].retention is None:
        return False
    return to_utc(now) - node.timestamp > hit[1].retention


def expire(policy: CapturePolicy, log: ProvLog, now: datetime,
           out: str | os.PathLike | None = None) -> ExpireResult:
    """Compact ``log`` into a new log with aged-out nodes tombstoned.

    Tombstones keep id, kind and timestamp (so every edge stays valid) and
    replace attrs with ``{"tombstone": true}``. The input log is not touched.
    """
    report = log.verify()
    if not report.ok:
        raise IntegrityError(f"cannot compact: record {report.first_bad_index} fails verification")
    compacted = ProvLog(out)
    if out is not None:
        try:
            Path(out).write_text("", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    tombstoned = []
    for rec in log.records:
        p = rec.payload
        if isinstance(p, ProvNode) and is_expired(policy, p, now):
            p = replace(p, attrs={"tombstone": True})
            tombstoned.append(p.id)
        compacted.append(p)
    return ExpireResult(compacted, tombstoned)
