"""Reactive compliance rules over flow events and entity uses.

A rule fires when every condition in its trigger holds; the first firing rule
decides the reaction, and ``allow`` is the fallback. Every decision, allow
included, is appended to the log as an Activity so that reactions can be
reviewed later.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .capture import attr_text, check_pattern, glob_match
from .errors import IoFailure, MalformedPattern, MalformedRule, UnknownId
from .provlog import (
    Boundary,
    FlowEvent,
    Kind,
    ProvLog,
    ProvNode,
    ProvRelation,
    Rel,
    Snapshot,
    activity,
    as_snapshot,
    canonical_json,
    format_ts,
    order_key,
    parse_ts,
    to_utc,
)
from .query import Pipeline, actors_involved, boundary_crossings, trace_back, trace_forward


class Reaction(str, Enum):
    ALLOW = "allow"
    BLOCK = "block"
    FILTER_ENTITY = "filter_entity"
    QUARANTINE = "quarantine"
    ALERT = "alert"


@dataclass(frozen=True)
class Alert:
    severity: str = "high"
    recipient: str = "regulator"


@dataclass(frozen=True)
class Trigger:
    """Conjunction of conditions; ``None`` flags and ``*`` patterns are wildcards."""

    event: str = "*"
    from_agent: str = "*"
    to_agent: str = "*"
    boundary: str = "*"
    category: str = "*"
    attrs: Mapping[str, str] = field(default_factory=dict)
    expected: bool | None = None
    expired: bool | None = None
    unreliable: bool | None = None

    def __post_init__(self):
        if self.event not in ("*", "flow", "use"):
            raise MalformedRule(f"event must be flow, use or *, got {self.event!r}")
        try:
            for p in (self.from_agent, self.to_agent, self.boundary, self.category,
                      *self.attrs.values()):
                check_pattern(p)
        except MalformedPattern as exc:
            raise MalformedRule(str(exc)) from exc
        for flag in (self.expected, self.expired, self.unreliable):
            if flag is not None and not isinstance(flag, bool):
                raise MalformedRule(f"flag must be true, false or null, got {flag!r}")
        object.__setattr__(self, "attrs", dict(self.attrs))

    def fires(self, ctx: "EventContext") -> bool:
        if self.event != "*" and self.event != ctx.event_type:
            return False
        if not (glob_match(self.from_agent, ctx.from_agent)
                and glob_match(self.to_agent, ctx.to_agent)
                and glob_match(self.boundary, ctx.boundary)
                and glob_match(self.category, ctx.category)):
            return False
        for key, pattern in self.attrs.items():
            if key not in ctx.attrs or not glob_match(pattern, attr_text(ctx.attrs[key])):
                return False
        for flag, actual in ((self.expected, ctx.expected), (self.expired, ctx.expired),
                             (self.unreliable, ctx.unreliable)):
            if flag is not None and flag != actual:
                return False
        return True

    def to_dict(self) -> dict[str, Any]:
        return {"event": self.event, "from_agent": self.from_agent, "to_agent": self.to_agent,
                "boundary": self.boundary, "category": self.category, "attrs": dict(self.attrs),
                "expected": self.expected, "expired": self.expired,
                "unreliable": self.unreliable}


@dataclass(frozen=True)
class ComplianceRule:
    id: str
    trigger: Trigger
    reaction: Reaction
    alert: Alert | None = None
    note: str = ""

    def __post_init__(self):
        if not self.id:
            raise MalformedRule("rule id must be non-empty")
        try:
            object.__setattr__(self, "reaction", Reaction(self.reaction))
        except ValueError as exc:
            raise MalformedRule(str(exc)) from exc
        if self.reaction == Reaction.ALERT and self.alert is None:
            object.__setattr__(self, "alert", Alert())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ComplianceRule":
        try:
            unknown = set(d) - {"id", "trigger", "reaction", "alert", "note"}
            if unknown:
                raise MalformedRule(f"unknown rule fields {sorted(unknown)}")
            alert = d.get("alert")
            return cls(d["id"], Trigger(**d.get("trigger", {})), d["reaction"],
                       None if alert is None else Alert(**alert), d.get("note", ""))
        except (KeyError, TypeError) as exc:
            raise MalformedRule(f"malformed rule {d!r}: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"id": self.id, "trigger": self.trigger.to_dict(),
                             "reaction": self.reaction.value, "note": self.note}
        if self.alert is not None:
            d["alert"] = {"severity": self.alert.severity, "recipient": self.alert.recipient}
        return d


@dataclass(frozen=True)
class ExpectedFlowPolicy:
    allowed: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        triples = tuple(tuple(t) for t in self.allowed)
        for t in triples:
            if len(t) != 3:
                raise MalformedRule(f"whitelist entries are (from, to, category): {t!r}")
            try:
                for p in t:
                    check_pattern(p)
            except MalformedPattern as exc:
                raise MalformedRule(str(exc)) from exc
        object.__setattr__(self, "allowed", triples)

    def allows(self, from_agent: str, to_agent: str, category: str) -> bool:
        return any(glob_match(f, from_agent) and glob_match(t, to_agent) and glob_match(c, category)
                   for f, t, c in self.allowed)

    def with_triple(self, triple: tuple[str, str, str]) -> "ExpectedFlowPolicy":
        return ExpectedFlowPolicy(self.allowed + (tuple(triple),))


@dataclass(frozen=True)
class EventContext:
    event_type: str
    event: str
    entity: str
    from_agent: str
    to_agent: str
    boundary: str
    category: str
    attrs: Mapping[str, Any]
    expected: bool
    expired: bool
    unreliable: bool


@dataclass
class ComplianceDecision:
    event: str
    rule: str | None
    reaction: Reaction
    timestamp: datetime
    entity: str | None = None
    alert: Alert | None = None
    logged_as: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "event": self.event,
            "rule": self.rule,
            "reaction": self.reaction.value,
            "timestamp": format_ts(self.timestamp),
            "entity": self.entity,
            "alert": None if self.alert is None else
            {"severity": self.alert.severity, "recipient": self.alert.recipient},
            "logged_as": self.logged_as,
        }


@dataclass
class RuleSet:
    """The contents of a rules file."""

    rules: list[ComplianceRule] = field(default_factory=list)
    whitelist: ExpectedFlowPolicy | None = None
    unreliable_agents: frozenset[str] = frozenset()

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RuleSet":
        if not isinstance(doc, Mapping):
            raise MalformedRule("rules document must be an object")
        rules = [ComplianceRule.from_dict(r) for r in doc.get("rules", [])]
        ids = [r.id for r in rules]
        if len(ids) != len(set(ids)):
            raise MalformedRule("duplicate rule ids")
        wl = doc.get("whitelist")
        whitelist = None
        if wl is not None:
            triples = [(t["from"], t["to"], t["category"]) if isinstance(t, Mapping) else t
                       for t in wl]
            whitelist = ExpectedFlowPolicy(tuple(triples))
        return cls(rules, whitelist, frozenset(doc.get("unreliable_agents", [])))

    def to_dict(self) -> dict[str, Any]:
        return {
            "rules": [r.to_dict() for r in self.rules],
            "whitelist": None if self.whitelist is None else
            [{"from": f, "to": t, "category": c} for f, t, c in self.whitelist.allowed],
            "unreliable_agents": sorted(self.unreliable_agents),
        }

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RuleSet":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise MalformedRule(f"{path}: {exc}") from exc


def default_rules() -> list[ComplianceRule]:
    return [
        ComplianceRule("filter-expired", Trigger(expired=True), Reaction.FILTER_ENTITY,
                       note="data past its expiry date is not acted on"),
        ComplianceRule("quarantine-unreliable", Trigger(unreliable=True), Reaction.QUARANTINE,
                       note="inputs from or through an unreliable agent"),
        ComplianceRule("block-unexpected", Trigger(event="flow", expected=False), Reaction.BLOCK,
                       Alert("high", "data-protection-officer"),
                       note="flow not covered by the management policy"),
    ]


def first_firing(rules: Sequence[ComplianceRule], ctx: EventContext) -> ComplianceRule | None:
    for rule in rules:
        if rule.trigger.fires(ctx):
            return rule
    return None


# -- context building ---------------------------------------------------------

def _name(node: ProvNode) -> str:
    return str(node.attrs.get("name", node.id))


def is_unreliable(node: ProvNode, unreliable: Iterable[str] = ()) -> bool:
    names = set(unreliable)
    return node.attrs.get("reliable") is False or node.id in names or _name(node) in names


def is_expired(node: ProvNode, now: datetime) -> bool:
    expiry = node.attrs.get("expiry")
    if not isinstance(expiry, str):
        return False
    return to_utc(now) > parse_ts(expiry)


def _attributed(snap: Snapshot, node_id: str) -> list[ProvNode]:
    return [snap.get_node(a) for a in snap.neighbors(node_id, "upstream", Rel.ATTRIBUTED_TO)]


def touched_agents(snap: Snapshot, entity_id: str) -> set[str]:
    """Agents an entity came from or through: actors of its backward trace plus flow endpoints."""
    pipe = trace_back(snap, entity_id)
    agents = set(pipe.actors)
    for f in pipe.flows:
        flow = snap.get_flow(f)
        agents.update((flow.from_agent, flow.to_agent))
    return agents


def flow_context(snap: Snapshot, event: FlowEvent, now: datetime,
                 whitelist: ExpectedFlowPolicy | None,
                 unreliable: Iterable[str] = ()) -> EventContext:
    ent = snap.get_node(event.entity)
    src, dst = snap.get_node(event.from_agent), snap.get_node(event.to_agent)
    category = str(ent.attrs.get("category", ""))
    expected = True if whitelist is None else whitelist.allows(_name(src), _name(dst), category)
    unreliable = set(unreliable)
    flagged = is_unreliable(src, unreliable) or any(
        is_unreliable(a, unreliable) for a in _attributed(snap, event.entity))
    return EventContext("flow", event.id, event.entity, _name(src), _name(dst),
                        event.boundary.value, category, dict(ent.attrs), expected,
                        is_expired(ent, now), flagged)


def use_context(snap: Snapshot, activity_id: str, entity_id: str, now: datetime,
                unreliable: Iterable[str] = ()) -> EventContext:
    ent = snap.get_node(entity_id)
    if ent.kind != Kind.ENTITY:
        raise UnknownId(f"{entity_id!r} is not an entity")
    sources = _attributed(snap, entity_id)
    users = [snap.get_node(a) for a in snap.neighbors(activity_id, "upstream", Rel.ASSOCIATED_WITH)]
    unreliable = set(unreliable)
    flagged = any(is_unreliable(snap.get_node(a), unreliable)
                  for a in touched_agents(snap, entity_id))
    return EventContext("use", activity_id, entity_id,
                        _name(sources[0]) if sources else "",
                        _name(users[0]) if users else "",
                        Boundary.NONE.value, str(ent.attrs.get("category", "")),
                        dict(ent.attrs), True, is_expired(ent, now), flagged)


def decide(rules: Sequence[ComplianceRule], ctx: EventContext,
           now: datetime) -> ComplianceDecision:
    """Pure first-match evaluation; nothing is logged."""
    rule = first_firing(rules, ctx)
    if rule is None:
        return ComplianceDecision(ctx.event, None, Reaction.ALLOW, to_utc(now), ctx.entity)
    return ComplianceDecision(ctx.event, rule.id, rule.reaction, to_utc(now), ctx.entity,
                              rule.alert)


def log_decision(log: ProvLog, decision: ComplianceDecision, note: str = "") -> str:
    attrs: dict[str, Any] = {"activity": "compliance-decision", "event": decision.event,
                             "reaction": decision.reaction.value,
                             "rule": decision.rule or "default"}
    if decision.alert is not None:
        attrs["alert_severity"] = decision.alert.severity
        attrs["alert_recipient"] = decision.alert.recipient
    if note:
        attrs["note"] = note
    snap = log.snapshot()
    ts = decision.timestamp
    cited = [c for c in (decision.entity, decision.event)
             if c in snap and isinstance(snap.payload(c), ProvNode)]
    if cited:
        ts = max([ts] + [snap.get_node(c).timestamp for c in cited])
    act = log.append(activity(ts, **attrs))
    for c in dict.fromkeys(cited):
        log.append(ProvRelation(Rel.USED, act, c, ts))
    decision.logged_as = act
    return act


def check_flow(rules: Sequence[ComplianceRule], whitelist: ExpectedFlowPolicy | None,
               event: FlowEvent | str, now: datetime, *, log: ProvLog,
               unreliable: Iterable[str] = ()) -> ComplianceDecision:
    """Decide and log the reaction to one flow event already in ``log``."""
    snap = log.snapshot()
    if isinstance(event, str):
        event = snap.get_flow(event)
    decision = decide(rules, flow_context(snap, event, now, whitelist, unreliable), now)
    rule = next((r for r in rules if r.id == decision.rule), None)
    log_decision(log, decision, rule.note if rule else "")
    return decision


def check_use(rules: Sequence[ComplianceRule], activity_id: str, inputs: Sequence[str],
              now: datetime, *, log: ProvLog,
              unreliable: Iterable[str] = ()) -> list[ComplianceDecision]:
    """One logged decision per input; keep only inputs whose reaction is allow."""
    snap = log.snapshot()
    snap.get_node(activity_id)
    contexts = [use_context(snap, activity_id, e, now, unreliable) for e in inputs]
    out = []
    for ctx in contexts:
        decision = decide(rules, ctx, now)
        decision.event = activity_id
        rule = next((r for r in rules if r.id == decision.rule), None)
        log_decision(log, decision, rule.note if rule else "")
        out.append(decision)
    return out


def kept_inputs(decisions: Iterable[ComplianceDecision]) -> list[str]:
    return [d.entity for d in decisions if d.reaction in (Reaction.ALLOW, Reaction.ALERT)]


# -- breach reports -----------------------------------------------------------

@dataclass
class BreachReport:
    incident: str
    recipient: str
    backward: Pipeline
    forward: Pipeline
    actors: list[dict[str, Any]]
    crossings: list[dict[str, Any]]
    affected_recipients: list[str]
    decision: ComplianceDecision

    def to_dict(self) -> dict[str, Any]:
        return {
            "incident": self.incident,
            "recipient": self.recipient,
            "backward": self.backward.to_dict(),
            "forward": self.forward.to_dict(),
            "actors": self.actors,
            "boundary_crossings": self.crossings,
            "affected_recipients": self.affected_recipients,
            "decision": self.decision.to_dict(),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_text(self) -> str:
        snap = self.backward.source
        lines = [f"BREACH REPORT for {self.recipient}", f"Incident entity: {self.incident}", ""]
        lines.append("Data flows to the incident (origin):")
        lines += [f"  {n}  {_describe(snap, n)}" for n in self.backward.nodes]
        lines.append("Data flows from the incident (consequences):")
        lines += [f"  {n}  {_describe(snap, n)}" for n in self.forward.nodes]
        lines.append("Parties involved:")
        lines += [f"  {a['name']} ({a['agent']}): {', '.join(a['roles'])}" for a in self.actors]
        lines.append("Flows between systems across boundaries:")
        lines += [f"  {c['flow']}  {c['boundary']}  {c['from']} -> {c['to']}"
                  for c in self.crossings] or ["  none recorded"]
        lines.append("Recipients of affected data:")
        lines += [f"  {r}" for r in self.affected_recipients] or ["  none"]
        lines.append(f"Alert logged as {self.decision.logged_as} "
                     f"(severity {self.decision.alert.severity if self.decision.alert else '-'})")
        return "\n".join(lines) + "\n"


def _describe(snap: Snapshot | None, node_id: str) -> str:
    if snap is None:
        return ""
    n = snap.get_node(node_id)
    label = n.attrs.get("name") or n.attrs.get("activity") or n.attrs.get("category") or ""
    return f"{n.kind.value} {label} @ {format_ts(n.timestamp)}"


def _owner_name(snap: Snapshot, agent_id: str) -> str:
    node = snap.get_node(agent_id)
    return str(node.attrs.get("org") or node.attrs.get("name") or agent_id)


def breach_report(log: ProvLog, incident: str, recipient: str,
                  now: datetime | None = None, severity: str = "high") -> BreachReport:
    """Trace an incident both ways and log an Alert addressed to ``recipient``."""
    snap = log.snapshot()
    inc = snap.get_node(incident)
    back, fwd = trace_back(snap, incident), trace_forward(snap, incident)
    roles: dict[str, set[str]] = {}
    for p in (back, fwd):
        for ar in actors_involved(p, snap):
            roles.setdefault(ar.agent, set()).update(ar.roles)
    actors = [{"agent": a, "name": _name(snap.get_node(a)), "roles": sorted(roles[a])}
              for a in sorted(roles, key=lambda i: order_key(snap.get_node(i)))]
    crossings = []
    for p in (back, fwd):
        for fid, boundary in boundary_crossings(p, snap):
            if any(c["flow"] == fid for c in crossings):
                continue
            f = snap.get_flow(fid)
            crossings.append({"flow": fid, "boundary": boundary.value,
                              "from": _name(snap.get_node(f.from_agent)),
                              "to": _name(snap.get_node(f.to_agent)),
                              "timestamp": format_ts(f.timestamp)})
    affected: list[str] = []
    for fid in fwd.flows:
        name = _owner_name(snap, snap.get_flow(fid).to_agent)
        if name not in affected:
            affected.append(name)
    for n in fwd.nodes:
        if snap.get_node(n).kind == Kind.ACTIVITY:
            for a in snap.neighbors(n, "upstream", Rel.ASSOCIATED_WITH):
                name = _owner_name(snap, a)
                if name not in affected:
                    affected.append(name)
    at = to_utc(now) if now is not None else max(snap.last_timestamp(), inc.timestamp)
    decision = ComplianceDecision(incident, "breach-report", Reaction.ALERT, at, incident,
                                  Alert(severity, recipient))
    log_decision(log, decision, "data breach reported")
    return BreachReport(incident, recipient, back, fwd, actors, crossings, affected, decision)
