"""Incident investigation threads over a simulated log.

Each thread picks the last relevant decision before the incident, traces it
back, and applies a small set of checks to the ancestors. The checks look
only at recorded attributes (model cards, release flags, cadences); fault
tags written by the simulator are never consulted here, so tests can use
them as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Any

from ..errors import UnknownThread
from ..provlog import Kind, ProvLog, Rel, Snapshot, canonical_json, format_ts, order_key
from ..query import Pipeline, actors_involved, record_investigation, trace_back
from ..records import ModelCard

THREADS = {
    "driver": ("hazard-response", "no-brake"),
    "lighting": ("dimming-decision", "dim"),
    "ambulance": ("risk-classification", "redirect-ambulances"),
}


@dataclass
class Finding:
    node: str
    cause: str
    detail: str
    agents: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {"node": self.node, "cause": self.cause, "detail": self.detail,
                "agents": list(self.agents)}


@dataclass
class Findings:
    thread: str
    root: str
    decision: str
    adverse: bool
    findings: list[Finding] = field(default_factory=list)
    actors: list[str] = field(default_factory=list)
    investigation: str | None = None

    @property
    def nodes(self) -> set[str]:
        return {f.node for f in self.findings}

    def to_dict(self) -> dict[str, Any]:
        return {"thread": self.thread, "root": self.root, "decision": self.decision,
                "adverse": self.adverse, "findings": [f.to_dict() for f in self.findings],
                "actors": list(self.actors), "investigation": self.investigation}

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_text(self) -> str:
        lines = [f"thread {self.thread}: root {self.root} decided {self.decision!r}"
                 + ("" if self.adverse else " (not adverse, nothing to explain)")]
        for f in self.findings:
            lines.append(f"  - {f.node} [{f.cause}] {f.detail}; agents: {', '.join(f.agents)}")
        if self.actors:
            lines.append(f"  actors: {', '.join(self.actors)}")
        return "\n".join(lines) + "\n"


def incident_time(snap: Snapshot) -> datetime:
    reports = snap.find(Kind.ENTITY, category="incident_report")
    if reports:
        return min(r.timestamp for r in reports)
    return snap.last_timestamp()


def thread_root(snap: Snapshot, thread: str) -> str | None:
    if thread not in THREADS:
        raise UnknownThread(f"unknown thread {thread!r}; expected one of {sorted(THREADS)}")
    label, _ = THREADS[thread]
    cutoff = incident_time(snap)
    hits = [n for n in snap.find(Kind.ACTIVITY, activity=label) if n.timestamp < cutoff]
    if not hits:
        return None
    return max(hits, key=order_key).id


def _agent_names(snap: Snapshot, node_id: str) -> list[str]:
    """Owners of a node, plus owners of whatever it was copied from."""
    ids = [node_id] + snap.neighbors(node_id, "upstream", Rel.DERIVED_FROM)
    names: list[str] = []
    for n in ids:
        for a in snap.neighbors(n, "upstream", [Rel.ATTRIBUTED_TO, Rel.ASSOCIATED_WITH]):
            name = str(snap.get_node(a).attrs.get("name", a))
            if name not in names:
                names.append(name)
    return names


def _cards_for(snap: Snapshot, model_id: str) -> list[ModelCard]:
    out = []
    for n in snap.neighbors(model_id, "downstream", Rel.DERIVED_FROM):
        node = snap.get_node(n)
        if node.attrs.get("category") == "model_card":
            out.append(ModelCard.from_node(node))
    return sorted(out, key=lambda c: c.version)


def _stale_models(snap: Snapshot, pipe: Pipeline) -> list[tuple[str, str]]:
    at = snap.get_node(pipe.root).timestamp
    conditions = {str(snap.get_node(n).attrs.get("light_condition")) for n in pipe.nodes
                  if snap.get_node(n).attrs.get("activity") == "object-detection"}
    out = []
    for n in pipe.nodes:
        node = snap.get_node(n)
        a = node.attrs
        if a.get("category") != "model" or a.get("deployment") != "local":
            continue
        newer = [m for m in snap.find(Kind.ENTITY, category="model", family=a.get("family"))
                 if m.attrs.get("deployment") != "local" and m.timestamp <= at
                 and int(m.attrs.get("version", 0)) > int(a.get("version", 0))]
        if not newer:
            continue
        weak: list[str] = []
        for src in snap.neighbors(n, "upstream", Rel.DERIVED_FROM):
            for card in _cards_for(snap, src):
                weak += [c for c in card.below_requirement() if not conditions or c in conditions]
        if weak:
            detail = (f"local model version {a.get('version')} in use while version "
                      f"{max(int(m.attrs['version']) for m in newer)} was available; "
                      f"model card below requirement for {', '.join(sorted(set(weak)))}")
            out.append((n, detail))
    return out


def _checks(snap: Snapshot, pipe: Pipeline) -> list[tuple[str, str, str]]:
    found: list[tuple[str, str, str]] = []
    stale = _stale_models(snap, pipe)
    for n, detail in stale:
        found.append((n, "stale-model", detail))
        for act in snap.neighbors(n, "upstream", Rel.GENERATED):
            if snap.get_node(act).attrs.get("mode") == "manual":
                who = snap.get_node(act).attrs.get("performed_by", "someone")
                found.append((act, "manual-update",
                              f"model installed by a manual update ({who})"))
    members = set(pipe.nodes)
    for n in pipe.nodes:
        a = snap.get_node(n).attrs
        if a.get("category") == "software_release" and a.get("regression") is True:
            found.append((n, "faulty-release",
                          f"release {a.get('version')} was flagged as a regression"))
        if "cadence_s" in a:
            node = snap.get_node(n)
            users = [u for u in snap.neighbors(n, "downstream", Rel.USED) if u in members]
            for u in users:
                age = (snap.get_node(u).timestamp - node.timestamp).total_seconds()
                if age > float(a["cadence_s"]):
                    found.append((n, "overdue-process",
                                  f"{a.get('category')} was {age / 86400:.1f} days old when used; "
                                  f"expected every {float(a['cadence_s']) / 86400:.1f} days"))
                    break
    return found


def investigate(log: ProvLog, thread: str, record: bool = True) -> Findings:
    """Run one line of inquiry and (by default) log it as an investigation."""
    snap = log.snapshot()
    root = thread_root(snap, thread)
    if root is None:
        raise UnknownThread(f"log has no {THREADS[thread][0]!r} activity before the incident")
    decision = str(snap.get_node(root).attrs.get("decision", ""))
    adverse = decision == THREADS[thread][1]
    pipe = trace_back(snap, root)
    out = Findings(thread, root, decision, adverse)
    out.actors = [str(snap.get_node(a.agent).attrs.get("name", a.agent))
                  for a in actors_involved(pipe)]
    if adverse:
        seen = set()
        for node, cause, detail in sorted(_checks(snap, pipe),
                                          key=lambda f: order_key(snap.get_node(f[0]))):
            if node in seen:
                continue
            seen.add(node)
            out.findings.append(Finding(node, cause, detail, _agent_names(snap, node)))
    if record:
        out.investigation = record_investigation(
            log, f"investigate {thread}", pipe, thread=thread,
            findings=",".join(f.node for f in out.findings), incident=format_ts(incident_time(snap)))
    return out
