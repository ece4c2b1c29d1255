"""Legal and engineering artifacts built from the provenance log.

Art. 30 records are aggregated from attrs of nodes attributed to or associated
with a controller; every value keeps the ids of the records it came from.
Datasheets and model cards are stored as Entity nodes derived from the
dataset or model they describe. Audit reports are filtered per audience and
scored on relevance, accuracy, proportionality and comprehensibility.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Iterable, Mapping

from .errors import CategoryMismatch, InvalidRecord, UnknownId, VersionRegression
from .provlog import (
    ACTOR_RELS,
    Kind,
    ProvLog,
    ProvNode,
    ProvRelation,
    Rel,
    Snapshot,
    as_snapshot,
    canonical_json,
    entity,
    format_ts,
    order_key,
    parse_ts,
    to_utc,
)
from .query import Pipeline, actors_involved, boundary_crossings, trace_back, trace_forward

FIELD_GROUPS = ("purposes", "data_subject_categories", "personal_data_categories",
                "recipient_categories", "security_measures")


@dataclass
class Sourced:
    value: str
    sources: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "sources": list(self.sources)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Sourced":
        return cls(d["value"], list(d["sources"]))


class _Collector:
    """Ordered value -> source ids accumulator."""

    def __init__(self):
        self._items: dict[str, list[str]] = {}

    def add(self, value: Any, *sources: str) -> None:
        for part in _split(value):
            bucket = self._items.setdefault(part, [])
            bucket.extend(s for s in sources if s not in bucket)

    def items(self) -> list[Sourced]:
        return [Sourced(v, s) for v, s in sorted(self._items.items())]


def _split(value: Any) -> list[str]:
    if value is None:
        return []
    return [p.strip() for p in str(value).split(";") if p.strip()]


@dataclass
class ProcessorEntry:
    name: Sourced
    contact: Sourced | None
    processing_categories: list[Sourced]
    security_measures: Sourced | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name.to_dict(),
            "contact": None if self.contact is None else self.contact.to_dict(),
            "processing_categories": [s.to_dict() for s in self.processing_categories],
            "security_measures": None if self.security_measures is None
            else self.security_measures.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProcessorEntry":
        opt = lambda v: None if v is None else Sourced.from_dict(v)  # noqa: E731
        return cls(Sourced.from_dict(d["name"]), opt(d["contact"]),
                   [Sourced.from_dict(s) for s in d["processing_categories"]],
                   opt(d["security_measures"]))


@dataclass
class Article30Record:
    controller: str
    controller_name: str
    contact: Sourced | None
    purposes: list[Sourced]
    data_subject_categories: list[Sourced]
    personal_data_categories: list[Sourced]
    recipient_categories: list[Sourced]
    security_measures: Sourced | None
    processors: list[ProcessorEntry] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "controller": self.controller,
            "controller_name": self.controller_name,
            "contact": None if self.contact is None else self.contact.to_dict(),
            "purposes": [s.to_dict() for s in self.purposes],
            "data_subject_categories": [s.to_dict() for s in self.data_subject_categories],
            "personal_data_categories": [s.to_dict() for s in self.personal_data_categories],
            "recipient_categories": [s.to_dict() for s in self.recipient_categories],
            "security_measures": None if self.security_measures is None
            else self.security_measures.to_dict(),
            "processors": [p.to_dict() for p in self.processors],
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Article30Record":
        lst = lambda k: [Sourced.from_dict(s) for s in d[k]]  # noqa: E731
        opt = lambda k: None if d[k] is None else Sourced.from_dict(d[k])  # noqa: E731
        return cls(d["controller"], d["controller_name"], opt("contact"), lst("purposes"),
                   lst("data_subject_categories"), lst("personal_data_categories"),
                   lst("recipient_categories"), opt("security_measures"),
                   [ProcessorEntry.from_dict(p) for p in d["processors"]], list(d["warnings"]))

    @classmethod
    def from_json(cls, text: str) -> "Article30Record":
        return cls.from_dict(json.loads(text))

    def all_sources(self) -> dict[str, list[list[str]]]:
        """Source-id lists per field group (used for traceability checks)."""
        out = {g: [s.sources for s in getattr(self, g)] for g in FIELD_GROUPS[:-1]}
        out["security_measures"] = [] if self.security_measures is None \
            else [self.security_measures.sources]
        return out


def resolve_agent(source: ProvLog | Snapshot, ref: str) -> ProvNode:
    """Agent node by id or by ``name`` attr."""
    snap = as_snapshot(source)
    if ref in snap:
        node = snap.get_node(ref)
        if node.kind == Kind.AGENT:
            return node
    hits = snap.find(Kind.AGENT, name=ref)
    if not hits:
        raise UnknownId(f"no agent {ref!r}")
    return hits[0]


def _owner(snap: Snapshot, agent_id: str) -> ProvNode:
    node = snap.get_node(agent_id)
    org = node.attrs.get("org")
    if org:
        hits = snap.find(Kind.AGENT, name=org)
        if hits:
            return hits[0]
    return node


def export_art30(source: ProvLog | Snapshot, controller: str) -> Article30Record:
    snap = as_snapshot(source)
    ctrl = resolve_agent(snap, controller)
    cname = str(ctrl.attrs.get("name", ctrl.id))
    linked = sorted({e.src for e in snap.edges_in(ctrl.id) if e.rel in ACTOR_RELS},
                    key=lambda i: order_key(snap.get_node(i)))

    purposes, subjects, pd_cats, recipients = (_Collector() for _ in range(4))
    for nid in linked:
        node = snap.get_node(nid)
        if node.kind == Kind.ACTIVITY:
            purposes.add(node.attrs.get("purpose"), nid)
            continue
        subjects.add(node.attrs.get("data_subjects"), nid)
        pd_cats.add(node.attrs.get("pd_category"), nid)
        for flow in snap.flows_of(nid):
            dest = snap.get_node(flow.to_agent)
            owner = _owner(snap, flow.to_agent)
            label = dest.attrs.get("recipient_category")
            if label is None and owner.id != ctrl.id:
                label = owner.attrs.get("recipient_category", owner.attrs.get("name"))
            recipients.add(label, nid, flow.id, dest.id)

    contact = ctrl.attrs.get("contact")
    security = ctrl.attrs.get("security_measures")
    processors = []
    for proc in snap.find(Kind.AGENT, processor_for=cname):
        cats = _Collector()
        for e in snap.edges_in(proc.id):
            if e.rel == Rel.ASSOCIATED_WITH:
                act = snap.get_node(e.src)
                cats.add(act.attrs.get("processing_category", act.attrs.get("activity")), act.id)
        processors.append(ProcessorEntry(
            Sourced(str(proc.attrs.get("name", proc.id)), [proc.id]),
            None if "contact" not in proc.attrs else Sourced(str(proc.attrs["contact"]), [proc.id]),
            cats.items(),
            None if "security_measures" not in proc.attrs
            else Sourced(str(proc.attrs["security_measures"]), [proc.id]),
        ))

    record = Article30Record(
        controller=ctrl.id,
        controller_name=cname,
        contact=None if contact is None else Sourced(str(contact), [ctrl.id]),
        purposes=purposes.items(),
        data_subject_categories=subjects.items(),
        personal_data_categories=pd_cats.items(),
        recipient_categories=recipients.items(),
        security_measures=None if security is None else Sourced(str(security), [ctrl.id]),
        processors=processors,
    )
    if not linked:
        record.warnings.append("no activities or entities are linked to this controller")
    for group in FIELD_GROUPS:
        if not getattr(record, group):
            record.warnings.append(f"incomplete: {group} has no recorded values")
    return record


# -- datasheets and model cards -------------------------------------------------

@dataclass
class Datasheet:
    dataset: str
    collection_method: str
    preprocessing: list[str] = field(default_factory=list)
    legal_basis: str = ""
    known_biases: list[str] = field(default_factory=list)

    def to_attrs(self) -> dict[str, Any]:
        return {"category": "datasheet", "dataset": self.dataset,
                "collection_method": self.collection_method,
                "preprocessing": json.dumps(self.preprocessing),
                "legal_basis": self.legal_basis,
                "known_biases": json.dumps(self.known_biases)}

    @classmethod
    def from_node(cls, node: ProvNode) -> "Datasheet":
        a = node.attrs
        if a.get("category") != "datasheet":
            raise CategoryMismatch(f"{node.id} is not a datasheet")
        return cls(a["dataset"], a["collection_method"], json.loads(a["preprocessing"]),
                   a["legal_basis"], json.loads(a["known_biases"]))


@dataclass
class ModelCard:
    model: str
    intended_context: str
    version: int
    last_updated: datetime
    benchmarks: list[tuple[str, float]] = field(default_factory=list)
    required_accuracy: float | None = None

    def __post_init__(self):
        self.last_updated = to_utc(self.last_updated)
        self.benchmarks = [(str(c), float(a)) for c, a in self.benchmarks]
        for cond, acc in self.benchmarks:
            if not 0.0 <= acc <= 1.0:
                raise InvalidRecord(f"accuracy for {cond!r} outside [0, 1]: {acc}")
        if self.required_accuracy is not None and not 0.0 <= self.required_accuracy <= 1.0:
            raise InvalidRecord("required_accuracy outside [0, 1]")

    def accuracy(self, condition: str) -> float | None:
        for cond, acc in self.benchmarks:
            if cond == condition:
                return acc
        return None

    def below_requirement(self) -> list[str]:
        if self.required_accuracy is None:
            return []
        return [c for c, a in self.benchmarks if a < self.required_accuracy]

    def to_attrs(self) -> dict[str, Any]:
        attrs = {"category": "model_card", "model": self.model,
                 "intended_context": self.intended_context, "version": self.version,
                 "last_updated": format_ts(self.last_updated),
                 "benchmarks": json.dumps([[c, a] for c, a in self.benchmarks])}
        if self.required_accuracy is not None:
            attrs["required_accuracy"] = self.required_accuracy
        return attrs

    @classmethod
    def from_node(cls, node: ProvNode) -> "ModelCard":
        a = node.attrs
        if a.get("category") != "model_card":
            raise CategoryMismatch(f"{node.id} is not a model card")
        return cls(a["model"], a["intended_context"], int(a["version"]),
                   parse_ts(a["last_updated"]), [tuple(b) for b in json.loads(a["benchmarks"])],
                   a.get("required_accuracy"))


def _attach(log: ProvLog, target: str, expected: str, attrs: dict[str, Any],
            at: datetime | None, agent: str | None) -> str:
    snap = log.snapshot()
    node = snap.get_node(target)
    if node.kind != Kind.ENTITY or node.attrs.get("category") != expected:
        raise CategoryMismatch(
            f"{target} has category {node.attrs.get('category')!r}, expected {expected!r}")
    ts = to_utc(at) if at is not None else max(snap.last_timestamp(), node.timestamp)
    if ts < node.timestamp:
        ts = node.timestamp
    if agent is not None:
        attrs.setdefault("agent", str(snap.get_node(agent).attrs.get("name", agent)))
    nid = log.append(entity(ts, **attrs))
    log.append(ProvRelation(Rel.DERIVED_FROM, nid, target, ts))
    if agent is not None:
        log.append(ProvRelation(Rel.ATTRIBUTED_TO, nid, agent, ts))
    return nid


def attach_datasheet(log: ProvLog, dataset: str, sheet: Datasheet,
                     at: datetime | None = None, agent: str | None = None,
                     **extra: Any) -> str:
    if sheet.dataset != dataset:
        sheet = Datasheet(dataset, sheet.collection_method, sheet.preprocessing,
                          sheet.legal_basis, sheet.known_biases)
    return _attach(log, dataset, "dataset", {**extra, **sheet.to_attrs()}, at, agent)


def model_cards(source: ProvLog | Snapshot, model: str) -> list[tuple[str, ModelCard]]:
    """(node id, card) pairs attached to ``model``, by ascending version."""
    snap = as_snapshot(source)
    out = []
    for nid in snap.neighbors(model, "downstream", Rel.DERIVED_FROM):
        node = snap.get_node(nid)
        if node.attrs.get("category") == "model_card":
            out.append((nid, ModelCard.from_node(node)))
    return sorted(out, key=lambda p: p[1].version)


def attach_model_card(log: ProvLog, model: str, card: ModelCard,
                      at: datetime | None = None, agent: str | None = None,
                      **extra: Any) -> str:
    existing = model_cards(log, model) if model in log else []
    if existing and card.version <= existing[-1][1].version:
        raise VersionRegression(
            f"card version {card.version} is not newer than {existing[-1][1].version}")
    if card.model != model:
        card = ModelCard(model, card.intended_context, card.version, card.last_updated,
                         card.benchmarks, card.required_accuracy)
    return _attach(log, model, "model", {**extra, **card.to_attrs()}, at, agent)


# -- audit reports --------------------------------------------------------------

AUDIENCES = ("regulator", "developer", "user")
RENDER_LEVEL = {"regulator": "structured-legal", "developer": "technical-full",
                "user": "plain-summary"}
SUMMARY_ATTRS = ("name", "category")


@dataclass
class AuditReport:
    audience: str
    root: str
    records: list[str]
    metrics: dict[str, Any]
    sections: dict[str, Any]
    pipelines: dict[str, Pipeline] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {"audience": self.audience, "root": self.root, "records": list(self.records),
                "metrics": self.metrics, "sections": self.sections}

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def to_text(self) -> str:
        m = self.metrics
        out = [f"AUDIT REPORT ({self.audience}) for decision {self.root}", ""]
        out.append(f"relevant:       {m['relevant']['fraction']:.3f} "
                   f"({m['relevant']['included']}/{m['relevant']['candidates']} records)")
        acc = m["accurate"]
        out.append(f"accurate:       {acc['ok']} (chain ok {acc['chain_ok']}, "
                   f"{acc['complete']} resolved, {acc['missing']} missing)")
        out.append(f"proportionate:  {m['proportionate']['ratio']:.4f} of log "
                   f"(cap {m['proportionate']['cap']})")
        out.append(f"comprehensible: {m['comprehensible']['level']}")
        out.append("manual review:  " + "; ".join(m["checklist"]))
        for name in sorted(self.sections):
            out.append("")
            out.append(f"[{name}]")
            body = self.sections[name]
            if isinstance(body, list):
                for item in body:
                    out.append("  " + (canonical_json(item) if not isinstance(item, str) else item))
            else:
                out.append("  " + canonical_json(body))
        return "\n".join(out) + "\n"


def _compliance_decisions(snap: Snapshot, nodes: Iterable[str]) -> list[str]:
    found = set()
    for n in nodes:
        for e in snap.edges_in(n):
            if e.rel != Rel.USED:
                continue
            act = snap.get_node(e.src)
            if act.attrs.get("activity") == "compliance-decision":
                found.add(act.id)
    return sorted(found, key=lambda i: order_key(snap.get_node(i)))


def _node_detail(snap: Snapshot, nid: str) -> dict[str, Any]:
    n = snap.get_node(nid)
    return {"id": nid, "kind": n.kind.value, "timestamp": format_ts(n.timestamp),
            "attrs": dict(n.attrs)}


def render_report(log: ProvLog, root: str, audience: str,
                  proportionality_cap: float = 1.0) -> AuditReport:
    """Audience-filtered account of a decision with appropriateness metrics."""
    if audience not in AUDIENCES:
        raise ValueError(f"audience must be one of {AUDIENCES}, got {audience!r}")
    snap = log.snapshot()
    back, fwd = trace_back(snap, root), trace_forward(snap, root)
    pipes = (back, fwd)

    roles: dict[str, set[str]] = {}
    for p in pipes:
        for ar in actors_involved(p, snap):
            roles.setdefault(ar.agent, set()).update(ar.roles)
    actor_ids = sorted(roles, key=lambda i: order_key(snap.get_node(i)))
    crossings = []
    for p in pipes:
        for fid, b in boundary_crossings(p, snap):
            if fid not in [c["flow"] for c in crossings]:
                f = snap.get_flow(fid)
                crossings.append({"flow": fid, "boundary": b.value,
                                  "from": snap.get_node(f.from_agent).attrs.get("name", f.from_agent),
                                  "to": snap.get_node(f.to_agent).attrs.get("name", f.to_agent)})
    all_nodes = list(dict.fromkeys(back.nodes + fwd.nodes))
    edges = list(dict.fromkeys(back.edges + fwd.edges))
    flows = list(dict.fromkeys(back.flows + fwd.flows))
    decisions = _compliance_decisions(snap, all_nodes)

    developer = all_nodes + edges + flows + actor_ids
    user = actor_ids + [c["flow"] for c in crossings]
    regulator = developer + [d for d in decisions if d not in developer]
    candidates = regulator
    included = {"regulator": regulator, "developer": developer, "user": user}[audience]

    actor_table = [{"agent": a, "name": snap.get_node(a).attrs.get("name", a),
                    "roles": sorted(roles[a])} for a in actor_ids]
    categories = sorted({str(snap.get_node(n).attrs["category"]) for n in all_nodes
                         if "category" in snap.get_node(n).attrs})
    sections: dict[str, Any] = {"actors": actor_table, "boundary_crossings": crossings}
    if audience == "user":
        sections["categories"] = categories
    else:
        sections["pipelines"] = {"back": back.to_dict(), "forward": fwd.to_dict()}
        sections["nodes"] = [_node_detail(snap, n) for n in all_nodes]
    if audience == "regulator":
        sections["compliance_decisions"] = [_node_detail(snap, d) for d in decisions]
        extracts = []
        for a in actor_ids:
            if snap.get_node(a).attrs.get("role") == "controller":
                extracts.append(export_art30(snap, a).to_dict())
        sections["article30"] = extracts

    chain = log.verify()
    resolved = sum(1 for r in included if r in snap)
    ratio = len(included) / len(snap) if len(snap) else 0.0
    metrics = {
        "relevant": {"included": len(included), "candidates": len(candidates),
                     "fraction": len(included) / len(candidates) if candidates else 1.0},
        "accurate": {"ok": chain.ok and resolved == len(included), "chain_ok": chain.ok,
                     "first_bad_index": chain.first_bad_index,
                     "complete": resolved, "missing": len(included) - resolved},
        "proportionate": {"ratio": ratio, "cap": proportionality_cap,
                          "within_cap": ratio <= proportionality_cap},
        "comprehensible": {"level": RENDER_LEVEL[audience]},
        "checklist": ["representativeness of included records requires manual review"],
    }
    return AuditReport(audience, root, included, metrics, sections,
                       {"back": back, "forward": fwd})
