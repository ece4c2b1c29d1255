"""Deterministic discrete-event simulation of a smart-city data ecosystem.

Time is virtual (integer milliseconds from ``spec.start``); the event queue is
ordered by (time, priority, insertion order). Every random draw comes from a
generator keyed by (seed, component, emitter), so adding or removing a fault
on one component never perturbs the draws of another.

All records pass through the capture gate; when a rule set is supplied every
flow is checked by the compliance engine before the data is delivered.
"""

from __future__ import annotations

import heapq
import zlib
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Iterable

import numpy as np

from ..capture import CapturePolicy, Tagged, gate_append, personal
from ..compliance import Reaction, RuleSet, check_flow
from ..errors import InvalidSpec
from ..provlog import (
    Boundary,
    FlowEvent,
    Kind,
    ProvLog,
    ProvNode,
    ProvRelation,
    Rel,
    canonical_json,
    format_ts,
)
from ..records import ModelCard
from .spec import Dependency, FaultInjection, ScenarioSpec, format_duration, parse_duration

BLOCKING = (Reaction.BLOCK, Reaction.QUARANTINE, Reaction.FILTER_ENTITY)


@dataclass
class SimEvent:
    timestamp: str
    seq: int
    kind: str
    component: str
    detail: dict[str, Any] = field(default_factory=dict)
    records: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"timestamp": self.timestamp, "seq": self.seq, "kind": self.kind,
                "component": self.component, "detail": self.detail,
                "records": list(self.records)}


@dataclass
class EventTrace:
    events: list[SimEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def to_jsonl(self) -> str:
        return "".join(canonical_json(e.to_dict()) + "\n" for e in self.events)

    def of_kind(self, kind: str) -> list[SimEvent]:
        return [e for e in self.events if e.kind == kind]


@dataclass
class SimResult:
    log: ProvLog
    trace: EventTrace
    sentinels: list[str]
    spec: ScenarioSpec


Behavior = Callable[["Simulation", dict, dict, int], None]
BEHAVIORS: dict[str, Behavior] = {}


def behavior(name: str):
    def register(fn: Behavior) -> Behavior:
        BEHAVIORS[name] = fn
        return fn
    return register


def _schedule_times(sched: dict[str, Any], horizon: int) -> list[int]:
    if "at" in sched:
        times = [parse_duration(t) for t in sched["at"]]
    else:
        start = parse_duration(sched.get("start", 0))
        every = parse_duration(sched["every"])
        until = min(parse_duration(sched.get("until", horizon)), horizon)
        if every <= 0:
            raise InvalidSpec("schedule period must be positive")
        times = list(range(start, until + 1, every))
    return sorted(t for t in times if t < horizon)


class Simulation:
    def __init__(self, spec: ScenarioSpec, policy: CapturePolicy | None = None,
                 rules: RuleSet | None = None):
        spec.validate()
        self.spec = spec
        self.policy = policy or CapturePolicy()
        self.rules = rules
        self.log = ProvLog()
        self.trace = EventTrace()
        self.sentinels: list[str] = []
        self.agent_ids: dict[str, str] = {}
        self.org_of = {c["name"]: c["agent"] for c in spec.components}
        self.store: dict[tuple[str, str], list[tuple[int, str]]] = {}
        self.inbox: dict[tuple[str, str], list[tuple[int, str]]] = {}
        self.delivered: set[tuple[str, str]] = set()
        self.values: dict[str, dict[str, Any]] = {}
        self.cards: dict[tuple[str, int], ModelCard] = {}
        self.light: dict[str, float] = {}
        self._queue: list[tuple[int, int, int, Callable[[int], None]]] = []
        self._seq = 0
        self._trace_seq = 0
        self._now = 0

    # -- randomness and time

    def rng(self, *key: str) -> np.random.Generator:
        words = [zlib.crc32("/".join(key).encode())]
        return np.random.default_rng(np.random.SeedSequence(self.spec.seed, spawn_key=words))

    def ts(self, t: int) -> datetime:
        return self.spec.at(t)

    def series(self, name: str, t: int) -> float:
        pts = self.spec.series.get(name)
        if not pts:
            raise InvalidSpec(f"no series {name!r}")
        xs, ys = zip(*pts)
        return float(np.interp(t, xs, ys))

    def sentinel(self, label: str, comp: str) -> Tagged:
        value = f"PD-SENTINEL-{label}-{comp}-{len(self.sentinels):06d}"
        self.sentinels.append(value)
        return personal(value)

    def faults(self, kind: str, target: str) -> list[FaultInjection]:
        return [f for f in self.spec.faults if f.kind == kind and f.target == target]

    # -- recording

    def record(self, kind: str, comp: str, t: int, records: Iterable[str | None] = (),
               **detail: Any) -> None:
        self.trace.events.append(SimEvent(format_ts(self.ts(t)), self._trace_seq, kind, comp,
                                          detail, [r for r in records if r]))
        self._trace_seq += 1

    def _append(self, payload) -> str | None:
        return gate_append(self.policy, payload, self.log).appended

    def node(self, kind: Kind, t: int, comp: str, label: str, attrs: dict[str, Any],
             fault: str | None = None) -> str | None:
        org = self.org_of[comp]
        base: dict[str, Any] = {"name": f"{comp}.{label}@{format_duration(t)}",
                                "component": comp, "agent": org}
        if fault:
            base["fault"] = fault
        full = {**base, **attrs}
        nid = self._append(ProvNode(kind, self.ts(t), full))
        if nid is not None:
            self.values[nid] = full
            rel = Rel.ATTRIBUTED_TO if kind == Kind.ENTITY else Rel.ASSOCIATED_WITH
            self.relate(rel, nid, self.agent_ids[org], t)
        return nid

    def relate(self, rel: Rel, src: str | None, dst: str | None, t: int) -> str | None:
        if src is None or dst is None:
            return None
        return self._append(ProvRelation(rel, src, dst, self.ts(t)))

    def entity(self, t: int, comp: str, label: str, attrs: dict[str, Any],
               fault: str | None = None, derived_from: Iterable[str | None] = ()) -> str | None:
        nid = self.node(Kind.ENTITY, t, comp, label, attrs, fault)
        for src in derived_from:
            self.relate(Rel.DERIVED_FROM, nid, src, t)
        return nid

    def run_activity(self, t: int, comp: str, label: str, attrs: dict[str, Any],
                     used: Iterable[str | None],
                     outputs: Iterable[tuple[str, dict[str, Any]]] = (),
                     fault: str | None = None, outputs_only: bool = False
                     ) -> tuple[str | None, list[str | None]]:
        act = self.node(Kind.ACTIVITY, t, comp, label, {"activity": label, **attrs},
                        None if outputs_only else fault)
        for u in used:
            self.relate(Rel.USED, act, u, t)
        outs = []
        for out_label, out_attrs in outputs:
            oid = self.node(Kind.ENTITY, t, comp, out_label, out_attrs, fault)
            self.relate(Rel.GENERATED, oid, act, t)
            outs.append(oid)
        return act, outs

    # -- data movement

    def publish(self, comp: str, category: str, eid: str | None, t: int) -> None:
        if eid is None:
            return
        self.store.setdefault((comp, category), []).append((t, eid))
        for dep in self.spec.dependencies:
            if dep.producer == comp and dep.category == category and dep.mode == "push":
                self.deliver(dep, eid, t)

    def deliver(self, dep: Dependency, eid: str, t: int) -> bool:
        key = (dep.consumer, eid)
        if key in self.delivered:
            return True
        fid = self._append(FlowEvent(eid, self.agent_ids[dep.producer],
                                     self.agent_ids[dep.consumer], dep.boundary, self.ts(t)))
        reaction = Reaction.ALLOW
        if self.rules is not None and fid is not None:
            decision = check_flow(self.rules.rules, self.rules.whitelist, fid, self.ts(t),
                                  log=self.log, unreliable=self.rules.unreliable_agents)
            reaction = decision.reaction
        self.record("flow", dep.producer, t, [fid], to=dep.consumer, entity=eid,
                    category=dep.category, boundary=dep.boundary.value,
                    reaction=reaction.value)
        if reaction in BLOCKING:
            return False
        self.delivered.add(key)
        self.inbox.setdefault((dep.consumer, dep.category), []).append((t, eid))
        return True

    def gather(self, comp: str, category: str, t: int, k: int = 1) -> list[str]:
        """Latest ``k`` entities of a category visible to ``comp`` at time ``t``."""
        for dep in self.spec.dependencies:
            if dep.consumer == comp and dep.category == category and dep.mode == "pull":
                avail = [e for (te, e) in self.store.get((dep.producer, category), []) if te <= t]
                if avail:
                    self.deliver(dep, avail[-1], t)
        pool = self.inbox.get((comp, category), []) + self.store.get((comp, category), [])
        pool = sorted(p for p in pool if p[0] <= t)
        return [e for _, e in pool[-k:]] if k > 0 else []

    def attrs_of(self, eid: str | None) -> dict[str, Any]:
        # raw values as emitted, independent of what the capture policy kept
        return dict(self.values.get(eid, {})) if eid is not None else {}

    # -- scheduling

    def at(self, t: int, priority: int, action: Callable[[int], None]) -> None:
        heapq.heappush(self._queue, (t, priority, self._seq, action))
        self._seq += 1

    def _declare(self) -> None:
        for a in self.spec.agents:
            attrs = {"name": a["name"], **a.get("attrs", {})}
            aid = self._append(ProvNode(Kind.AGENT, self.ts(0), attrs))
            if aid is None:
                raise InvalidSpec(f"capture policy dropped agent {a['name']!r}")
            self.agent_ids[a["name"]] = aid
            self.record("declare-agent", a["name"], 0, [aid])
        for c in self.spec.components:
            attrs = {"name": c["name"], "org": c["agent"], "role": "component",
                     **c.get("attrs", {})}
            cid = self._append(ProvNode(Kind.AGENT, self.ts(0), attrs))
            if cid is None:
                raise InvalidSpec(f"capture policy dropped component {c['name']!r}")
            self.agent_ids[c["name"]] = cid
            if "area" in c.get("attrs", {}) and "light" in c.get("attrs", {}):
                self.light[c["attrs"]["area"]] = float(c["attrs"]["light"])
            self.record("declare-component", c["name"], 0, [cid])

    def _schedule(self) -> None:
        horizon = self.spec.horizon
        for comp in self.spec.components:
            for em in comp.get("emitters", []):
                fn = BEHAVIORS.get(em.get("behavior"))
                if fn is None:
                    raise InvalidSpec(f"unknown behavior {em.get('behavior')!r}")
                times = _schedule_times(em.get("schedule", {"at": []}), horizon)
                jitter = parse_duration(em.get("schedule", {}).get("jitter", 0))
                rng = self.rng("schedule", comp["name"], em.get("name", em["behavior"]))
                em = dict(em)
                em["_times"] = times
                for t in times:
                    if jitter:
                        t = min(t + int(rng.integers(0, jitter + 1)), horizon - 1)
                    self.at(t, int(em.get("priority", 50)),
                            lambda now, f=fn, c=comp, e=em: f(self, c, e, now))
        for f in self.spec.faults:
            if f.kind == "ServiceBadUpdate":
                self.at(f.window[0], 10, lambda now, f=f: _bad_release(self, f, now))
                if f.window[1] + 1 < horizon:
                    self.at(f.window[1] + 1, 10, lambda now, f=f: _rollback(self, f, now))

    def run(self) -> SimResult:
        self._declare()
        self._schedule()
        while self._queue:
            t, _, _, action = heapq.heappop(self._queue)
            self._now = t
            action(t)
        return SimResult(self.log, self.trace, self.sentinels, self.spec)

    # -- fault helpers

    def suppressed(self, kind: str, comp: str, t: int, process: str | None = None) -> bool:
        for f in self.faults(kind, comp):
            if process is not None and f.params.get("process") != process:
                continue
            if f.active(t):
                return True
        return False

    def last_before_fault(self, kind: str, comp: str, em: dict, t: int,
                          process: str | None = None) -> str | None:
        """Fault tag for the last run of an emitter before a suppression window."""
        for f in self.faults(kind, comp):
            if process is not None and f.params.get("process") != process:
                continue
            earlier = [x for x in em["_times"] if x < f.window[0]]
            if earlier and earlier[-1] == t:
                return kind
        return None


def run_scenario(spec: ScenarioSpec, policy: CapturePolicy | None = None,
                 rules: RuleSet | None = None) -> SimResult:
    """Run ``spec`` to its horizon and return the log and event trace."""
    return Simulation(spec, policy, rules).run()


# -- behaviors ----------------------------------------------------------------

def _common(em: dict) -> dict[str, Any]:
    return dict(em.get("attrs", {}))


@behavior("dataset")
def _dataset(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    category = em.get("category", "dataset")
    eid = sim.entity(t, name, em.get("label", category), {"category": category, **_common(em)})
    sim.publish(name, category, eid, t)
    sheet = em.get("datasheet")
    ids = [eid]
    if sheet and eid is not None:
        from ..records import Datasheet
        ds = Datasheet(eid, sheet["collection_method"], sheet.get("preprocessing", []),
                       sheet.get("legal_basis", ""), sheet.get("known_biases", []))
        sid = sim.entity(t, name, "datasheet", ds.to_attrs(), derived_from=[eid])
        ids.append(sid)
    sim.record("emit", name, t, ids, category=category)


@behavior("train")
def _train(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    inputs = []
    for spec in em.get("inputs", []):
        inputs += sim.gather(name, spec["category"], t, spec.get("k", 1))
    out = dict(em["output"])
    family, version = out["family"], int(out["version"])
    act, (model,) = sim.run_activity(
        t, name, em.get("label", "model-training"),
        {"purpose": em.get("purpose", "model training"), "processing_category": "model training"},
        inputs, [("model", {"category": "model", **out})])
    sim.publish(name, "model", model, t)
    ids = [act, model]
    card_spec = em.get("card")
    if card_spec and model is not None:
        card = ModelCard(model, card_spec["intended_context"], version, sim.ts(t),
                         [tuple(b) for b in card_spec["benchmarks"]],
                         card_spec.get("required_accuracy"))
        sim.cards[(family, version)] = card
        cid = sim.entity(t, name, "model-card", {**card.to_attrs(), "family": family},
                         derived_from=[model])
        sim.publish(name, "model_card", cid, t)
        ids.append(cid)
    sim.record("train", name, t, ids, family=family, version=version)


@behavior("model_update")
def _model_update(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    if sim.suppressed("ModelStale", name, t):
        sim.record("suppressed", name, t, [], fault="ModelStale", emitter=em.get("name"))
        return
    fault = sim.last_before_fault("ModelStale", name, em, t)
    model = (sim.gather(name, "model", t) or [None])[0]
    card = (sim.gather(name, "model_card", t) or [None])[0]
    src = sim.attrs_of(model)
    local_attrs = {"category": "model", "deployment": "local",
                   "family": src.get("family", ""), "version": src.get("version", 0)}
    act, (local,) = sim.run_activity(
        t, name, "model-update",
        {"mode": em.get("mode", "auto"), "performed_by": em.get("performed_by", "system"),
         "purpose": em.get("purpose", "vehicle software maintenance")},
        [model, card], [("local-model", local_attrs)], fault)
    sim.relate(Rel.DERIVED_FROM, local, model, t)
    sim.publish(name, "local_model", local, t)
    sim.record("model-update", name, t, [act, local], mode=em.get("mode", "auto"),
               version=local_attrs["version"])


@behavior("telemetry")
def _telemetry(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    rng = sim.rng("values", name, em.get("name", "telemetry"))
    category = em["category"]
    val = em.get("value", {})
    reading = float(val.get("constant", 0.0))
    if "series" in val:
        reading = sim.series(val["series"], t) * float(val.get("scale", 1.0))
    reading += float(rng.normal(0.0, float(val.get("noise", 0.0))))
    fault = None
    for f in sim.faults("SensorBias", name):
        if f.active(t):
            reading += float(f.params.get("offset", 0.0))
            fault = "SensorBias"
    attrs: dict[str, Any] = {"category": category, "reading": round(reading, 4),
                             "area": comp.get("attrs", {}).get("area", ""), **_common(em)}
    pd = em.get("personal")
    if pd:
        attrs[pd.get("attr", "location")] = sim.sentinel(pd.get("attr", "location"), name)
        attrs["pd"] = True
    eid = sim.entity(t, name, category, attrs, fault)
    sim.publish(name, category, eid, t)
    sim.record("emit", name, t, [eid], category=category)


@behavior("aggregate")
def _aggregate(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    inputs = sim.gather(name, em["input"], t, int(em.get("k", 5)))
    readings = [float(sim.attrs_of(i).get("reading", 0.0)) for i in inputs]
    release = (sim.gather(name, "software_release", t) or [None])[0] \
        if em.get("uses_release") else None
    value = float(np.mean(readings)) if readings else 0.0
    value = min(1.0, max(0.0, value * float(em.get("scale", 1.0))))
    out = {"category": em["output"], "density": round(value, 4), "area": em.get("area", ""),
           "samples": len(readings)}
    if release is not None and sim.attrs_of(release).get("regression") is True:
        out.update(density=0.0, corrupted=True)
    act, (oid,) = sim.run_activity(
        t, name, em.get("label", "aggregation"),
        {"purpose": em.get("purpose", "aggregation"), "area": em.get("area", "")},
        inputs + ([release] if release else []), [(em["output"], out)])
    sim.publish(name, em["output"], oid, t)
    sim.record("aggregate", name, t, [act, oid], density=out["density"])


def _release_entity(sim: Simulation, comp: str, t: int, attrs: dict[str, Any],
                    fault: str | None = None) -> str | None:
    eid = sim.entity(t, comp, "release", {"category": "software_release", **attrs}, fault)
    sim.publish(comp, "software_release", eid, t)
    return eid


@behavior("release")
def _release(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    eid = _release_entity(sim, comp["name"], t,
                          {"version": str(em.get("version", "1")), "regression": False})
    sim.record("release", comp["name"], t, [eid], version=str(em.get("version", "1")))


def _bad_release(sim: Simulation, fault: FaultInjection, t: int) -> None:
    eid = _release_entity(sim, fault.target, t,
                          {"version": str(fault.params.get("version", "bad-update")),
                           "regression": True, "rolled_back": True}, "ServiceBadUpdate")
    sim.record("fault", fault.target, t, [eid], fault="ServiceBadUpdate")


def _rollback(sim: Simulation, fault: FaultInjection, t: int) -> None:
    eid = _release_entity(sim, fault.target, t,
                          {"version": str(fault.params.get("rollback_version", "rollback")),
                           "regression": False})
    sim.record("release", fault.target, t, [eid], rollback=True)


@behavior("dimming")
def _dimming(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    report = (sim.gather(name, "congestion_report", t) or [None])[0]
    density = float(sim.attrs_of(report).get("density", 1.0))
    dim = density < float(em.get("threshold", 0.25))
    level = float(em.get("dim_level", 0.2)) if dim else float(em.get("normal_level", 1.0))
    area = em.get("area", "")
    act, (oid,) = sim.run_activity(
        t, name, "dimming-decision",
        {"purpose": em.get("purpose", "street lighting management"), "area": area,
         "decision": "dim" if dim else "normal"},
        [report], [("lighting-level", {"category": "lighting_level", "brightness": level,
                                       "area": area})])
    sim.light[area] = level
    sim.publish(name, "lighting_level", oid, t)
    sim.record("decision", name, t, [act, oid], decision="dim" if dim else "normal")


@behavior("event_adjustment")
def _event_adjustment(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    process = em.get("process", "event-adjustment")
    if sim.suppressed("ProcessSkipped", name, t, process):
        sim.record("suppressed", name, t, [], fault="ProcessSkipped", process=process)
        return
    fault = sim.last_before_fault("ProcessSkipped", name, em, t, process)
    lookahead = parse_duration(em.get("lookahead", "14d"))
    known = [e for e in sim.spec.events
             if parse_duration(e.get("announced", 0)) <= t <= parse_duration(e["at"])
             <= t + lookahead]
    cadence = parse_duration(em.get("cadence", "7d"))
    act, (oid,) = sim.run_activity(
        t, name, process,
        {"process": process, "purpose": em.get("purpose", "demand forecasting")}, [],
        [("historic-adjustment", {
            "category": "historic_adjustment",
            "events": ";".join(f"{e['name']}|{e['area']}|{e['at']}" for e in known),
            "cadence_s": cadence // 1000})], fault, outputs_only=True)
    sim.publish(name, "historic_adjustment", oid, t)
    sim.record("process", name, t, [act, oid], process=process, events=len(known))


@behavior("historic_summary")
def _historic_summary(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    records = (sim.gather(name, em.get("records_category", "callout_records"), t) or [None])[0]
    adjustment = (sim.gather(name, "historic_adjustment", t) or [None])[0]
    area = em.get("area", "")
    score = float(em.get("base_score", 0.1))
    span = parse_duration(em.get("horizon", "1d"))
    for item in filter(None, str(sim.attrs_of(adjustment).get("events", "")).split(";")):
        ev_name, ev_area, ev_at = item.split("|")
        if ev_area == area and t <= parse_duration(ev_at) <= t + span:
            score = max(score, float(em.get("event_score", 0.9)))
    act, (oid,) = sim.run_activity(
        t, name, "historic-summary",
        {"purpose": em.get("purpose", "incident forecasting"), "area": area},
        [records, adjustment],
        [("historic-summary", {"category": "historic_summary", "hotspot_score": score,
                               "area": area})])
    sim.publish(name, "historic_summary", oid, t)
    sim.record("summary", name, t, [act, oid], hotspot=score)


@behavior("risk_classification")
def _risk(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    area = em.get("area", "")
    weights = em.get("weights", {"congestion_report": 0.4, "density_report": 0.2,
                                 "historic_summary": 0.4})
    fields = {"congestion_report": "density", "density_report": "density",
              "historic_summary": "hotspot_score"}
    used, score = [], 0.0
    for category, w in weights.items():
        got = (sim.gather(name, category, t) or [None])[0]
        if got is not None:
            used.append(got)
            score += float(w) * float(sim.attrs_of(got).get(fields.get(category, "value"), 0.0))
    low = score < float(em.get("threshold", 0.35))
    decision = "redirect-ambulances" if low else "keep-ambulances"
    act, (oid,) = sim.run_activity(
        t, name, "risk-classification",
        {"purpose": em.get("purpose", "vehicle distribution"), "area": area,
         "decision": decision, "risk": "low" if low else "high"},
        used, [("dispatch-plan", {"category": "dispatch_plan", "risk": "low" if low else "high",
                                  "redirect": low, "score": round(score, 4), "area": area})])
    sim.publish(name, "dispatch_plan", oid, t)
    sim.record("decision", name, t, [act, oid], decision=decision, score=round(score, 4))


def _light_condition(sim: Simulation, area: str, rng: np.random.Generator,
                     noise: float = 0.02) -> tuple[float, str]:
    brightness = max(0.0, sim.light.get(area, 1.0) * 0.8 + float(rng.normal(0.0, noise)))
    return round(brightness, 4), ("low-light" if brightness < 0.35 else "street-lit")


def _detects(sim: Simulation, family: str, version: int, condition: str,
             threshold: float) -> bool:
    card = sim.cards.get((family, int(version)))
    if card is None:
        return False
    acc = card.accuracy(condition)
    return acc is not None and acc >= threshold


@behavior("hazard_share")
def _hazard_share(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    cattrs = comp.get("attrs", {})
    area = cattrs.get("area", "")
    _, condition = _light_condition(sim, area, sim.rng("light", name))
    seen = _detects(sim, cattrs.get("model_family", ""), cattrs.get("model_version", 0),
                    condition, float(em.get("detection_threshold", 0.8)))
    eid = sim.entity(t, name, "hazard-report",
                     {"category": "hazard_report", "hazard_detected": seen, "area": area,
                      "light_condition": condition})
    sim.publish(name, "hazard_report", eid, t)
    sim.record("emit", name, t, [eid], category="hazard_report", hazard_detected=seen)


@behavior("drive")
def _drive(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    area = comp.get("attrs", {}).get("area", "")
    brightness, condition = _light_condition(sim, area, sim.rng("light", name))
    frame = sim.entity(t, name, "camera-frame", {
        "category": "camera_frame", "brightness": brightness, "light_condition": condition,
        "camera_frame": sim.sentinel("camera_frame", name), "pd": True,
        "pd_category": em.get("pd_category", "camera footage"),
        "data_subjects": em.get("data_subjects", "pedestrians; drivers"), "area": area})
    local = (sim.gather(name, "local_model", t) or [None])[0]
    model = sim.attrs_of(local)
    threshold = float(em.get("detection_threshold", 0.8))
    seen = _detects(sim, str(model.get("family", "")), int(model.get("version", 0)),
                    condition, threshold)
    det_act, (det,) = sim.run_activity(
        t, name, "object-detection",
        {"purpose": "driver assistance", "light_condition": condition},
        [frame, local], [("detection", {"category": "detection", "pedestrian_detected": seen,
                                        "red_light_detected": seen, "area": area})])
    shared = sim.gather(name, "hazard_report", t, int(em.get("k_reports", 4)))
    hazard = seen or any(sim.attrs_of(h).get("hazard_detected") for h in shared)
    decision = "brake" if hazard else "no-brake"
    act, (ctl,) = sim.run_activity(
        t, name, "hazard-response",
        {"purpose": "driver assistance", "decision": decision, "area": area,
         "shared_reports": len(shared)},
        [det] + shared, [("control", {"category": "vehicle_control", "action": decision})])
    sim.record("decision", name, t, [frame, det_act, det, act, ctl], decision=decision,
               shared_reports=len(shared))


@behavior("incident_call")
def _incident_call(sim: Simulation, comp: dict, em: dict, t: int) -> None:
    name = comp["name"]
    inc = sim.spec.incident
    report = sim.entity(t, name, "incident-report", {
        "category": "incident_report", "area": inc.get("area", ""),
        "vehicle": inc.get("vehicle", ""), "caller_number": sim.sentinel("caller", name),
        "pd": True, "pd_category": em.get("pd_category", "caller contact details"),
        "data_subjects": em.get("data_subjects", "callers; patients")})
    plan = (sim.gather(name, "dispatch_plan", t) or [None])[0]
    redirected = bool(sim.attrs_of(plan).get("redirect", False))
    eta = parse_duration(em.get("delayed_eta" if redirected else "normal_eta", "7m")) // 1000
    act, (oid,) = sim.run_activity(
        t, name, "ambulance-dispatch",
        {"purpose": em.get("purpose", "emergency response"), "area": inc.get("area", "")},
        [report, plan], [("dispatch", {"category": "dispatch", "eta_s": eta,
                                       "area": inc.get("area", "")})])
    sim.publish(name, "incident_report", report, t)
    sim.publish(name, "dispatch", oid, t)
    sim.record("incident", name, t, [report, act, oid], eta_s=eta)
