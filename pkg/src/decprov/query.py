"""Decision pipelines: backward and forward traces over the provenance graph."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Iterable, Sequence

from .errors import BadWindow
from .provlog import (
    ACTOR_RELS,
    TRACE_RELS,
    Boundary,
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

Window = tuple[datetime, datetime]


class Direction(str, Enum):
    BACKWARD = "back"
    FORWARD = "forward"


ROLE_SOURCE = "attributed-source"
ROLE_PROCESSOR = "processor"
ROLE_RECIPIENT = "recipient"


def check_window(window: Window | str | None) -> Window | None:
    if window is None:
        return None
    if isinstance(window, str):
        return parse_window(window)
    start, end = (to_utc(w) for w in window)
    if start > end:
        raise BadWindow(f"window starts after it ends: {format_ts(start)} > {format_ts(end)}")
    return start, end


def parse_window(text: str) -> Window:
    """Parse ``start..end`` (RFC 3339 instants)."""
    parts = text.split("..")
    if len(parts) != 2:
        raise BadWindow(f"window must look like start..end, got {text!r}")
    try:
        start, end = parse_ts(parts[0]), parse_ts(parts[1])
    except Exception as exc:
        raise BadWindow(str(exc)) from exc
    return check_window((start, end))


@dataclass
class Pipeline:
    root: str
    direction: Direction
    nodes: list[str]
    edges: list[str]
    flows: list[str]
    actors: list[str]
    window: Window | None = None
    depth: dict[str, int] = field(default_factory=dict)
    source: Snapshot | None = field(default=None, repr=False, compare=False)

    def immediate(self) -> list[str]:
        """Nodes one hop from the root (direct inputs or direct consumers)."""
        return [n for n in self.nodes if self.depth.get(n) == 1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "root": self.root,
            "direction": self.direction.value,
            "nodes": list(self.nodes),
            "edges": list(self.edges),
            "flows": list(self.flows),
            "actors": list(self.actors),
            "window": None if self.window is None else [format_ts(w) for w in self.window],
            "depth": dict(self.depth),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Pipeline":
        window = d.get("window")
        return cls(d["root"], Direction(d["direction"]), list(d["nodes"]), list(d["edges"]),
                   list(d["flows"]), list(d["actors"]),
                   None if window is None else (parse_ts(window[0]), parse_ts(window[1])),
                   {k: int(v) for k, v in d.get("depth", {}).items()})


def _in_window(ts: datetime, window: Window | None) -> bool:
    return window is None or window[0] <= ts <= window[1]


def _trace(source: ProvLog | Snapshot, root: str, direction: Direction,
           window: Window | str | None, max_depth: int | None) -> Pipeline:
    snap = as_snapshot(source)
    snap.get_node(root)
    window = check_window(window)
    if max_depth is not None and max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    backward = direction == Direction.BACKWARD

    depth = {root: 0}
    queue = deque([root])
    while queue:
        cur = queue.popleft()
        if max_depth is not None and depth[cur] >= max_depth:
            continue
        if backward:
            nxt = (e.dst for e in snap.edges_out(cur) if e.rel in TRACE_RELS)
        else:
            nxt = (e.src for e in snap.edges_in(cur) if e.rel in TRACE_RELS)
        for n in nxt:
            if n in depth or not _in_window(snap.get_node(n).timestamp, window):
                continue
            depth[n] = depth[cur] + 1
            queue.append(n)

    nodes = sorted(depth, key=lambda i: order_key(snap.get_node(i)))
    members = set(nodes)
    edges, actors, flows = [], set(), []
    for n in nodes:
        for e in snap.edges_out(n):
            if e.rel in TRACE_RELS and e.dst in members:
                edges.append(e)
            elif e.rel in ACTOR_RELS:
                actors.add(e.dst)
        if snap.get_node(n).kind == Kind.ENTITY:
            flows.extend(f for f in snap.flows_of(n) if _in_window(f.timestamp, window))
    edges.sort(key=lambda e: (e.timestamp, e.id))
    flows.sort(key=lambda f: (f.timestamp, f.id))
    return Pipeline(
        root=root,
        direction=direction,
        nodes=nodes,
        edges=[e.id for e in edges],
        flows=[f.id for f in flows],
        actors=sorted(actors, key=lambda i: order_key(snap.get_node(i))),
        window=window,
        depth={n: depth[n] for n in nodes},
        source=snap,
    )


def trace_back(source: ProvLog | Snapshot, root: str, window: Window | str | None = None,
               max_depth: int | None = None) -> Pipeline:
    """Everything the root was derived from, plus the flows that delivered it."""
    return _trace(source, root, Direction.BACKWARD, window, max_depth)


def trace_forward(source: ProvLog | Snapshot, root: str, window: Window | str | None = None,
                  max_depth: int | None = None) -> Pipeline:
    """Everything that (transitively) consumed the root."""
    return _trace(source, root, Direction.FORWARD, window, max_depth)


def trace(source: ProvLog | Snapshot, root: str, direction: Direction | str,
          window: Window | str | None = None, max_depth: int | None = None) -> Pipeline:
    return _trace(source, root, Direction(direction), window, max_depth)


@dataclass(frozen=True)
class ActorRole:
    agent: str
    roles: frozenset[str]

    def to_dict(self, snap: Snapshot | None = None) -> dict[str, Any]:
        d: dict[str, Any] = {"agent": self.agent, "roles": sorted(self.roles)}
        if snap is not None:
            d["name"] = snap.get_node(self.agent).attrs.get("name")
        return d


def _owns(owner: ProvNode, component: ProvNode) -> bool:
    name = owner.attrs.get("name")
    return owner.id == component.id or (name is not None and component.attrs.get("org") == name)


def actors_involved(pipeline: Pipeline,
                    source: ProvLog | Snapshot | None = None) -> list[ActorRole]:
    """Agents attributed to or associated with pipeline nodes, with their roles.

    An agent is also a ``recipient`` when a pipeline flow was delivered to it or
    to one of its components (agents whose ``org`` attr names it).
    """
    snap = as_snapshot(source) if source is not None else pipeline.source
    if snap is None:
        raise ValueError("pipeline has no source log; pass one explicitly")
    roles: dict[str, set[str]] = {}
    for n in pipeline.nodes:
        for e in snap.edges_out(n):
            if e.rel == Rel.ATTRIBUTED_TO:
                roles.setdefault(e.dst, set()).add(ROLE_SOURCE)
            elif e.rel == Rel.ASSOCIATED_WITH:
                roles.setdefault(e.dst, set()).add(ROLE_PROCESSOR)
    receivers = [snap.get_node(snap.get_flow(f).to_agent) for f in pipeline.flows]
    for agent_id, agent_roles in roles.items():
        owner = snap.get_node(agent_id)
        if any(_owns(owner, r) for r in receivers):
            agent_roles.add(ROLE_RECIPIENT)
    ordered = sorted(roles, key=lambda i: order_key(snap.get_node(i)))
    return [ActorRole(a, frozenset(roles[a])) for a in ordered]


def boundary_crossings(pipeline: Pipeline,
                       source: ProvLog | Snapshot | None = None) -> list[tuple[str, Boundary]]:
    snap = as_snapshot(source) if source is not None else pipeline.source
    if snap is None:
        raise ValueError("pipeline has no source log; pass one explicitly")
    flows = [snap.get_flow(f) for f in pipeline.flows]
    flows = [f for f in flows if f.boundary != Boundary.NONE]
    flows.sort(key=lambda f: (f.timestamp, f.id))
    return [(f.id, f.boundary) for f in flows]


def record_investigation(log: ProvLog, description: str,
                         pipelines: Pipeline | Sequence[Pipeline],
                         at: datetime | None = None, **attrs) -> str:
    """Log a review as an Activity that used each pipeline root.

    The timestamp defaults to the latest instant in the log, so re-running the
    same investigation on the same log is reproducible.
    """
    if isinstance(pipelines, Pipeline):
        pipelines = [pipelines]
    snap = log.snapshot()
    roots: list[str] = []
    for p in pipelines:
        snap.get_node(p.root)
        if p.root not in roots:
            roots.append(p.root)
    if at is None:
        latest = snap.last_timestamp()
        at = max([latest] + [snap.get_node(r).timestamp for r in roots])
    act = log.append(activity(at, activity="investigation", query=description,
                              roots=",".join(roots), **attrs))
    for r in roots:
        log.append(ProvRelation(Rel.USED, act, r, at))
    return act


# -- DOT ----------------------------------------------------------------------

_SHAPES = {Kind.ENTITY: "ellipse", Kind.ACTIVITY: "box", Kind.AGENT: "house"}
_BOUNDARY_STYLE = {Boundary.NONE: "dotted", Boundary.TECHNICAL: "dashed",
                   Boundary.ADMINISTRATIVE: "bold"}


def _label(node: ProvNode) -> str:
    text = node.attrs.get("name") or node.attrs.get("label") or node.attrs.get("activity") \
        or node.attrs.get("category") or node.kind.value
    return f"{text}\n{node.id}"


def _q(text: str) -> str:
    text = str(text).replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return '"' + text + '"'


def to_dot(pipeline: Pipeline | Iterable[Pipeline], source: ProvLog | Snapshot | None = None,
           name: str = "pipeline") -> str:
    """Graphviz rendering: trace edges solid, attribution dashed, flows as labelled loops."""
    pipelines = [pipeline] if isinstance(pipeline, Pipeline) else list(pipeline)
    snap = as_snapshot(source) if source is not None else pipelines[0].source
    if snap is None:
        raise ValueError("pipeline has no source log; pass one explicitly")
    nodes: list[str] = []
    edges: list[str] = []
    flows: list[str] = []
    for p in pipelines:
        nodes += [n for n in p.nodes + p.actors if n not in nodes]
        edges += [e for e in p.edges if e not in edges]
        flows += [f for f in p.flows if f not in flows]
        for n in p.nodes:
            for e in snap.edges_out(n):
                if e.rel in ACTOR_RELS and e.id not in edges:
                    edges.append(e.id)
    roots = {p.root for p in pipelines}
    lines = [f"digraph {_q(name)} {{", "  rankdir=RL;"]
    for n in sorted(nodes, key=lambda i: order_key(snap.get_node(i))):
        node = snap.get_node(n)
        extra = ", penwidth=2" if n in roots else ""
        lines.append(f"  {_q(n)} [label={_q(_label(node))}, shape={_SHAPES[node.kind]}{extra}];")
    for e in edges:
        rel = snap.get_relation(e)
        style = "dashed" if rel.rel in ACTOR_RELS else "solid"
        lines.append(f"  {_q(rel.src)} -> {_q(rel.dst)} [label={_q(rel.rel.value)}, style={style}];")
    for f in flows:
        flow = snap.get_flow(f)
        label = f"flow {_agent_name(snap, flow.from_agent)} to {_agent_name(snap, flow.to_agent)}"
        lines.append(f"  {_q(flow.entity)} -> {_q(flow.entity)} "
                     f"[label={_q(label)}, style={_BOUNDARY_STYLE[flow.boundary]}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _agent_name(snap: Snapshot, agent_id: str) -> str:
    return str(snap.get_node(agent_id).attrs.get("name", agent_id))


def pipeline_json(pipeline: Pipeline) -> str:
    return json.dumps(pipeline.to_dict(), sort_keys=True, indent=2)
