"""Provenance data model, hash-chained JSONL log and in-memory graph index.

Every record in the log is one JSON object per line::

    {"kind": "Entity", "id": "0000000003", "timestamp": "...", "attrs": {...},
     "prev_hash": "...", "hash": "..."}

``hash`` is the SHA-256 of the canonical serialization of the payload (all
fields except the two hashes) concatenated with ``prev_hash``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Union

from .errors import (
    DanglingReference,
    DuplicateId,
    IntegrityError,
    InvalidRecord,
    IoFailure,
    TemporalViolation,
    UnknownId,
)

GENESIS_HASH = "0" * 64
ID_WIDTH = 10

AttrValue = Union[str, int, float, bool]


class Kind(str, Enum):
    ENTITY = "Entity"
    ACTIVITY = "Activity"
    AGENT = "Agent"


class Rel(str, Enum):
    USED = "Used"
    GENERATED = "Generated"
    DERIVED_FROM = "DerivedFrom"
    ATTRIBUTED_TO = "AttributedTo"
    ASSOCIATED_WITH = "AssociatedWith"


class Boundary(str, Enum):
    NONE = "None"
    TECHNICAL = "Technical"
    ADMINISTRATIVE = "Administrative"


# Edges whose src is downstream of dst; they form the temporal DAG.
TRACE_RELS = frozenset({Rel.USED, Rel.GENERATED, Rel.DERIVED_FROM})
ACTOR_RELS = frozenset({Rel.ATTRIBUTED_TO, Rel.ASSOCIATED_WITH})

# rel -> (allowed src kinds, allowed dst kinds)
# Used may point at an Activity so that review activities can cite decisions.
REL_SIGNATURES: dict[Rel, tuple[frozenset, frozenset]] = {
    Rel.USED: (frozenset({Kind.ACTIVITY}), frozenset({Kind.ENTITY, Kind.ACTIVITY})),
    Rel.GENERATED: (frozenset({Kind.ENTITY}), frozenset({Kind.ACTIVITY})),
    Rel.DERIVED_FROM: (frozenset({Kind.ENTITY}), frozenset({Kind.ENTITY})),
    Rel.ATTRIBUTED_TO: (frozenset({Kind.ENTITY}), frozenset({Kind.AGENT})),
    Rel.ASSOCIATED_WITH: (frozenset({Kind.ACTIVITY}), frozenset({Kind.AGENT})),
}


# -- timestamps ---------------------------------------------------------------

def to_utc(ts: datetime) -> datetime:
    """Normalize to an aware UTC datetime truncated to milliseconds."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=(ts.microsecond // 1000) * 1000)


def format_ts(ts: datetime) -> str:
    ts = to_utc(ts)
    return ts.strftime("%Y-%m-%dT%H:%M:%S.") + f"{ts.microsecond // 1000:03d}Z"


def parse_ts(text: str) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except (TypeError, ValueError) as exc:
        raise InvalidRecord(f"bad timestamp {text!r}") from exc
    return to_utc(ts)


def make_id(seq: int) -> str:
    return f"{seq:0{ID_WIDTH}d}"


# -- payload types ------------------------------------------------------------

@dataclass(frozen=True, eq=True)
class ProvNode:
    kind: Kind
    timestamp: datetime
    attrs: Mapping[str, AttrValue] = field(default_factory=dict)
    id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "timestamp", to_utc(self.timestamp))
        object.__setattr__(self, "attrs", dict(self.attrs))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ProvRelation:
    rel: Rel
    src: str
    dst: str
    timestamp: datetime
    id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "rel", Rel(self.rel))
        object.__setattr__(self, "timestamp", to_utc(self.timestamp))


@dataclass(frozen=True)
class FlowEvent:
    entity: str
    from_agent: str
    to_agent: str
    boundary: Boundary
    timestamp: datetime
    id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        object.__setattr__(self, "timestamp", to_utc(self.timestamp))


Payload = Union[ProvNode, ProvRelation, FlowEvent]


def entity(timestamp: datetime, **attrs: AttrValue) -> ProvNode:
    return ProvNode(Kind.ENTITY, timestamp, attrs)


def activity(timestamp: datetime, **attrs: AttrValue) -> ProvNode:
    return ProvNode(Kind.ACTIVITY, timestamp, attrs)


def agent(timestamp: datetime, **attrs: AttrValue) -> ProvNode:
    return ProvNode(Kind.AGENT, timestamp, attrs)


def _check_attrs(attrs: Mapping[str, Any]) -> None:
    for key, value in attrs.items():
        if not isinstance(key, str) or not key:
            raise InvalidRecord(f"attr keys must be non-empty strings, got {key!r}")
        if not isinstance(value, (str, int, float, bool)):
            raise InvalidRecord(f"attr {key!r} has non-scalar value {value!r}")
        if isinstance(value, float) and not math.isfinite(value):
            raise InvalidRecord(f"attr {key!r} is not finite")


def payload_to_dict(payload: Payload) -> dict[str, Any]:
    if payload.id is None:
        raise InvalidRecord("payload has no id assigned")
    ts = format_ts(payload.timestamp)
    if isinstance(payload, ProvNode):
        return {"kind": payload.kind.value, "id": payload.id, "timestamp": ts,
                "attrs": dict(payload.attrs)}
    if isinstance(payload, ProvRelation):
        return {"kind": "Relation", "id": payload.id, "timestamp": ts,
                "rel": payload.rel.value, "src": payload.src, "dst": payload.dst}
    if isinstance(payload, FlowEvent):
        return {"kind": "Flow", "id": payload.id, "timestamp": ts, "entity": payload.entity,
                "from_agent": payload.from_agent, "to_agent": payload.to_agent,
                "boundary": payload.boundary.value}
    raise InvalidRecord(f"not a payload: {payload!r}")


_NODE_FIELDS = {"kind", "id", "timestamp", "attrs"}
_REL_FIELDS = {"kind", "id", "timestamp", "rel", "src", "dst"}
_FLOW_FIELDS = {"kind", "id", "timestamp", "entity", "from_agent", "to_agent", "boundary"}


def payload_from_dict(data: Mapping[str, Any]) -> Payload:
    try:
        kind = data["kind"]
        keys = set(data)
        ts = parse_ts(data["timestamp"])
        if kind == "Relation":
            if keys != _REL_FIELDS:
                raise InvalidRecord(f"relation fields {sorted(keys)}")
            return ProvRelation(Rel(data["rel"]), data["src"], data["dst"], ts, data["id"])
        if kind == "Flow":
            if keys != _FLOW_FIELDS:
                raise InvalidRecord(f"flow fields {sorted(keys)}")
            return FlowEvent(data["entity"], data["from_agent"], data["to_agent"],
                             Boundary(data["boundary"]), ts, data["id"])
        if keys != _NODE_FIELDS:
            raise InvalidRecord(f"node fields {sorted(keys)}")
        if not isinstance(data["attrs"], dict):
            raise InvalidRecord("attrs must be an object")
        return ProvNode(Kind(kind), ts, data["attrs"], data["id"])
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, InvalidRecord):
            raise
        raise InvalidRecord(f"malformed record: {exc}") from exc


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False)


def chain_hash(payload: Mapping[str, Any], prev_hash: str) -> str:
    data = (canonical_json(payload) + prev_hash).encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class LogRecord:
    payload: Payload
    prev_hash: str
    hash: str

    def to_dict(self) -> dict[str, Any]:
        d = payload_to_dict(self.payload)
        d["prev_hash"] = self.prev_hash
        d["hash"] = self.hash
        return d

    def to_line(self) -> str:
        return canonical_json(self.to_dict())


@dataclass
class VerificationReport:
    ok: bool
    first_bad_index: int | None = None
    length: int = 0
    reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "first_bad_index": self.first_bad_index,
                "length": self.length, "reason": self.reason}


# -- verification -------------------------------------------------------------

def _verify_lines(lines: list[bytes]) -> VerificationReport:
    prev = GENESIS_HASH
    for i, raw in enumerate(lines):
        try:
            text = raw.decode("utf-8")
            data = json.loads(text)
        except (UnicodeDecodeError, json.JSONDecodeError):
            return VerificationReport(False, i, len(lines), "unparseable record")
        if not isinstance(data, dict):
            return VerificationReport(False, i, len(lines), "record is not an object")
        try:
            if canonical_json(data) != text:
                return VerificationReport(False, i, len(lines), "non-canonical encoding")
        except ValueError:
            return VerificationReport(False, i, len(lines), "non-finite number")
        stored_prev, stored = data.pop("prev_hash", None), data.pop("hash", None)
        if stored_prev != prev:
            return VerificationReport(False, i, len(lines), "broken link to predecessor")
        if stored != chain_hash(data, prev):
            return VerificationReport(False, i, len(lines), "hash mismatch")
        prev = stored
    return VerificationReport(True, None, len(lines))


def _split_lines(blob: bytes) -> list[bytes]:
    if not blob:
        return []
    lines = blob.split(b"\n")
    if lines[-1] == b"":
        lines.pop()
    return lines


def verify_chain(source: "ProvLog | Snapshot | str | os.PathLike | bytes") -> VerificationReport:
    """Recompute every hash and link; report the earliest bad record."""
    if isinstance(source, Snapshot):
        source = source.log if source.length == len(source.log) else source.to_log()
    if isinstance(source, ProvLog):
        prev = GENESIS_HASH
        for i, rec in enumerate(source.records):
            if rec.prev_hash != prev:
                return VerificationReport(False, i, len(source), "broken link to predecessor")
            try:
                payload = payload_to_dict(rec.payload)
                ok = rec.hash == chain_hash(payload, prev)
            except (InvalidRecord, ValueError):
                ok = False
            if not ok:
                return VerificationReport(False, i, len(source), "hash mismatch")
            prev = rec.hash
        return VerificationReport(True, None, len(source))
    if isinstance(source, bytes):
        return _verify_lines(_split_lines(source))
    try:
        blob = Path(source).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return _verify_lines(_split_lines(blob))


# -- graph index --------------------------------------------------------------

def order_key(node: ProvNode) -> tuple[datetime, str]:
    return (node.timestamp, node.id or "")


class Snapshot:
    """Read-only view of a log at a fixed length.

    Index lists are append-only, so a snapshot just ignores anything with a
    sequence number at or past ``length``.
    """

    def __init__(self, log: "ProvLog", length: int):
        self.log = log
        self.length = length

    def __len__(self) -> int:
        return self.length

    def _visible(self, record_id: str) -> bool:
        seq = self.log._pos.get(record_id)
        return seq is not None and seq < self.length

    def __contains__(self, record_id: str) -> bool:
        return self._visible(record_id)

    @property
    def records(self) -> list[LogRecord]:
        return self.log.records[: self.length]

    def payload(self, record_id: str) -> Payload:
        if not self._visible(record_id):
            raise UnknownId(f"unknown id {record_id!r}")
        return self.log.records[self.log._pos[record_id]].payload

    def get_node(self, node_id: str) -> ProvNode:
        if not self._visible(node_id) or node_id not in self.log._nodes:
            raise UnknownId(f"unknown node {node_id!r}")
        return self.log._nodes[node_id]

    def get_relation(self, rel_id: str) -> ProvRelation:
        if not self._visible(rel_id) or rel_id not in self.log._relations:
            raise UnknownId(f"unknown relation {rel_id!r}")
        return self.log._relations[rel_id]

    def get_flow(self, flow_id: str) -> FlowEvent:
        if not self._visible(flow_id) or flow_id not in self.log._flows:
            raise UnknownId(f"unknown flow {flow_id!r}")
        return self.log._flows[flow_id]

    def nodes(self, kind: Kind | str | None = None) -> Iterator[ProvNode]:
        kind = Kind(kind) if kind is not None else None
        for rec in self.records:
            p = rec.payload
            if isinstance(p, ProvNode) and (kind is None or p.kind == kind):
                yield p

    def relations(self) -> Iterator[ProvRelation]:
        for rec in self.records:
            if isinstance(rec.payload, ProvRelation):
                yield rec.payload

    def flows(self) -> Iterator[FlowEvent]:
        for rec in self.records:
            if isinstance(rec.payload, FlowEvent):
                yield rec.payload

    def edges_out(self, node_id: str) -> list[ProvRelation]:
        return [r for r in self.log._out.get(node_id, ()) if self._visible(r.id)]

    def edges_in(self, node_id: str) -> list[ProvRelation]:
        return [r for r in self.log._in.get(node_id, ()) if self._visible(r.id)]

    def flows_of(self, entity_id: str) -> list[FlowEvent]:
        return [f for f in self.log._flows_by_entity.get(entity_id, ()) if self._visible(f.id)]

    def neighbors(self, node_id: str, direction: str = "upstream",
                  rels: Iterable[Rel | str] | Rel | str | None = None) -> list[str]:
        """Adjacent node ids ordered by (timestamp, id).

        ``upstream``/``out`` follows src->dst (towards inputs for trace edges and
        towards agents for attribution edges); ``downstream``/``in`` is the reverse.
        """
        self.get_node(node_id)
        if isinstance(rels, (Rel, str)):
            rels = [rels]
        wanted = None if rels is None else {Rel(r) for r in rels}
        if direction in ("upstream", "out"):
            found = {r.dst for r in self.edges_out(node_id) if wanted is None or r.rel in wanted}
        elif direction in ("downstream", "in"):
            found = {r.src for r in self.edges_in(node_id) if wanted is None or r.rel in wanted}
        else:
            raise ValueError(f"direction must be upstream or downstream, got {direction!r}")
        return sorted(found, key=lambda i: order_key(self.log._nodes[i]))

    def find(self, kind: Kind | str | None = None, **attrs: AttrValue) -> list[ProvNode]:
        """Nodes whose attrs contain every given key/value pair."""
        return [n for n in self.nodes(kind)
                if all(n.attrs.get(k) == v for k, v in attrs.items())]

    def find_one(self, kind: Kind | str | None = None, **attrs: AttrValue) -> ProvNode:
        hits = self.find(kind, **attrs)
        if len(hits) != 1:
            raise UnknownId(f"expected one node matching {attrs}, found {len(hits)}")
        return hits[0]

    def last_timestamp(self) -> datetime | None:
        if not self.length:
            return None
        return max(rec.payload.timestamp for rec in self.records)

    def to_log(self) -> "ProvLog":
        out = ProvLog()
        for rec in self.records:
            out._ingest(rec)
        return out


class ProvLog:
    """Append-only, hash-chained provenance log with a graph index.

    Single-writer: ``append`` serializes through a lock; readers should work on
    :meth:`snapshot` views.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[LogRecord] = []
        self._pos: dict[str, int] = {}
        self._nodes: dict[str, ProvNode] = {}
        self._relations: dict[str, ProvRelation] = {}
        self._flows: dict[str, FlowEvent] = {}
        self._out: dict[str, list[ProvRelation]] = {}
        self._in: dict[str, list[ProvRelation]] = {}
        self._flows_by_entity: dict[str, list[FlowEvent]] = {}
        self._counter = 0
        self._lock = threading.Lock()

    # reads delegate to a live snapshot
    def snapshot(self) -> Snapshot:
        return Snapshot(self, len(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[LogRecord]:
        return iter(list(self.records))

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._pos

    def __getattr__(self, name: str):
        # get_node, neighbors, find, ... resolve against the current snapshot
        if name.startswith("_") or not hasattr(Snapshot, name):
            raise AttributeError(name)
        return getattr(self.snapshot(), name)

    @property
    def head_hash(self) -> str:
        return self.records[-1].hash if self.records else GENESIS_HASH

    def verify(self) -> VerificationReport:
        return verify_chain(self)

    # -- writing

    def append(self, payload: Payload) -> str:
        """Validate, hash-chain and index one payload; return its id."""
        with self._lock:
            if payload.id is None:
                payload = replace(payload, id=make_id(self._counter))
            else:
                if payload.id in self._pos:
                    raise DuplicateId(f"id {payload.id!r} already in log")
                if self.records and payload.id <= self.records[-1].payload.id:
                    raise InvalidRecord(f"id {payload.id!r} does not sort after the last id")
            self._validate(payload)
            data = payload_to_dict(payload)
            prev = self.head_hash
            rec = LogRecord(payload, prev, chain_hash(data, prev))
            if self.path is not None:
                try:
                    with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                        fh.write(rec.to_line() + "\n")
                        fh.flush()
                except OSError as exc:
                    raise IoFailure(str(exc)) from exc
            self._ingest(rec)
            return payload.id

    def extend(self, payloads: Iterable[Payload]) -> list[str]:
        return [self.append(p) for p in payloads]

    def _validate(self, p: Payload) -> None:
        if not p.id:
            raise InvalidRecord("empty id")
        if isinstance(p, ProvNode):
            _check_attrs(p.attrs)
            return
        if isinstance(p, ProvRelation):
            for ref in (p.src, p.dst):
                if ref not in self._nodes:
                    raise DanglingReference(f"{p.rel.value} references unknown node {ref!r}")
            src, dst = self._nodes[p.src], self._nodes[p.dst]
            src_ok, dst_ok = REL_SIGNATURES[p.rel]
            if src.kind not in src_ok or dst.kind not in dst_ok:
                raise InvalidRecord(
                    f"{p.rel.value} cannot link {src.kind.value} -> {dst.kind.value}")
            if p.rel in TRACE_RELS and not order_key(src) > order_key(dst):
                raise TemporalViolation(
                    f"{p.rel.value} {p.src} ({format_ts(src.timestamp)}) is not after "
                    f"{p.dst} ({format_ts(dst.timestamp)})")
            return
        if isinstance(p, FlowEvent):
            ent = self._nodes.get(p.entity)
            if ent is None:
                raise DanglingReference(f"flow of unknown entity {p.entity!r}")
            if ent.kind != Kind.ENTITY:
                raise InvalidRecord(f"flow subject {p.entity!r} is not an Entity")
            for ref in (p.from_agent, p.to_agent):
                node = self._nodes.get(ref)
                if node is None:
                    raise DanglingReference(f"flow references unknown agent {ref!r}")
                if node.kind != Kind.AGENT:
                    raise InvalidRecord(f"flow endpoint {ref!r} is not an Agent")
            if p.boundary != Boundary.NONE and p.from_agent == p.to_agent:
                raise InvalidRecord("a boundary-crossing flow needs two distinct agents")
            if p.timestamp < ent.timestamp:
                raise TemporalViolation(f"flow {p.id} precedes its entity {p.entity}")
            return
        raise InvalidRecord(f"not a payload: {p!r}")

    def _ingest(self, rec: LogRecord) -> None:
        p = rec.payload
        self._pos[p.id] = len(self.records)
        self.records.append(rec)
        if isinstance(p, ProvNode):
            self._nodes[p.id] = p
        elif isinstance(p, ProvRelation):
            self._relations[p.id] = p
            self._out.setdefault(p.src, []).append(p)
            self._in.setdefault(p.dst, []).append(p)
        else:
            self._flows[p.id] = p
            self._flows_by_entity.setdefault(p.entity, []).append(p)
        if p.id.isdigit():
            self._counter = max(self._counter, int(p.id) + 1)
        else:
            self._counter += 1

    # -- files

    def to_jsonl(self) -> str:
        return "".join(rec.to_line() + "\n" for rec in self.records)

    def dump(self, path: str | os.PathLike) -> None:
        try:
            Path(path).write_text(self.to_jsonl(), encoding="utf-8", newline="\n")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    @classmethod
    def load(cls, path: str | os.PathLike, verify: bool = True,
             attach: bool = False) -> "ProvLog":
        """Rebuild the index from a JSONL file.

        With ``verify`` the chain must check out and every record must satisfy
        the append preconditions. Without it records are indexed as stored, so
        a tampered file can still be inspected (and will fail :meth:`verify`).
        ``attach`` makes later appends go to the same file.
        """
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        lines = _split_lines(blob)
        if verify:
            report = _verify_lines(lines)
            if not report.ok:
                raise IntegrityError(
                    f"{path}: record {report.first_bad_index}: {report.reason}")
        log = cls()
        for i, raw in enumerate(lines):
            try:
                data = json.loads(raw.decode("utf-8"))
                prev, digest = data.pop("prev_hash"), data.pop("hash")
                payload = payload_from_dict(data)
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise IntegrityError(f"{path}: record {i} unreadable: {exc}") from exc
            if verify:
                log._validate(payload)
            log._ingest(LogRecord(payload, prev, digest))
        if attach:
            log.path = Path(path)
        return log


def as_snapshot(source: "ProvLog | Snapshot") -> Snapshot:
    return source.snapshot() if isinstance(source, ProvLog) else source


def ms(n: int) -> timedelta:
    return timedelta(milliseconds=n)
