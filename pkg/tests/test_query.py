import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import at, random_dag
from oracles import closure
from decprov.errors import BadWindow, UnknownId
from decprov.provlog import (
    Boundary, FlowEvent, Kind, ProvLog, ProvRelation, Rel, activity, agent, entity, format_ts,
)
from decprov.query import (
    Direction,
    Pipeline,
    actors_involved,
    boundary_crossings,
    parse_window,
    record_investigation,
    to_dot,
    trace,
    trace_back,
    trace_forward,
)
from decprov.sim.home_chain import home_chain_log


def test_root_without_edges():
    log = ProvLog()
    g = log.append(agent(at(0), name="Org"))
    e = log.append(entity(at(1)))
    log.append(ProvRelation(Rel.ATTRIBUTED_TO, e, g, at(1)))
    p = trace_back(log, e)
    assert p.nodes == [e] and p.actors == [g]
    assert trace_forward(log, e).nodes == [e]


def test_unattributed_singleton_has_no_actors():
    log = ProvLog()
    e = log.append(entity(at(0)))
    assert actors_involved(trace_back(log, e)) == []
    assert boundary_crossings(trace_back(log, e)) == []


def test_errors():
    log = ProvLog()
    e = log.append(entity(at(0)))
    with pytest.raises(UnknownId):
        trace_back(log, "0000000099")
    with pytest.raises(BadWindow):
        trace_back(log, e, (at(5), at(1)))
    with pytest.raises(BadWindow):
        parse_window("2024-01-01T00:00:00Z")


def test_max_depth_limits_hops():
    log = ProvLog()
    chain = [log.append(entity(at(i))) for i in range(5)]
    for a, b in zip(chain[1:], chain):
        log.append(ProvRelation(Rel.DERIVED_FROM, a, b, at(0)))
    assert trace_back(log, chain[-1], max_depth=2).nodes == chain[2:]
    assert trace_back(log, chain[-1]).depth[chain[0]] == 4


def _reach_oracle(n, edges, ids, ts, root, window):
    keep = [i for i in range(n) if i == root or window is None or window[0] <= ts[i] <= window[1]]
    idx = {v: k for k, v in enumerate(keep)}
    sub = [(idx[s], idx[d]) for s, d in edges if s in idx and d in idx]
    r = closure(len(keep), sub)
    back = {ids[keep[j]] for j in range(len(keep)) if r[idx[root], j]}
    fwd = {ids[keep[j]] for j in range(len(keep)) if r[j, idx[root]]}
    return back, fwd


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 50), st.floats(0.0, 0.25), st.booleans())
def test_traces_equal_transitive_closure(seed, n, p, windowed):
    rng = np.random.default_rng(seed)
    log, ids, edges = random_dag(rng, n, p)
    snap = log.snapshot()
    ts = [snap.get_node(i).timestamp for i in ids]
    window = None
    if windowed:
        a, b = sorted(rng.integers(0, n, size=2))
        window = (ts[a], ts[b])
    for root in range(n):
        back, fwd = _reach_oracle(n, edges, ids, ts, root, window)
        assert set(trace_back(snap, ids[root], window).nodes) == back
        assert set(trace_forward(snap, ids[root], window).nodes) == fwd


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30))
def test_back_forward_duality(seed, n):
    log, ids, _ = random_dag(np.random.default_rng(seed), n, 0.15)
    back = {x: set(trace_back(log, x).nodes) for x in ids}
    fwd = {x: set(trace_forward(log, x).nodes) for x in ids}
    for x in ids:
        for y in ids:
            assert (y in fwd[x]) == (x in back[y])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30))
def test_widening_window_never_shrinks(seed, n):
    rng = np.random.default_rng(seed)
    log, ids, _ = random_dag(rng, n, 0.2)
    ts = sorted(log.get_node(i).timestamp for i in ids)
    a, b = sorted(rng.integers(0, n, size=2))
    narrow, wide = (ts[a], ts[b]), (ts[0], ts[-1])
    for x in ids:
        assert set(trace_back(log, x, narrow).nodes) <= set(trace_back(log, x, wide).nodes)


def _actors_log(rng, n):
    log, ids, edges = random_dag(rng, n, 0.15)
    t_end = log.snapshot().last_timestamp()
    agents = [log.append(agent(t_end, name=f"org{k}")) for k in range(3)]
    snap_nodes = {i: log.get_node(i) for i in ids}
    for i in ids:
        g = agents[int(rng.integers(0, 3))]
        if rng.random() < 0.5:
            rel = Rel.ATTRIBUTED_TO if snap_nodes[i].kind == Kind.ENTITY else Rel.ASSOCIATED_WITH
            log.append(ProvRelation(rel, i, g, t_end))
    for i in ids:
        if snap_nodes[i].kind == Kind.ENTITY and rng.random() < 0.3:
            a, b = rng.choice(3, 2, replace=False)
            log.append(FlowEvent(i, agents[a], agents[b],
                                 Boundary(["None", "Technical", "Administrative"][int(rng.integers(0, 3))]),
                                 t_end))
    return log, ids


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_actors_and_crossings_equal_scans(seed, n):
    log, ids = _actors_log(np.random.default_rng(seed), n)
    snap = log.snapshot()
    for root in ids:
        pipe = trace_back(snap, root)
        members = set(pipe.nodes)
        roles = {}
        for r in snap.relations():
            if r.src in members and r.rel == Rel.ATTRIBUTED_TO:
                roles.setdefault(r.dst, set()).add("attributed-source")
            if r.src in members and r.rel == Rel.ASSOCIATED_WITH:
                roles.setdefault(r.dst, set()).add("processor")
        flows = [f for f in snap.flows() if f.entity in members]
        for f in flows:
            if f.to_agent in roles:
                roles[f.to_agent].add("recipient")
        got = {a.agent: set(a.roles) for a in actors_involved(pipe)}
        assert got == roles
        assert set(pipe.actors) == set(roles)
        expect = sorted(((f.timestamp, f.id), f.boundary) for f in flows if f.boundary != Boundary.NONE)
        assert boundary_crossings(pipe) == [(k[1], b) for k, b in expect]


def test_home_chain_has_three_crossings():
    log, reading = home_chain_log()
    crossings = boundary_crossings(trace_back(log, reading))
    assert [b for _, b in crossings] == [Boundary.TECHNICAL, Boundary.TECHNICAL,
                                         Boundary.ADMINISTRATIVE]
    roles = {log.get_node(a.agent).attrs["name"]: a.roles for a in
             actors_involved(trace_back(log, reading))}
    assert roles == {"Homeowner": {"attributed-source", "recipient"}}


def test_redirect_has_three_immediate_sources(scenario, roots):
    pipe = trace_back(scenario.log, roots["ambulance"])
    cats = sorted(scenario.log.get_node(n).attrs["category"] for n in pipe.immediate())
    assert cats == ["congestion_report", "density_report", "historic_summary"]


def test_bad_update_cascades_to_lights_and_ambulances(scenario, roots):
    bad = scenario.log.find_one(Kind.ENTITY, category="software_release", regression=True)
    fwd = trace_forward(scenario.log, bad.id)
    assert roots["lighting"] in fwd.nodes
    assert roots["ambulance"] in fwd.nodes


def test_no_brake_actors_include_carnet_and_cloudvision(scenario, roots):
    pipe = trace_back(scenario.log, roots["driver"])
    names = {scenario.log.get_node(a.agent).attrs["name"] for a in actors_involved(pipe)}
    assert {"CarNet", "CloudVision"} <= names


def test_traces_are_byte_identical(scenario, roots):
    a = trace_back(scenario.log, roots["ambulance"]).to_json()
    b = trace_back(scenario.log.snapshot(), roots["ambulance"]).to_json()
    assert a == b
    pipe = trace(scenario.log, roots["ambulance"], "back")
    assert Pipeline.from_dict(json.loads(pipe.to_json())).to_json() == pipe.to_json()


def test_record_investigation_appends_reviewable_activity():
    log = ProvLog()
    e = log.append(entity(at(0)))
    act = log.append(activity(at(1), activity="decide"))
    log.append(ProvRelation(Rel.USED, act, e, at(1)))
    pipe = trace_back(log, act)
    n = len(log)
    first = record_investigation(log, "why decide", pipe)
    second = record_investigation(log, "why decide", pipe)
    assert len(log) == n + 4
    assert first != second
    assert log.neighbors(first, "upstream", Rel.USED) == [act]
    assert act in trace_back(log, second).nodes


def test_recorded_investigation_positions_replay():
    def build():
        log = ProvLog()
        e = log.append(entity(at(0)))
        record_investigation(log, "q", trace_back(log, e))
        log.append(entity(at(2)))
        return log.to_jsonl()
    assert build() == build()


def test_dot_export(scenario, roots):
    dot = to_dot(trace_back(scenario.log, roots["ambulance"]))
    assert dot.startswith('digraph "pipeline" {')
    assert dot.rstrip().endswith("}")
    assert f'"{roots["ambulance"]}"' in dot and "penwidth=2" in dot
    assert "style=bold" in dot  # administrative crossing
