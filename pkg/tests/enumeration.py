"""Exhaustive small-world check of flow rule evaluation against a plain scan."""

from __future__ import annotations

import itertools

from conftest import at
from oracles import glob_ok
from decprov.compliance import (
    ComplianceRule, ExpectedFlowPolicy, Reaction, Trigger, decide, flow_context,
)
from decprov.provlog import Boundary, FlowEvent, ProvLog, ProvRelation, Rel, agent, entity

AGENTS = ("a0", "a1", "a2")
CATEGORIES = ("c0", "c1", "c2")
UNRELIABLE = "a2"
WHITELIST = (("a0", "a1", "*"), ("a*", "a2", "c1"))
REACTIONS = (Reaction.ALLOW, Reaction.BLOCK, Reaction.QUARANTINE)


def world():
    """A log holding one flow for every (from, to, category) triple."""
    log = ProvLog()
    ids = {a: log.append(agent(at(0), name=a, reliable=a != UNRELIABLE)) for a in AGENTS}
    flows = {}
    for f, t, c in itertools.product(AGENTS, AGENTS, CATEGORIES):
        e = log.append(entity(at(1), category=c))
        log.append(ProvRelation(Rel.ATTRIBUTED_TO, e, ids[f], at(1)))
        b = Boundary.NONE if f == t else Boundary.TECHNICAL
        flows[(f, t, c)] = log.append(FlowEvent(e, ids[f], ids[t], b, at(2)))
    return log, flows


def triggers():
    for fa, ta, cat, exp, unrel in itertools.product(
            ("*", "a0"), ("*", "a1"), ("*", "c0"), (None, False), (None, True)):
        yield Trigger(event="flow", from_agent=fa, to_agent=ta, category=cat,
                      expected=exp, unreliable=unrel)


def rule_lists():
    singles = [ComplianceRule(f"r{i}", trig, r)
               for i, (trig, r) in enumerate(itertools.product(list(triggers()), REACTIONS))]
    yield []
    for r in singles:
        yield [r]
    for r1, r2 in itertools.product(singles, singles):
        yield [r1, r2]


def scan(rules, f, t, c, whitelist_on):
    expected = (not whitelist_on) or any(
        glob_ok(a, f) and glob_ok(b, t) and glob_ok(k, c) for a, b, k in WHITELIST)
    unreliable = f == UNRELIABLE
    for r in rules:
        tr = r.trigger
        if not (glob_ok(tr.from_agent, f) and glob_ok(tr.to_agent, t)
                and glob_ok(tr.category, c)):
            continue
        if tr.expected is not None and tr.expected != expected:
            continue
        if tr.unreliable is not None and tr.unreliable != unreliable:
            continue
        return r.reaction, r.id
    return Reaction.ALLOW, None


def run_enumeration():
    """Return (cases checked, mismatches)."""
    log, flows = world()
    snap = log.snapshot()
    now = at(3)
    contexts = {}
    for on in (False, True):
        wl = ExpectedFlowPolicy(WHITELIST) if on else None
        for key, fid in flows.items():
            contexts[(key, on)] = flow_context(snap, snap.get_flow(fid), now, wl)
    checked, bad = 0, []
    for rules in rule_lists():
        for ((f, t, c), on), ctx in contexts.items():
            d = decide(rules, ctx, now)
            want = scan(rules, f, t, c, on)
            checked += 1
            if (d.reaction, d.rule) != want:
                bad.append((rules, (f, t, c), on, d.reaction, want))
    return checked, bad
