from __future__ import annotations

import sys

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from decprov.provlog import Kind, ProvLog, ProvNode, ProvRelation, Rel
from decprov.sim import load_bundled, run_scenario
from decprov.sim.investigate import thread_root

T0 = datetime(2024, 3, 1, tzinfo=timezone.utc)


def at(seconds: float) -> datetime:
    return T0 + timedelta(seconds=seconds)


def random_dag(rng: np.random.Generator, n: int, p: float):
    """A random temporal DAG as a log plus the oracle's view of it.

    Node i gets a non-decreasing timestamp (ties are common), and every edge
    runs from a later node to an earlier one.
    """
    log = ProvLog()
    kinds = [Kind.ACTIVITY if b else Kind.ENTITY for b in rng.random(n) < 0.5]
    clock = np.cumsum(rng.integers(0, 2, size=n))
    ids = [log.append(ProvNode(kinds[i], at(int(clock[i])), {"i": i})) for i in range(n)]
    edges = []
    for s in range(n):
        for d in range(s):
            if rng.random() >= p:
                continue
            ks, kd = kinds[s], kinds[d]
            if ks == Kind.ACTIVITY:
                rel = Rel.USED
            elif kd == Kind.ACTIVITY:
                rel = Rel.GENERATED
            else:
                rel = Rel.DERIVED_FROM
            log.append(ProvRelation(rel, ids[s], ids[d], at(int(clock[s]))))
            edges.append((s, d))
    return log, ids, edges


@pytest.fixture(scope="session")
def scenario():
    return run_scenario(load_bundled())


@pytest.fixture(scope="session")
def roots(scenario):
    snap = scenario.log.snapshot()
    return {t: thread_root(snap, t) for t in ("driver", "lighting", "ambulance")}


def fresh_scenario(seed: int = 1, **kw):
    spec = load_bundled()
    spec.seed = seed
    return run_scenario(spec, **kw)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.line(i))
