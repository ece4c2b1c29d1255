"""A four-hop chain: home sensor, hub, cloud service, council planning.

Small enough to read by eye; used in tests and the demos for boundary counting.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

from ..provlog import Boundary, FlowEvent, Kind, ProvLog, ProvNode, ProvRelation, Rel

START = datetime(2024, 1, 1, tzinfo=timezone.utc)

HOPS = [
    ("sensor", "hub", Boundary.TECHNICAL),
    ("hub", "cloud", Boundary.TECHNICAL),
    ("cloud", "council", Boundary.ADMINISTRATIVE),
]


def home_chain_log() -> tuple[ProvLog, str]:
    """Return the log and the id of the reading that reaches the council."""
    log = ProvLog()
    tick = iter(range(100))

    def at() -> datetime:
        return START + timedelta(seconds=next(tick))

    agents = {}
    for name, org in [("Homeowner", None), ("CloudCo", None), ("Council", None),
                      ("sensor", "Homeowner"), ("hub", "Homeowner"), ("cloud", "CloudCo"),
                      ("council", "Council")]:
        attrs = {"name": name} if org is None else {"name": name, "org": org}
        agents[name] = log.append(ProvNode(Kind.AGENT, at(), attrs))
    reading = log.append(ProvNode(Kind.ENTITY, at(), {"category": "motion", "name": "reading"}))
    log.append(ProvRelation(Rel.ATTRIBUTED_TO, reading, agents["Homeowner"], at()))
    for src, dst, boundary in HOPS:
        log.append(FlowEvent(reading, agents[src], agents[dst], boundary, at()))
    # the actuation the hub triggers locally
    act = log.append(ProvNode(Kind.ACTIVITY, at(), {"activity": "switch-light"}))
    log.append(ProvRelation(Rel.USED, act, reading, at()))
    return log, reading
