"""A motion reading leaves a home, passes through a cloud, lands at the council.

Shows where visibility is lost (boundary crossings), who handled the data,
and how an expected-flow whitelist reacts when a new recipient appears.

    python3 demos/home_to_council.py
"""

from datetime import timedelta

from decprov.compliance import ExpectedFlowPolicy, check_flow, default_rules
from decprov.provlog import Boundary, FlowEvent, Kind, agent
from decprov.query import actors_involved, boundary_crossings, trace_back, trace_forward
from decprov.sim.home_chain import home_chain_log

log, reading = home_chain_log()
name = lambda nid: log.get_node(nid).attrs.get("name", nid)  # noqa: E731

fwd = trace_forward(log, reading)
print("crossings made by the reading:")
for fid, boundary in boundary_crossings(fwd, log):
    f = log.get_flow(fid)
    print(f"  {name(f.from_agent)} -> {name(f.to_agent)}  [{boundary.value}]")

print("\nactors:")
for ar in actors_involved(trace_back(log, reading), log):
    print(f"  {name(ar.agent)}: {', '.join(sorted(ar.roles))}")

# Every expected hop is whitelisted; the broker is not.
agents = {n.attrs["name"]: n.id for n in log.find(Kind.AGENT)}
expected = ExpectedFlowPolicy((("sensor", "hub", "*"), ("hub", "cloud", "*"),
                               ("cloud", "council", "motion")))
later = log.last_timestamp() + timedelta(seconds=1)
broker = log.append(agent(later, name="data-broker"))
leak = log.append(FlowEvent(reading, agents["cloud"], broker, Boundary.ADMINISTRATIVE, later))
d = check_flow(default_rules(), expected, leak, later, log=log)
print(f"\ncloud -> data-broker: {d.reaction.value}"
      + (f", alert to {d.alert.recipient}" if d.alert else ""))
