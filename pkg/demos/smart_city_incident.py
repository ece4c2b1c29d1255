"""Walk through the smart-city collision the way an investigator would.

A car fails to brake for a pedestrian on a dim street, and the ambulances
were sent elsewhere. We simulate seven months of the city, then ask three
questions of the provenance log: why didn't the car brake, why was the
street dim, and why were the ambulances redirected?

    python3 demos/smart_city_incident.py
"""

from decprov.compliance import breach_report
from decprov.provlog import Kind
from decprov.query import trace_back, trace_forward
from decprov.sim import load_bundled, run_scenario
from decprov.sim.investigate import investigate

res = run_scenario(load_bundled())
log = res.log
print(f"simulated {len(log)} records, chain ok: {log.verify().ok}\n")

for thread in ("driver", "lighting", "ambulance"):
    print(investigate(log, thread).to_text())

# What fed the ambulance decision directly?
amb = investigate(log, "ambulance", record=False)
back = trace_back(log, amb.root)
print("immediate inputs to the redirect decision:")
for nid in back.immediate():
    print(f"  {nid}  {log.get_node(nid).attrs['category']}")

# Follow the bad CloudMap release forwards and report it.
bad = log.find_one(Kind.ENTITY, category="software_release", regression=True)
fwd = trace_forward(log, bad.id)
deciders = sorted({str(log.get_node(n).attrs.get("agent")) for n in fwd.nodes
                   if log.get_node(n).attrs.get("decision")})
print(f"\nthe bad release reached {len(fwd.nodes)} nodes; decisions by: {', '.join(deciders)}")
print(breach_report(log, bad.id, "regulator").to_text())
