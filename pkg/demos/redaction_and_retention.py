"""Capture less, keep it for less time, and still prove nothing was altered.

    python3 demos/redaction_and_retention.py
"""

import tempfile
from datetime import datetime, timedelta, timezone
from pathlib import Path

from decprov.capture import CapturePolicy, expire, gate_append, personal
from decprov.provlog import ProvLog, ProvRelation, Rel, entity, verify_chain

policy = CapturePolicy.from_dict({"rules": [
    {"match": {"attrs": {"category": "cctv"}}, "action": "redact", "retention_s": 86400},
    {"match": {"attrs": {"category": "debug"}}, "action": "drop"},
]})

t0 = datetime(2025, 1, 1, tzinfo=timezone.utc)
log = ProvLog()
frame = gate_append(policy, entity(t0, category="cctv", plate=personal("AB12 CDE")), log)
gate_append(policy, entity(t0, category="debug", note="verbose"), log)
count = gate_append(policy, entity(t0 + timedelta(minutes=1), category="traffic_count", cars=41), log)
log.append(ProvRelation(Rel.DERIVED_FROM, count.appended, frame.appended, t0 + timedelta(minutes=1)))

for rec in log.records:
    print(rec.to_line()[:110])

with tempfile.TemporaryDirectory() as d:
    out = Path(d) / "compacted.jsonl"
    res = expire(policy, log, t0 + timedelta(days=2), out)
    print(f"\ntombstoned {res.tombstoned}; compacted chain ok: {verify_chain(out).ok}")
    print("the count still traces back to the (tombstoned) frame:",
          res.log.neighbors(count.appended, "upstream"))
