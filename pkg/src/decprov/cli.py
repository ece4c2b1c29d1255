"""``decprov`` command line.

Exit status: 0 on success, 1 when the operation itself fails (tampered log,
unknown id, bad rule file, ...), 2 for usage errors. Results go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .capture import CapturePolicy, bulky, expire, gate_append, personal
from .compliance import RuleSet, breach_report, decide, flow_context
from .errors import DecProvError, IoFailure
from .provlog import ProvLog, canonical_json, format_ts, parse_ts, payload_from_dict, verify_chain
from .query import actors_involved, boundary_crossings, parse_window, pipeline_json, to_dot, trace
from .records import AUDIENCES, export_art30, render_report
from .sim import resolve_scenario, run_scenario
from .sim.investigate import THREADS, investigate

FORMATS = ("json", "text", "dot")


class UsageError(Exception):
    pass


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _dump(obj: Any) -> None:
    _emit(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False))


def _log_path(args: argparse.Namespace) -> Path:
    path = args.log or os.environ.get("DECPROV_LOG")
    if not path:
        raise UsageError("no log given: pass --log or set DECPROV_LOG")
    return Path(path)


def _open_log(args: argparse.Namespace, attach: bool = False) -> ProvLog:
    path = _log_path(args)
    if not path.exists():
        raise IoFailure(f"no such log file: {path}")
    return ProvLog.load(path, attach=attach)


def _now(args: argparse.Namespace, log: ProvLog | None = None) -> datetime:
    if getattr(args, "now", None):
        return parse_ts(args.now)
    if log is not None and len(log):
        return log.snapshot().last_timestamp()
    raise UsageError("--now is required for an empty log")


def _only(args: argparse.Namespace, *allowed: str) -> None:
    if args.format not in allowed:
        raise UsageError(f"--format {args.format} is not available here; use {' or '.join(allowed)}")


# -- commands -----------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    path = _log_path(args)
    log = ProvLog.load(path, attach=True) if path.exists() else ProvLog(path)
    policy = CapturePolicy.load(args.policy) if args.policy else CapturePolicy()
    source = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    results = []
    with source:
        for lineno, line in enumerate(source, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IoFailure(f"{args.input}:{lineno}: {exc}") from exc
            tags = {k: personal for k in raw.pop("personal", [])}
            tags.update({k: bulky for k in raw.pop("payload", [])})
            raw.setdefault("id", None)
            if "attrs" in raw and tags:
                raw["attrs"] = {k: tags[k](v) if k in tags else v for k, v in raw["attrs"].items()}
            res = gate_append(policy, payload_from_dict(raw), log)
            results.append({"line": lineno, "id": res.appended, "action": res.action_taken.value})
    if args.format == "json":
        _dump(results)
    else:
        for r in results:
            _emit(f"{r['line']}\t{r['id'] or '-'}\t{r['action']}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    report = verify_chain(_log_path(args))
    if args.format == "json":
        _dump(report.to_dict())
    elif report.ok:
        _emit("ok")
    else:
        _emit(f"tampered: first bad record {report.first_bad_index} ({report.reason})")
    return 0 if report.ok else 1


def _pipeline(args: argparse.Namespace, log: ProvLog):
    window = parse_window(args.window) if args.window else None
    return trace(log, args.id, args.direction, window, args.max_depth)


def cmd_trace(args: argparse.Namespace) -> int:
    log = _open_log(args)
    pipe = _pipeline(args, log)
    if args.format == "dot":
        _emit(to_dot(pipe, log))
    elif args.format == "json":
        doc = json.loads(pipeline_json(pipe))
        doc["immediate"] = pipe.immediate()
        _dump(doc)
    else:
        snap = log.snapshot()
        _emit(f"{pipe.direction.value} trace from {pipe.root}: {len(pipe.nodes)} nodes, "
              f"{len(pipe.edges)} edges, {len(pipe.flows)} flows")
        for n in pipe.nodes:
            node = snap.get_node(n)
            label = node.attrs.get("name") or node.attrs.get("activity") or ""
            _emit(f"{'  ' * min(pipe.depth[n], 8)}{n} {node.kind.value} {label}")
    return 0


def cmd_actors(args: argparse.Namespace) -> int:
    _only(args, "json", "text")
    log = _open_log(args)
    snap = log.snapshot()
    rows = [a.to_dict(snap) for a in actors_involved(_pipeline(args, log), snap)]
    if args.format == "json":
        _dump(rows)
    else:
        for r in rows:
            _emit(f"{r['agent']}\t{r['name']}\t{','.join(r['roles'])}")
    return 0


def cmd_flows(args: argparse.Namespace) -> int:
    _only(args, "json", "text")
    log = _open_log(args)
    snap = log.snapshot()
    rows = []
    for fid, boundary in boundary_crossings(_pipeline(args, log), snap):
        f = snap.get_flow(fid)
        rows.append({"flow": fid, "boundary": boundary.value, "entity": f.entity,
                     "from": snap.get_node(f.from_agent).attrs.get("name", f.from_agent),
                     "to": snap.get_node(f.to_agent).attrs.get("name", f.to_agent),
                     "timestamp": format_ts(f.timestamp)})
    if args.format == "json":
        _dump(rows)
    else:
        for r in rows:
            _emit(f"{r['timestamp']}\t{r['flow']}\t{r['boundary']}\t{r['from']} -> {r['to']}")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    _only(args, "json", "text")
    if args.id:
        log = _open_log(args, attach=True)
        report = breach_report(log, args.id, args.recipient, now=_now(args, log))
        _emit(report.to_json() if args.format == "json" else report.to_text())
        return 0
    if not args.rules:
        raise UsageError("audit needs --rules (flow audit) or --id (breach report)")
    log = _open_log(args)
    rules = RuleSet.load(args.rules)
    snap = log.snapshot()
    now = _now(args, log)
    rows = []
    for f in snap.flows():
        d = decide(rules.rules, flow_context(snap, f, now, rules.whitelist,
                                             rules.unreliable_agents), now)
        rows.append(d.to_dict())
    flagged = [r for r in rows if r["reaction"] != "allow"]
    if args.format == "json":
        _dump({"flows": len(rows), "flagged": flagged})
    else:
        _emit(f"{len(rows)} flows checked, {len(flagged)} flagged")
        for r in flagged:
            _emit(f"  {r['event']}\t{r['rule']}\t{r['reaction']}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    _only(args, "json", "text")
    # tampered logs still render, with accurate=false
    log = ProvLog.load(_log_path(args), verify=False)
    report = render_report(log, args.id, args.audience, args.cap)
    _emit(report.to_json() if args.format == "json" else report.to_text())
    return 0


def cmd_art30(args: argparse.Namespace) -> int:
    _only(args, "json", "text")
    log = _open_log(args)
    rec = export_art30(log, args.controller)
    if args.format == "json":
        _emit(rec.to_json())
        return 0
    d = rec.to_dict()
    _emit(f"Record of processing for {d['controller_name']} ({d['controller']})")
    for key in sorted(d):
        if key in ("controller", "controller_name"):
            continue
        _emit(f"{key}: {canonical_json(d[key])}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    _only(args, "json", "text")
    spec = resolve_scenario(args.scenario)
    if args.seed is not None:
        spec.seed = args.seed
    if args.no_faults:
        spec.faults = ()
    policy = CapturePolicy.load(args.policy) if args.policy else None
    rules = RuleSet.load(args.rules) if args.rules else None
    result = run_scenario(spec, policy, rules)
    result.log.dump(args.out)
    if args.trace_out:
        try:
            Path(args.trace_out).write_text(result.trace.to_jsonl(), encoding="utf-8")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
    summary = {"scenario": spec.name, "seed": spec.seed, "records": len(result.log),
               "events": len(result.trace), "head_hash": result.log.head_hash,
               "out": str(args.out)}
    if args.format == "json":
        _dump(summary)
    else:
        _emit(f"{summary['records']} records, {summary['events']} events -> {args.out}")
    return 0


def cmd_investigate(args: argparse.Namespace) -> int:
    _only(args, "json", "text")
    log = _open_log(args, attach=not args.no_record)
    found = investigate(log, args.thread, record=not args.no_record)
    _emit(found.to_json() if args.format == "json" else found.to_text())
    return 0


def cmd_expire(args: argparse.Namespace) -> int:
    _only(args, "json", "text")
    log = _open_log(args)
    policy = CapturePolicy.load(args.policy)
    out = Path(args.out)
    if out.exists():
        raise IoFailure(f"refusing to overwrite {out}")
    res = expire(policy, log, _now(args, log), out)
    if args.format == "json":
        _dump({"tombstoned": res.tombstoned, "out": str(out), "records": len(res.log)})
    else:
        _emit(f"{len(res.tombstoned)} records tombstoned -> {out}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decprov", allow_abbrev=False,
                                description="Inspect and query decision provenance logs.")
    p.add_argument("--version", action="version", version=f"decprov {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def command(name: str, fn, help: str, log: bool = True, fmt: str = "text"):
        c = sub.add_parser(name, help=help, description=help, allow_abbrev=False)
        if log:
            c.add_argument("--log", help="log file (default: $DECPROV_LOG)")
        c.add_argument("--format", choices=FORMATS, default=fmt)
        c.set_defaults(func=fn)
        return c

    def traced(c):
        c.add_argument("--id", required=True, help="root node id")
        c.add_argument("--direction", choices=("back", "forward"), default="back")
        c.add_argument("--window", help="restrict to start..end (RFC 3339)")
        c.add_argument("--max-depth", type=int, default=None)

    c = command("ingest", cmd_ingest, "append JSONL payloads through a capture policy")
    c.add_argument("--input", required=True, help="JSONL payload file, or - for stdin")
    c.add_argument("--policy", help="capture policy JSON")

    command("verify", cmd_verify, "check the hash chain")
    traced(command("trace", cmd_trace, "backward or forward decision pipeline"))
    traced(command("actors", cmd_actors, "agents involved in a pipeline, with roles"))
    traced(command("flows", cmd_flows, "boundary crossings in a pipeline"))

    c = command("audit", cmd_audit, "compliance audit of flows, or a breach report with --id")
    c.add_argument("--rules", help="rules file JSON")
    c.add_argument("--id", help="incident entity for a breach report")
    c.add_argument("--recipient", default="regulator")
    c.add_argument("--now", help="evaluation instant (default: last log timestamp)")

    c = command("report", cmd_report, "audience-targeted audit report for a decision")
    c.add_argument("--id", required=True)
    c.add_argument("--audience", choices=AUDIENCES, required=True)
    c.add_argument("--cap", type=float, default=1.0, help="proportionality cap")

    c = command("art30", cmd_art30, "record of processing activities for a controller",
                fmt="json")
    c.add_argument("--controller", required=True, help="agent id or name")

    c = command("simulate", cmd_simulate, "run a scenario and write its log", log=False)
    c.add_argument("--scenario", default="smart-city.json")
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.add_argument("--trace-out", help="also write the event trace (JSONL)")
    c.add_argument("--policy", help="capture policy JSON")
    c.add_argument("--rules", help="compliance rules JSON")
    c.add_argument("--no-faults", action="store_true", help="drop every scripted fault")

    c = command("investigate", cmd_investigate, "run one incident line of inquiry")
    c.add_argument("--thread", choices=sorted(THREADS), required=True)
    c.add_argument("--no-record", action="store_true",
                   help="do not append the investigation to the log")

    c = command("expire", cmd_expire, "write a compacted copy with aged records tombstoned")
    c.add_argument("--policy", required=True)
    c.add_argument("--now", help="reference instant (default: last log timestamp)")
    c.add_argument("--out", required=True)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"decprov: error: {exc}", file=sys.stderr)
        return 2
    except DecProvError as exc:
        print(f"decprov: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # enum/timestamp parsing of user input that slipped past argparse
        print(f"decprov: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
