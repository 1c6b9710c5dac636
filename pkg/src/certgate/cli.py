"""``certgate`` command line."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from certgate.boundary import drift_eval, estimate_measures, exact_measures, generator_from_dict
from certgate.certifier import Certified, Escalate, certify, config_from_dict, parse_certificate, verdict_to_dict
from certgate.errors import CertgateError, NoCertificate, StaleCertificate
from certgate.executor import execute, parse_environment
from certgate.memory import Ledger, MemoryState, memory_from_dict, recertify, verify_chain
from certgate.policy import lint_report, parse_policy
from certgate.scenarios import REGISTRY, report_bytes, run_scenario
from certgate.trace import Outcome, canonical_hash, load_json, parse_trace, realized_to_dict, trace_to_dict

KEY_ENV = "CERTGATE_MAC_KEY"

EXIT_CERTIFIED, EXIT_ESCALATE, EXIT_REJECTED = 0, 10, 20
EXIT_OUTCOME = {Outcome.COMPLETED: 0, Outcome.HALTED: 30, Outcome.ROLLED_BACK: 31, Outcome.ESCALATED: 32}
EXIT_NO_CERTIFICATE, EXIT_STALE = 40, 41
EXIT_ERROR = 2


def load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    data = Path(path).read_bytes()
    if path.endswith(".toml"):
        return tomllib.loads(data.decode("utf-8"))
    return load_json(data, "config")


def mac_key() -> bytes:
    key = os.environ.get(KEY_ENV)
    if not key:
        raise CertgateError(f"set {KEY_ENV} to the certificate authenticator key")
    return key.encode()


def _certifier_section(conf: dict[str, Any]) -> dict[str, Any]:
    return conf.get("certifier", conf)


def _ledger(args, conf) -> Ledger | None:
    path = getattr(args, "ledger", None) or conf.get("ledger")
    return Ledger(path) if path else None


def _emit(doc: Any) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_certify(args, conf) -> int:
    trace = parse_trace(Path(args.trace).read_bytes())
    policy = parse_policy(Path(args.policy).read_bytes())
    memory = memory_from_dict(load_json(Path(args.memory).read_bytes(), "memory")) if args.memory else MemoryState()
    cfg = config_from_dict(_certifier_section(conf) if conf else {"certifier_id": "certgate"}, mac_key())
    ledger = _ledger(args, conf)
    verdict = certify(trace, policy, memory, cfg, ledger)
    doc = verdict_to_dict(verdict)
    if ledger is not None:
        ledger.append(
            trace_hash=canonical_hash(trace).hex(),
            record={"type": "certification", "outcome": verdict.outcome, "trace": trace_to_dict(trace), **{k: v for k, v in doc.items() if k != "outcome"}},
            policy=policy,
            recorded_tick=verdict.certificate.issued_tick if isinstance(verdict, Certified) else memory.last_updated_tick,
        )
    if args.out and isinstance(verdict, Certified):
        Path(args.out).write_bytes(verdict.certificate.serialize() + b"\n")
    _emit(doc)
    if isinstance(verdict, Certified):
        return EXIT_CERTIFIED
    return EXIT_ESCALATE if isinstance(verdict, Escalate) else EXIT_REJECTED


def cmd_execute(args, conf) -> int:
    trace = parse_trace(Path(args.trace).read_bytes())
    policy = parse_policy(Path(args.policy).read_bytes())
    env = parse_environment(Path(args.env).read_bytes())
    cert = parse_certificate(Path(args.cert).read_bytes()) if args.cert else None
    if args.clock is not None:
        env.clock = args.clock
    try:
        result = execute(trace, cert, policy, env, _ledger(args, conf), mac_key())
    except NoCertificate as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_NO_CERTIFICATE
    except StaleCertificate as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_STALE
    _emit({"realized": realized_to_dict(result.realized), "halted_before": result.halted_before, "ledger_seq": result.ledger_seq})
    return EXIT_OUTCOME[result.realized.outcome]


def cmd_audit(args, conf) -> int:
    ledger = _ledger(args, conf)
    if ledger is None:
        raise CertgateError("audit needs --ledger")
    entries = ledger.find(args.trace_hash)
    _emit([e.to_dict() for e in entries])
    return 0 if entries else 1


def cmd_recertify(args, conf) -> int:
    ledger = _ledger(args, conf)
    if ledger is None:
        raise CertgateError("recertify needs --ledger")
    policy = parse_policy(Path(args.policy).read_bytes())
    entry = ledger[args.entry]
    result = recertify(entry, policy, ledger.trace_store(), ledger)
    _emit({"entry": entry.seq, "verdict": result.verdict.to_dict(), "drift": result.drift, "ledger_seq": result.ledger_seq})
    return 0


def cmd_eval(args, conf) -> int:
    gen_raw = load_json(Path(args.generator).read_bytes(), "generator")
    if args.mode:
        gen_raw = {**gen_raw, "mode": args.mode}
    if args.seed is not None:
        gen_raw = {**gen_raw, "seed": args.seed}
    gen = generator_from_dict(gen_raw)
    policy = parse_policy(Path(args.policy).read_bytes())
    cfg = config_from_dict(_certifier_section(load_config(args.certifier)), mac_key())
    if gen.mode == "exact":
        report = exact_measures(gen, cfg, policy)
    else:
        report = estimate_measures(gen, cfg, policy)
    doc = report.to_dict()
    if args.drift_policy:
        doc["drift"] = float(drift_eval(gen, cfg, policy, parse_policy(Path(args.drift_policy).read_bytes())))
    print(report.table())
    _emit(doc)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            csv.writer(fh).writerows(report.csv_rows())
    if args.json:
        Path(args.json).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_scenario(args, conf) -> int:
    names = list(REGISTRY) if args.name == "all" else [args.name]
    ok = True
    for name in names:
        report = run_scenario(name)
        ok = ok and report.passed
        if args.json:
            sys.stdout.write(report_bytes(report).decode() + "\n")
        else:
            print(report.render())
    return 0 if ok else 1


def cmd_policy_lint(args, conf) -> int:
    report = lint_report(load_json(Path(args.path).read_bytes(), "policy"))
    _emit(report)
    return 0 if report["ok"] else 1


def cmd_ledger_verify(args, conf) -> int:
    result = verify_chain(args.path)
    _emit({"ok": result.ok, "first_bad_seq": result.first_bad_seq, "reason": result.reason})
    return 0 if result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="certgate", description="Certify proposed agent traces and execute only certified ones.")
    p.add_argument("--config", help="TOML or JSON config (certifier settings, ledger path)")
    p.add_argument("--seed", type=int, help="seed for sampled evaluations")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", help="certify a proposed trace")
    c.add_argument("--trace", required=True)
    c.add_argument("--policy", required=True)
    c.add_argument("--memory")
    c.add_argument("--ledger")
    c.add_argument("--out", help="write the certificate here when certified")
    c.set_defaults(func=cmd_certify)

    e = sub.add_parser("execute", help="execute a certified trace against a simulated environment")
    e.add_argument("--trace", required=True)
    e.add_argument("--cert")
    e.add_argument("--policy", required=True)
    e.add_argument("--env", required=True)
    e.add_argument("--ledger")
    e.add_argument("--clock", type=int, help="override the environment clock")
    e.set_defaults(func=cmd_execute)

    a = sub.add_parser("audit", help="list ledger entries for a trace hash")
    a.add_argument("--trace-hash", required=True)
    a.add_argument("--ledger")
    a.set_defaults(func=cmd_audit)

    r = sub.add_parser("recertify", help="re-evaluate a ledger entry under another policy")
    r.add_argument("--entry", type=int, required=True)
    r.add_argument("--policy", required=True)
    r.add_argument("--ledger")
    r.set_defaults(func=cmd_recertify)

    v = sub.add_parser("eval", help="boundary measures for a generator and certifier")
    v.add_argument("--generator", required=True)
    v.add_argument("--certifier", required=True)
    v.add_argument("--policy", required=True)
    v.add_argument("--mode", help="exact or sample:<n>")
    v.add_argument("--drift-policy", help="also report drift to this policy")
    v.add_argument("--csv")
    v.add_argument("--json")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("scenario", help="run packaged scenarios")
    s_sub = s.add_subparsers(dest="action", required=True)
    sr = s_sub.add_parser("run")
    sr.add_argument("name", choices=[*REGISTRY, "all"])
    sr.add_argument("--json", action="store_true", help="one canonical JSON report per line")
    sr.set_defaults(func=cmd_scenario)

    pol = sub.add_parser("policy", help="policy tools")
    pol_sub = pol.add_subparsers(dest="action", required=True)
    pl = pol_sub.add_parser("lint")
    pl.add_argument("path")
    pl.set_defaults(func=cmd_policy_lint)

    led = sub.add_parser("ledger", help="ledger tools")
    led_sub = led.add_subparsers(dest="action", required=True)
    lv = led_sub.add_parser("verify")
    lv.add_argument("path")
    lv.set_defaults(func=cmd_ledger_verify)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        conf = load_config(args.config)
        return args.func(args, conf)
    except (CertgateError, OSError, IndexError) as exc:
        print(f"certgate: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
