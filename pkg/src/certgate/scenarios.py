"""Runnable end-to-end scenarios with machine-checkable expectations.

Each scenario wires the modules together on packaged fixtures and records a
list of checks (expected vs actual). A scenario passes when every check does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from typing import Any, Callable

from certgate.boundary import exact_measures, generator_from_dict
from certgate.certifier import (
    Certificate,
    Certified,
    CertifierConfig,
    ComponentKind,
    Escalate,
    ObservationMask,
    Rejected,
    certify,
    check_certificate,
    check_certificate_detail,
    compute_mac,
    config_from_dict,
)
from certgate.errors import NoCertificate, UnknownScenario
from certgate.executor import conform, execute, parse_environment
from certgate.memory import Ledger, MemoryClass, MemoryState, recertify, verify_chain
from certgate.policy import evaluate, local_action_permitted, parse_policy
from certgate.trace import Outcome, Tier, canonical_bytes, canonical_hash, parse_trace, trace_to_dict

SCENARIO_KEY = b"scenario-key"


def fixture_text(name: str) -> str:
    return (resources.files("certgate") / "fixtures" / name).read_text(encoding="utf-8")


def load_policy(name: str):
    return parse_policy(fixture_text(name))


def load_trace(name: str):
    return parse_trace(fixture_text(name))


def load_config(name: str) -> CertifierConfig:
    return config_from_dict(json.loads(fixture_text(name)), SCENARIO_KEY)


def _cfg(**kw: Any) -> CertifierConfig:
    base = dict(certifier_id="compliance-engine", authority_tier=Tier.C4, memory_class=MemoryClass.M2_Provenance, mac_key=SCENARIO_KEY)
    base.update(kw)
    return CertifierConfig(**base)


@dataclass
class Check:
    name: str
    expected: Any
    actual: Any

    @property
    def ok(self) -> bool:
        return self.expected == self.actual

    def to_dict(self) -> dict[str, Any]:
        return {"check": self.name, "expected": _show(self.expected), "actual": _show(self.actual), "ok": self.ok}


def _show(value: Any) -> Any:
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, (list, tuple)):
        return [_show(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted(_show(v) for v in value)
    return value


@dataclass
class ScenarioReport:
    name: str
    checks: list[Check] = field(default_factory=list)

    def expect(self, name: str, expected: Any, actual: Any) -> None:
        self.checks.append(Check(name, expected, actual))

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.ok for c in self.checks)

    def to_dict(self) -> dict[str, Any]:
        return {"scenario": self.name, "passed": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def render(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} {self.name}"]
        for c in self.checks:
            mark = "ok " if c.ok else "BAD"
            lines.append(f"  [{mark}] {c.name}: expected {_show(c.expected)!r}, got {_show(c.actual)!r}")
        return "\n".join(lines)


def _outcome(v) -> str:
    return v.outcome


def _reasons(v) -> str:
    return " | ".join(v.reasons) if isinstance(v, Rejected) else ""


# ---------------------------------------------------------------------------


def query_budget(r: ScenarioReport) -> None:
    policy = load_policy("query_budget.policy.json")
    six, five = load_trace("query6.trace.json"), load_trace("query5.trace.json")
    r.expect("each of the six queries passes the action-level check", True, all(local_action_permitted(policy, e) for e in six.events))
    verdict = evaluate(policy, six)
    r.expect("oracle forbids the six-query trace", False, verdict.permitted)
    r.expect("oracle violation", "queries[agent,R]=6>5", verdict.per_layer[0].violation.reason)
    r.expect("certifier on six queries", "Rejected", _outcome(certify(six, policy, MemoryState(), _cfg())))
    r.expect("certifier on five queries", "Certified", _outcome(certify(five, policy, MemoryState(), _cfg())))
    r.expect("M0 certifier cannot witness the budget", "Escalate", _outcome(certify(five, policy, MemoryState(), _cfg(memory_class=MemoryClass.M0_FiniteState))))


def impermissible_strategy(r: ScenarioReport) -> None:
    policy = load_policy("conduct.policy.json")
    trace = load_trace("spoofing.trace.json")
    r.expect("every step passes in isolation", True, all(local_action_permitted(policy, e) for e in trace.events))
    r.expect("oracle forbids the strategy", False, evaluate(policy, trace).permitted)
    v = certify(trace, policy, MemoryState(), _cfg(memory_class=MemoryClass.M0_FiniteState))
    r.expect("finite-state certifier rejects", "Rejected", _outcome(v))
    r.expect("rejection names the conduct layer", True, "no_spoofing" in _reasons(v))


def optimality_without_permissibility(r: ScenarioReport) -> None:
    policy = load_policy("leverage.policy.json")
    trace = load_trace("optimal_portfolio.trace.json")
    v = certify(trace, policy, MemoryState(), _cfg())
    r.expect("oracle forbids the optimal allocation", False, evaluate(policy, trace).permitted)
    r.expect("certifier rejects", "Rejected", _outcome(v))
    r.expect("the optimiser's arithmetic itself replays", False, "compute:" in _reasons(v))
    r.expect("rejection is on leverage", True, "leverage[agent,ISSUER-G]=4000>3000" in _reasons(v))


def exposure_noncompositional(r: ScenarioReport) -> None:
    policy = load_policy("exposure.policy.json")
    trace = load_trace("exposure.trace.json")
    r.expect("each 1000 bp order passes the action-level check", [True, True, True], [local_action_permitted(policy, e) for e in trace.events])
    verdict = evaluate(policy, trace)
    failing = [lv for lv in verdict.per_layer if not lv.accepted]
    r.expect("oracle violation", [("sector_exposure", "o3", "exposure[agent,SEMI]=3000>2000")], [(lv.layer_id, lv.violation.event_id, lv.violation.reason) for lv in failing])
    v = certify(trace, policy, MemoryState(), _cfg())
    r.expect("certifier", "Rejected", _outcome(v))
    r.expect("rejected at the third order", True, "exposure[agent,SEMI]=3000>2000 at o3" in _reasons(v))
    two = replace(trace, trace_id="buys-2", events=trace.events[:2])
    r.expect("two orders (2000 bp) certify", "Certified", _outcome(certify(two, policy, MemoryState(), _cfg())))


def wrong_derivation(r: ScenarioReport) -> None:
    policy = load_policy("filing.policy.json")
    trace = load_trace("wrong_derivation.trace.json")
    v = certify(trace, policy, MemoryState(), _cfg())
    r.expect("certifier", "Rejected", _outcome(v))
    r.expect("compute component fails", True, "compute: calc claims 42 but replays to 41" in _reasons(v))
    r.expect("oracle forbids the trace", False, evaluate(policy, trace).permitted)


def escalation(r: ScenarioReport) -> None:
    policy = load_policy("filing.policy.json")
    trace = load_trace("escalation.trace.json")
    v = certify(trace, policy, MemoryState(), _cfg())
    r.expect("certifier", "Escalate", _outcome(v))
    r.expect("escalation names the pending review", True, isinstance(v, Escalate) and "awaits authorization review" in v.reason)


def proof_carrying_trade(r: ScenarioReport) -> None:
    policy = load_policy("trade.policy.json")
    trace = load_trace("trade.trace.json")
    v = certify(trace, policy, MemoryState(), _cfg())
    r.expect("certifier", "Certified", _outcome(v))
    if not isinstance(v, Certified):
        return
    cert = v.certificate
    r.expect(
        "certificate components",
        {"Id", "Policy", "Lineage", "Privacy", "Risk", "Source"},
        {c.component.value for c in cert.components},
    )
    r.expect("certificate checks", True, check_certificate(cert, trace, policy, SCENARIO_KEY))
    ledger = Ledger()
    result = execute(trace, cert, policy, parse_environment(fixture_text("trade.env.json")), ledger, SCENARIO_KEY)
    r.expect("clean execution", "Completed", result.realized.outcome.value)
    r.expect("realized trace conforms", True, conform(result.realized, trace)[0])
    r.expect("realized trace is permitted", True, evaluate(policy, result.realized).permitted)
    refused = False
    try:
        execute(trace, None, policy, parse_environment(fixture_text("trade.env.json")), ledger, SCENARIO_KEY)
    except NoCertificate:
        refused = True
    r.expect("no certificate, no execution", True, refused)
    r.expect("refusal is on the ledger", "refusal", ledger.entries[-1].record["type"])
    edited = replace(trace, events=(trace.events[0], trace.events[1], replace(trace.events[2], params={**trace.events[2].params, "qty": 900}), trace.events[3]))
    r.expect("certificate does not transfer to an edited trace", False, check_certificate(cert, edited, policy, SCENARIO_KEY))


def persistent_memory_drift(r: ScenarioReport) -> None:
    old = load_policy("query_budget.policy.json")
    new = load_policy("query_budget_v2.policy.json")
    six = load_trace("query6.trace.json")
    ledger = Ledger()
    cfg = _cfg(memory_class=MemoryClass.M3_Persistent)
    for n in range(1, 7):
        trace = replace(six, trace_id=f"queries-{n}", events=six.events[:n])
        v = certify(trace, old, MemoryState(), cfg, ledger)
        record = {"type": "certification", "outcome": v.outcome, "trace": trace_to_dict(trace)}
        if isinstance(v, Certified):
            record["certificate"] = v.certificate.to_dict()
        ledger.append(trace_hash=canonical_hash(trace).hex(), record=record, policy=old, recorded_tick=n)
    r.expect("ledger lineage records the policy source", "data-vendor licence", ledger.entries[0].policy_source)
    store = ledger.trace_store()
    flagged = []
    for entry in list(ledger.entries):
        result = recertify(entry, new, store, ledger)
        if result.drift:
            flagged.append(entry.record["trace"]["trace_id"])
    r.expect("drift flags exactly the 4- and 5-query certificates", ["queries-4", "queries-5"], flagged)
    r.expect("historical entries untouched, re-certifications appended", 12, len(ledger))
    r.expect("chain verifies", True, verify_chain(ledger).ok)
    same = [recertify(e, old, store).drift for e in ledger.entries[:6]]
    r.expect("identical policy never drifts", [False] * 6, same)


def self_approval(r: ScenarioReport) -> None:
    policy = load_policy("payment.policy.json")
    trace = load_trace("payment_fresh.trace.json")
    v = certify(trace, policy, MemoryState(), _cfg(certifier_id=trace.proposer_id))
    r.expect("proposer certifying itself", "Rejected", _outcome(v))
    r.expect("reason", True, "self-approval" in _reasons(v))
    forged = Certificate(canonical_hash(trace).hex(), policy.version, (), 0, trace.proposer_id, Tier.C5)
    forged = replace(forged, mac=compute_mac(forged, SCENARIO_KEY))
    r.expect("hand-built self-certificate fails the check", ["certifier and proposer are the same role"], check_certificate_detail(forged, trace, policy, SCENARIO_KEY))
    selfish = load_trace("payment_self_approved.trace.json")
    r.expect("approval signed by the proposer", "Rejected", _outcome(certify(selfish, policy, MemoryState(), _cfg())))


def stale_approval(r: ScenarioReport) -> None:
    policy = load_policy("payment.policy.json")
    fresh = certify(load_trace("payment_fresh.trace.json"), policy, MemoryState(), _cfg())
    r.expect("fresh bound approval", "Certified", _outcome(fresh))
    if isinstance(fresh, Certified):
        r.expect("human component present", True, ComponentKind.HUMAN in fresh.certificate.kinds())
    for name, label in (("payment_expired.trace.json", "expired approval"), ("payment_rebound.trace.json", "approval for the pre-edit trace")):
        trace = load_trace(name)
        r.expect(f"oracle on {label}", True, evaluate(policy, trace).permitted)
        r.expect(f"certifier on {label}", "Escalate", _outcome(certify(trace, policy, MemoryState(), _cfg())))


def tool_deviation(r: ScenarioReport) -> None:
    policy = load_policy("trade.policy.json")
    trace = load_trace("trade.trace.json")
    v = certify(trace, policy, MemoryState(), _cfg())
    if not isinstance(v, Certified):
        r.expect("certifier", "Certified", _outcome(v))
        return
    for env_name, outcome, before, ndev in (
        ("trade_deviation.env.json", "Halted", "buy", 1),
        ("trade_slot_deviation.env.json", "Halted", "quote", 1),
        ("trade_late_deviation.env.json", "RolledBack", "note", 1),
    ):
        env = parse_environment(fixture_text(env_name))
        ledger = Ledger()
        result = execute(trace, v.certificate, policy, env, ledger, SCENARIO_KEY)
        r.expect(f"{env_name}: outcome", outcome, result.realized.outcome.value)
        r.expect(f"{env_name}: halted before", before, result.halted_before)
        r.expect(f"{env_name}: deviations", ndev, len(result.realized.deviation_log))
        first_bad = [e.event_id for e in trace.events].index(before)
        later_irreversible = {e.event_id for e in trace.events[first_bad:] if e.irreversible}
        r.expect(f"{env_name}: nothing irreversible after the deviation", set(), later_irreversible & {e.event_id for e in env.realized_log})
        kinds = [e.record["type"] for e in ledger.entries]
        r.expect(f"{env_name}: ledger", (["compensation"] * len(result.realized.events) if outcome == "RolledBack" else []) + ["execution"], kinds)


def guardrail_baseline(r: ScenarioReport) -> None:
    gen = generator_from_dict(json.loads(fixture_text("guardrail.generator.json")))
    policy = load_policy("query_budget.policy.json")
    base = exact_measures(gen, load_config("baseline.certifier.json"), policy)
    sound = exact_measures(gen, load_config("masked.certifier.json"), policy)
    full = exact_measures(gen, load_config("sound.certifier.json"), policy)
    r.expect("final-output filter certifies impermissible mass (u > 0)", True, base.u > 0)
    r.expect("all of that mass is the generator's gap", base.gap, base.u)
    r.expect("same mask, sound: u = 0", Fraction(0), sound.u)
    r.expect("same mask, sound: m > 0", True, sound.m > 0)
    r.expect("full-trace sound certifier: u = 0 and m = 0", (Fraction(0), Fraction(0)), (full.u, full.m))
    r.expect("identity residuals", [Fraction(0)] * 3, [base.identity_residual, sound.identity_residual, full.identity_residual])


def certificate_laundering(r: ScenarioReport) -> None:
    policy = load_policy("exposure.policy.json")
    trace = load_trace("laundering.trace.json")
    low = _cfg(certifier_id="desk-checker", authority_tier=Tier.C2)
    v = certify(trace, policy, MemoryState(), low)
    r.expect("low-tier certifier escalates", "Escalate", _outcome(v))
    r.expect("required tier", "C4", v.required_tier.name if isinstance(v, Escalate) else None)
    cheap = replace(trace, declared_tier=Tier.C1)
    issued = certify(cheap, policy, MemoryState(), low)
    if isinstance(issued, Certified):
        r.expect("certificate for the relabelled trace does not cover the real one", False, check_certificate(issued.certificate, trace, policy, SCENARIO_KEY))
    r.expect("high-tier certifier", "Certified", _outcome(certify(trace, policy, MemoryState(), _cfg())))


REGISTRY: dict[str, Callable[[ScenarioReport], None]] = {
    "query_budget": query_budget,
    "impermissible_strategy": impermissible_strategy,
    "optimality_without_permissibility": optimality_without_permissibility,
    "exposure_noncompositional": exposure_noncompositional,
    "wrong_derivation": wrong_derivation,
    "escalation": escalation,
    "proof_carrying_trade": proof_carrying_trade,
    "persistent_memory_drift": persistent_memory_drift,
    "self_approval": self_approval,
    "stale_approval": stale_approval,
    "tool_deviation": tool_deviation,
    "guardrail_baseline": guardrail_baseline,
    "certificate_laundering": certificate_laundering,
}


def run_scenario(name: str) -> ScenarioReport:
    fn = REGISTRY.get(name)
    if fn is None:
        raise UnknownScenario(f"unknown scenario {name!r}; known: {', '.join(REGISTRY)}")
    report = ScenarioReport(name)
    fn(report)
    return report


def report_bytes(report: ScenarioReport) -> bytes:
    return canonical_bytes(report.to_dict())
