"""The certifier: (trace, policy, memory, config) -> certificate, rejection or escalation.

A sound certifier never looks at the oracle in :mod:`certgate.policy`. It
folds the trace through proof memory, asks memory for the facts each layer
needs and issues a certificate only when every obligation is witnessed. When
a needed fact is outside its observation mask or memory class it escalates.

Evidence that is contradicted (budget breached, replay mismatch, access
denied) leads to rejection; evidence that is missing but obtainable (masked
facts, stale approval, authority shortfall) leads to escalation.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Sequence, Union

from certgate import arith
from certgate.errors import CapabilityDenied, MemoryUnavailable, ParseError, ValidationError
from certgate.memory import (
    ApprovalFact,
    CounterFact,
    CounterKeysFact,
    Ledger,
    LedgerFact,
    MemoryClass,
    MemoryState,
    MonitorFact,
    ProvenanceFact,
    ViolationFact,
    close_obligations,
    query,
    update,
)
from certgate.policy import (
    CounterSpec,
    InfoFlowSpec,
    MonitorSpec,
    Pattern,
    PolicyLayer,
    PolicySystem,
    Predicate,
    TemporalSpec,
    iter_predicates,
)
from certgate.trace import (
    EventKind,
    ProposedTrace,
    Tier,
    TraceEvent,
    approval_subject_hash,
    canonical_bytes,
    canonical_hash,
    event_to_dict,
    load_json,
)

COMMIT_PREFIX = "commit:"


class ObservationMask(str, Enum):
    FULL_TRACE = "FullTrace"
    FINAL_EVENT_ONLY = "FinalEventOnly"
    EVENT_KINDS_ONLY = "EventKindsOnly"


class ComponentKind(str, Enum):
    ID = "Id"
    AUTH = "Auth"
    SOURCE = "Source"
    POLICY = "Policy"
    RISK = "Risk"
    COMPUTE = "Compute"
    PRIVACY = "Privacy"
    HUMAN = "Human"
    LINEAGE = "Lineage"


@dataclass(frozen=True)
class CertifierConfig:
    certifier_id: str
    authority_tier: Tier = Tier.C5
    memory_class: MemoryClass = MemoryClass.M2_Provenance
    observation_mask: ObservationMask = ObservationMask.FULL_TRACE
    mac_key: bytes = field(default=b"", repr=False)
    sound: bool = True


def config_from_dict(raw: Mapping[str, Any], mac_key: bytes = b"") -> CertifierConfig:
    try:
        return CertifierConfig(
            certifier_id=raw["certifier_id"],
            authority_tier=Tier.parse(raw.get("authority_tier", "C5")),
            memory_class=MemoryClass[raw.get("memory_class", "M2_Provenance")],
            observation_mask=ObservationMask(raw.get("observation_mask", "FullTrace")),
            mac_key=mac_key or str(raw.get("mac_key", "")).encode(),
            sound=bool(raw.get("sound", True)),
        )
    except (KeyError, ValueError) as exc:
        raise ValidationError("certifier", f"bad certifier config: {exc}") from None


@dataclass(frozen=True)
class CertificateComponent:
    component: ComponentKind
    claim: str
    evidence: tuple[str, ...] = ()
    layer_id: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "component": self.component.value,
            "claim": self.claim,
            "evidence": list(self.evidence),
            "layer_id": self.layer_id,
        }


@dataclass(frozen=True)
class Certificate:
    trace_hash: str
    policy_version: str
    components: tuple[CertificateComponent, ...]
    issued_tick: int
    certifier_id: str
    certifier_tier: Tier
    mac: str = ""

    def body(self) -> dict[str, Any]:
        return {
            "trace_hash": self.trace_hash,
            "policy_version": self.policy_version,
            "certifier_id": self.certifier_id,
            "certifier_tier": self.certifier_tier.name,
            "issued_tick": self.issued_tick,
            "components": [c.to_dict() for c in self.components],
        }

    def to_dict(self) -> dict[str, Any]:
        return {**self.body(), "mac": self.mac}

    def serialize(self) -> bytes:
        return canonical_bytes(self.to_dict())

    def kinds(self) -> set[ComponentKind]:
        return {c.component for c in self.components}


def certificate_from_dict(raw: Any) -> Certificate:
    if not isinstance(raw, dict):
        raise ParseError("certificate must be a JSON object")
    try:
        return Certificate(
            trace_hash=raw["trace_hash"],
            policy_version=raw["policy_version"],
            components=tuple(
                CertificateComponent(
                    ComponentKind(c["component"]), c["claim"], tuple(c.get("evidence", ())), c.get("layer_id")
                )
                for c in raw["components"]
            ),
            issued_tick=raw["issued_tick"],
            certifier_id=raw["certifier_id"],
            certifier_tier=Tier.parse(raw["certifier_tier"]),
            mac=raw.get("mac", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed certificate: {exc}") from None


def parse_certificate(data: bytes | str) -> Certificate:
    return certificate_from_dict(load_json(data, "certificate"))


def compute_mac(cert: Certificate, key: bytes) -> str:
    return hmac.new(key, canonical_bytes(cert.body()), hashlib.sha256).hexdigest()


@dataclass(frozen=True)
class Certified:
    certificate: Certificate
    outcome = "Certified"


@dataclass(frozen=True)
class Rejected:
    reasons: tuple[str, ...]
    outcome = "Rejected"


@dataclass(frozen=True)
class Escalate:
    reason: str
    required_tier: Tier
    outcome = "Escalate"


Verdict = Union[Certified, Rejected, Escalate]


def verdict_to_dict(verdict: Verdict) -> dict[str, Any]:
    if isinstance(verdict, Certified):
        return {"outcome": "Certified", "certificate": verdict.certificate.to_dict()}
    if isinstance(verdict, Rejected):
        return {"outcome": "Rejected", "reasons": list(verdict.reasons)}
    return {"outcome": "Escalate", "reason": verdict.reason, "required_tier": verdict.required_tier.name}


# ---------------------------------------------------------------------------
# memory-class requirements


def layer_memory_need(layer: PolicyLayer) -> MemoryClass:
    spec = layer.spec
    need = MemoryClass.M0_FiniteState
    if any(name == "compute_valid" for p in iter_predicates(layer) for name, _ in p.fields):
        need = MemoryClass.M2_Provenance
    if isinstance(spec, CounterSpec):
        need = max(need, MemoryClass.M1_Counter)
    elif isinstance(spec, TemporalSpec):
        if spec.pattern is Pattern.RESPONSE_WITHIN:
            need = max(need, MemoryClass.M1_Counter)
        if spec.gates_on_approval:
            need = max(need, MemoryClass.M2_Provenance)
    elif isinstance(spec, InfoFlowSpec):
        if spec.purpose_binding or spec.release_constraints:
            need = max(need, MemoryClass.M2_Provenance)
    return need


def _governs(layer: PolicyLayer, events: Sequence[TraceEvent], by_id) -> bool:
    spec = layer.spec
    if isinstance(spec, InfoFlowSpec):
        return any(
            e.data_class is not None or e.evidence_refs or e.kind is EventKind.RELEASE for e in events
        )
    if isinstance(spec, MonitorSpec) and (
        spec.initial not in spec.accepting or spec.default[spec.initial].value == "Reject"
    ):
        return True
    return any(p.matches(e, by_id) for p in iter_predicates(layer) for e in events)


def _component_for(layer: PolicyLayer) -> ComponentKind:
    spec = layer.spec
    if isinstance(spec, CounterSpec):
        return ComponentKind.RISK
    if isinstance(spec, InfoFlowSpec):
        return ComponentKind.PRIVACY
    if isinstance(spec, TemporalSpec) and spec.gates_on_approval:
        return ComponentKind.HUMAN
    return ComponentKind.POLICY


def commitment(event: TraceEvent) -> str:
    return COMMIT_PREFIX + hashlib.sha256(canonical_bytes(event_to_dict(event))).hexdigest()


def seed_memory(memory: MemoryState) -> MemoryState:
    """Carry cross-trace facts, drop per-trace automaton progress.

    Prior counter entries with negative deltas are dropped so that history can
    only make the certifier stricter, never more permissive than the trace
    itself warrants.
    """
    counters = {k: tuple(e for e in v if e[1] > 0) for k, v in memory.counters.items()}
    return MemoryState(
        monitor_states={},
        counters={k: v for k, v in counters.items() if v},
        provenance=memory.provenance,
        approvals=memory.approvals,
        obligations={},
        violations={},
        last_updated_tick=memory.last_updated_tick,
    )


# ---------------------------------------------------------------------------
# certify


class _Findings:
    def __init__(self) -> None:
        self.rejections: list[str] = []
        self.escalations: list[tuple[str, Tier]] = []
        self.components: list[CertificateComponent] = []

    def reject(self, reason: str) -> None:
        self.rejections.append(reason)

    def escalate(self, reason: str, tier: Tier) -> None:
        self.escalations.append((reason, tier))


def certify(
    trace: ProposedTrace,
    policy: PolicySystem,
    memory: MemoryState,
    cfg: CertifierConfig,
    ledger: Ledger | None = None,
) -> Verdict:
    if cfg.memory_class >= MemoryClass.M3_Persistent and ledger is None:
        raise MemoryUnavailable(f"{cfg.certifier_id} is configured for persistent memory but has no ledger")
    if trace.requested_policy_version != policy.version:
        return Rejected(
            (f"policy version mismatch: trace requests {trace.requested_policy_version!r}, policy is {policy.version!r}",)
        )
    if trace.proposer_id == cfg.certifier_id:
        return Rejected((f"self-approval: proposer {trace.proposer_id!r} cannot certify its own trace",))
    if trace.declared_tier > cfg.authority_tier:
        return Escalate(
            f"declared tier {trace.declared_tier.name} exceeds certifier authority {cfg.authority_tier.name}",
            trace.declared_tier,
        )

    findings = _Findings()
    if cfg.observation_mask is ObservationMask.FULL_TRACE:
        issued = _check_events(trace, trace.events, policy, memory, cfg, ledger, findings)
    elif not cfg.sound:
        # baseline guardrail: judge only what it can see, as if that were everything
        issued = _check_events(trace, _project(trace.events, cfg.observation_mask), policy, memory, cfg, ledger, findings)
    else:
        issued = _check_masked(trace, policy, memory, cfg, findings)

    if findings.rejections:
        return Rejected(tuple(findings.rejections))
    if findings.escalations:
        required = max([trace.declared_tier] + [t for _, t in findings.escalations])
        return Escalate("; ".join(r for r, _ in findings.escalations), required)
    return Certified(_issue(trace, policy, cfg, findings.components, issued, ledger))


def _project(events: Sequence[TraceEvent], mask: ObservationMask) -> tuple[TraceEvent, ...]:
    if mask is ObservationMask.FINAL_EVENT_ONLY:
        return (replace(events[-1], evidence_refs=()),)
    return tuple(
        TraceEvent(event_id=e.event_id, tick=0, kind=e.kind, principal="?", component="?") for e in events
    )


def _issue(trace, policy, cfg, components, issued_tick, ledger) -> Certificate:
    principals = sorted({e.principal for e in trace.events})
    stack = [
        CertificateComponent(ComponentKind.ID, f"proposer={trace.proposer_id}; principals={','.join(principals)}"),
        CertificateComponent(
            ComponentKind.POLICY,
            f"policy {policy.version} layers={','.join(l.layer_id for l in policy.layers)}",
        ),
        *components,
    ]
    lineage = f"version={policy.version}; source={policy.source}; effective_from={policy.effective_from}"
    if cfg.memory_class >= MemoryClass.M3_Persistent and ledger is not None:
        prior = query(MemoryState(), LedgerFact(canonical_hash(trace).hex()), cfg.memory_class, ledger)
        lineage += f"; ledger_head={ledger.head_hash}; prior_entries={len(prior)}"
    stack.append(CertificateComponent(ComponentKind.LINEAGE, lineage))
    cert = Certificate(
        trace_hash=canonical_hash(trace).hex(),
        policy_version=policy.version,
        components=tuple(stack),
        issued_tick=issued_tick,
        certifier_id=cfg.certifier_id,
        certifier_tier=cfg.authority_tier,
    )
    return replace(cert, mac=compute_mac(cert, cfg.mac_key))


def _check_events(
    trace: ProposedTrace,
    events: Sequence[TraceEvent],
    policy: PolicySystem,
    memory: MemoryState,
    cfg: CertifierConfig,
    ledger: Ledger | None,
    out: _Findings,
) -> int:
    """Fold the visible events through proof memory and collect findings."""
    by_id = {e.event_id: e for e in events}
    mclass = cfg.memory_class

    usable: list[PolicyLayer] = []
    for layer in policy.layers:
        if not _governs(layer, events, by_id):
            continue
        need = layer_memory_need(layer)
        if mclass < need:
            out.escalate(f"layer {layer.layer_id} needs {need.name} memory, certifier has {mclass.name}", layer.tier)
        else:
            usable.append(layer)
    has_compute = any(e.kind is EventKind.COMPUTATION for e in events)
    if has_compute and mclass < MemoryClass.M2_Provenance:
        out.escalate("computation replay needs provenance memory", trace.declared_tier)
    if out.escalations and cfg.sound:
        return memory.last_updated_tick

    working = PolicySystem(policy.version, policy.source, policy.effective_from, tuple(usable))
    subject = approval_subject_hash(trace).hex()
    human_layers = [l for l in usable if isinstance(l.spec, TemporalSpec) and l.spec.gates_on_approval]
    counter_layers = [l for l in usable if isinstance(l.spec, CounterSpec)]
    flow_layers = [l for l in usable if isinstance(l.spec, InfoFlowSpec)]
    evidence: dict[str, list[str]] = {l.layer_id: [] for l in usable}

    state = seed_memory(memory)
    try:
        for ev in events:
            state = update(state, ev, working, by_id)
            for layer in usable:
                if any(p.matches(ev, by_id) for p in iter_predicates(layer)):
                    evidence[layer.layer_id].append(ev.event_id)
            for layer in counter_layers:
                _check_counters(layer, ev, state, mclass, out)
            for layer in flow_layers:
                _check_flow(layer, ev, state, mclass, out, evidence)
            for layer in human_layers:
                _check_approval(layer, ev, trace, subject, state, by_id, mclass, out)
        state = close_obligations(state, working)
        for layer in usable:
            if isinstance(layer.spec, (MonitorSpec, TemporalSpec)):
                hit = query(state, ViolationFact(layer.layer_id), mclass)
                if hit is not None:
                    out.reject(f"layer {layer.layer_id}: {hit[1]} (at {hit[0]})")
            if isinstance(layer.spec, MonitorSpec):
                final = query(state, MonitorFact(layer.layer_id), mclass) or layer.spec.initial
                if final not in layer.spec.accepting:
                    out.reject(f"layer {layer.layer_id}: trace ends in non-accepting state {final!r}")
    except CapabilityDenied as exc:  # a layer asked for more than its class allows
        out.escalate(str(exc), trace.declared_tier)
        return state.last_updated_tick

    _check_compute(events, by_id, out)

    for layer in usable:
        out.components.append(
            CertificateComponent(
                _component_for(layer),
                f"{layer.kind.value} layer {layer.layer_id} satisfied",
                _layer_evidence(layer, events, evidence[layer.layer_id]),
                layer.layer_id,
            )
        )
    retrievals = tuple(e.event_id for e in events if e.kind is EventKind.RETRIEVAL)
    if retrievals:
        out.components.append(CertificateComponent(ComponentKind.SOURCE, "evidence retrieved and registered", retrievals))
    computations = tuple(e.event_id for e in events if e.kind in (EventKind.COMPUTATION, EventKind.CLAIM) and arith.compute_status(e, by_id) is not None)
    if computations:
        out.components.append(CertificateComponent(ComponentKind.COMPUTE, "replayed exactly", computations))
    return max(state.last_updated_tick, memory.last_updated_tick)


def _layer_evidence(layer: PolicyLayer, events, matched: list[str]) -> tuple[str, ...]:
    if isinstance(layer.spec, InfoFlowSpec):
        # privacy evidence is committed, not disclosed
        return tuple(commitment(e) for e in events if e.data_class is not None)
    return tuple(matched)


def _check_counters(layer: PolicyLayer, ev: TraceEvent, state: MemoryState, mclass, out: _Findings) -> None:
    for c in layer.spec.counters:
        for key in query(state, CounterKeysFact(c.name), mclass):
            total = query(state, CounterFact(c.name, key[1], key[2], ev.tick, c.window), mclass)
            if total > c.bound:
                out.reject(f"layer {layer.layer_id}: {c.name}[{key[1]},{key[2]}]={total}>{c.bound} at {ev.event_id}")
                return


def _check_flow(layer: PolicyLayer, ev: TraceEvent, state: MemoryState, mclass, out: _Findings, evidence) -> None:
    spec: InfoFlowSpec = layer.spec
    if ev.data_class is not None:
        status = spec.authorization(ev)
        access = f"({ev.principal},{ev.component},{ev.data_class},{ev.purpose})"
        if status == "denied":
            out.reject(f"layer {layer.layer_id}: access {access} not in authorization table at {ev.event_id}")
        elif status == "pending":
            out.escalate(f"layer {layer.layer_id}: access {access} awaits authorization review at {ev.event_id}", max(layer.tier, Tier.C3))
    if not (spec.purpose_binding or (spec.release_constraints and ev.kind is EventKind.RELEASE)):
        return
    sources = [(ref, query(state, ProvenanceFact(ref), mclass)) for ref in ev.evidence_refs]
    sources = [(ref, p) for ref, p in sources if p is not None]
    if spec.purpose_binding:
        for ref, (_, _, purpose) in sources:
            if purpose is not None and ev.purpose != purpose:
                out.reject(f"layer {layer.layer_id}: {ref} retrieved for {purpose!r} reused for {ev.purpose!r} at {ev.event_id}")
    if ev.kind is EventKind.RELEASE and spec.release_constraints:
        classes = {ev.data_class} | {p[1] for _, p in sources}
        for dc in sorted(c for c in classes if c in spec.release_constraints):
            out.reject(f"layer {layer.layer_id}: release of {dc!r} at {ev.event_id}")


def _check_approval(layer, ev, trace, subject, state, by_id, mclass, out: _Findings) -> None:
    spec: TemporalSpec = layer.spec
    if not spec.b.matches(ev, by_id):
        return
    approval = query(state, ApprovalFact(subject), mclass)
    problem = None
    if approval is None:
        problem = "no approval bound to this trace"
    elif approval.approver == trace.proposer_id:
        out.reject(f"layer {layer.layer_id}: approval by the proposer itself at {ev.event_id}")
        return
    elif not approval.covers(ev.tick):
        problem = f"approval valid for ticks [{approval.valid_from},{approval.valid_until}] does not cover {ev.tick}"
    if problem is None:
        return
    reason = f"layer {layer.layer_id}: human component unwitnessed at {ev.event_id}: {problem}"
    if layer.tier >= Tier.C4:
        out.escalate(reason, layer.tier)
    else:
        out.reject(reason)


def _check_compute(events, by_id, out: _Findings) -> None:
    for ev in events:
        if ev.kind is EventKind.COMPUTATION:
            try:
                got = arith.replay(ev, by_id)
            except arith.ComputeError as exc:
                out.reject(f"compute: {ev.event_id} cannot be replayed ({exc})")
                continue
            claimed = ev.params.get(arith.RESULT)
            try:
                ok = claimed is not None and got == arith.as_fraction(claimed)
            except arith.ComputeError:
                ok = False
            if not ok:
                out.reject(f"compute: {ev.event_id} claims {claimed} but replays to {got}")
        elif ev.kind is EventKind.CLAIM and arith.compute_status(ev, by_id) is False:
            out.reject(f"compute: claim {ev.event_id} value {ev.params.get(arith.CLAIM_VALUE)} disagrees with its derivation")


# ---------------------------------------------------------------------------
# sound certification under an observation mask


def _decide(pred: Predicate, kind: str) -> bool | None:
    """Predicate outcome when only the event kind is visible; None if unknown."""
    kinds = pred.kinds
    if kinds is not None and kind not in kinds:
        return False
    if pred.kind_only:
        return True if kinds is None or kind in kinds else False
    return None


def _check_masked(trace: ProposedTrace, policy: PolicySystem, memory: MemoryState, cfg, out: _Findings) -> int:
    if cfg.observation_mask is ObservationMask.FINAL_EVENT_ONLY:
        if policy.layers:
            out.escalate("only the final event is observable; trace-level obligations cannot be witnessed", trace.declared_tier)
        elif trace.events[-1].kind is EventKind.COMPUTATION:
            out.escalate("computation inputs are not observable", trace.declared_tier)
        return memory.last_updated_tick

    kinds = [e.kind.value for e in trace.events]
    if "Computation" in kinds:
        out.escalate("computation inputs are masked", trace.declared_tier)
    for layer in policy.layers:
        spec = layer.spec
        masked = f"layer {layer.layer_id} depends on masked fields"
        if isinstance(spec, MonitorSpec):
            q = spec.initial
            for k in kinds:
                outcomes = [(_decide(t.on, k), t) for t in spec.transitions if t.source == q]
                if any(o is None for o, _ in outcomes):
                    out.escalate(masked, layer.tier)
                    break
                fired = [t for o, t in outcomes if o]
                if fired:
                    q = fired[0].target
                elif spec.default[q].value == "Reject":
                    out.reject(f"layer {layer.layer_id}: event kind {k} not allowed in state {q!r}")
                    break
            else:
                if q not in spec.accepting:
                    out.reject(f"layer {layer.layer_id}: kind sequence ends in non-accepting state {q!r}")
        elif isinstance(spec, CounterSpec):
            totals = {c.name: 0 for c in spec.counters}
            unknown = False
            for k in kinds:
                for upd in spec.updates:
                    fires = _decide(upd.on, k)
                    if fires is False:
                        continue
                    if fires is None or not (upd.delta == "count" or (isinstance(upd.delta, int) and upd.delta >= 0)):
                        unknown = True
                        continue
                    totals[upd.counter] += upd.amount(trace.events[0])  # constant amount
            # with non-negative deltas the total bounds every window and every key
            if unknown or any(totals[c.name] > c.bound for c in spec.counters):
                out.escalate(masked + " (counter keys, ticks or amounts)", layer.tier)
        elif isinstance(spec, TemporalSpec):
            a = [_decide(spec.a, k) for k in kinds]
            b = [_decide(spec.b, k) for k in kinds]
            if None in a or None in b:
                out.escalate(masked, layer.tier)
            elif spec.pattern is Pattern.RESPONSE_WITHIN:
                if any(a):
                    out.escalate(f"layer {layer.layer_id} needs event ticks", layer.tier)
            elif spec.pattern is Pattern.PRECEDENCE:
                for i, hit in enumerate(b):
                    if hit and not any(a[:i]):
                        out.reject(f"layer {layer.layer_id}: required predecessor missing before event #{i}")
                        break
                else:
                    if spec.gates_on_approval and any(b):
                        out.escalate(f"layer {layer.layer_id}: approval binding is masked", max(layer.tier, Tier.C4))
            else:
                first_b = next((i for i, hit in enumerate(b) if hit), None)
                if first_b is not None and any(a[first_b + 1 :]):
                    out.reject(f"layer {layer.layer_id}: forbidden event kind after trigger")
        else:
            out.escalate(masked + " (principals, data classes, purposes)", layer.tier)
        if not out.rejections and not out.escalations:
            out.components.append(
                CertificateComponent(_component_for(layer), f"{layer.kind.value} layer {layer.layer_id} satisfied on event kinds", (), layer.layer_id)
            )
    return memory.last_updated_tick


# ---------------------------------------------------------------------------
# independent certificate check


def check_certificate_detail(
    cert: Certificate,
    trace: ProposedTrace,
    policy: PolicySystem,
    key: bytes,
    disclosures: Mapping[str, bytes] | None = None,
) -> list[str]:
    """Every reason the certificate fails to authorize ``trace``; empty if it passes."""
    problems = []
    body = canonical_bytes(cert.body())
    expected_mac = hmac.new(key, body, hashlib.sha256).hexdigest()
    if not hmac.compare_digest(expected_mac, cert.mac or ""):
        problems.append("authenticator does not verify")
    if cert.trace_hash != hashlib.sha256(canonical_bytes(_trace_doc(trace))).hexdigest():
        problems.append("certificate is bound to a different trace")
    if cert.policy_version != policy.version or trace.requested_policy_version != policy.version:
        problems.append("policy version does not match")
    if cert.certifier_id == trace.proposer_id:
        problems.append("certifier and proposer are the same role")
    if cert.certifier_tier < trace.declared_tier:
        problems.append("certifier tier is below the trace's declared tier")
    ids = {e.event_id for e in trace.events}
    disclosures = disclosures or {}
    for comp in cert.components:
        for item in comp.evidence:
            if item.startswith(COMMIT_PREFIX):
                payload = disclosures.get(item)
                if payload is not None and COMMIT_PREFIX + hashlib.sha256(payload).hexdigest() != item:
                    problems.append(f"disclosed payload does not open commitment {item[:20]}...")
            elif item not in ids:
                problems.append(f"evidence {item!r} does not resolve in the trace")
    return problems


def check_certificate(
    cert: Certificate,
    trace: ProposedTrace,
    policy: PolicySystem,
    key: bytes,
    disclosures: Mapping[str, bytes] | None = None,
) -> bool:
    return not check_certificate_detail(cert, trace, policy, key, disclosures)


def _trace_doc(trace: ProposedTrace) -> dict[str, Any]:
    from certgate.trace import trace_to_dict

    return trace_to_dict(trace)
