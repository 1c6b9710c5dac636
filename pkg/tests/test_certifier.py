import json
import random
from dataclasses import replace

import pytest

from certgate.certifier import (
    Certified,
    ComponentKind,
    Escalate,
    ObservationMask,
    Rejected,
    certificate_from_dict,
    certify,
    check_certificate,
    check_certificate_detail,
    commitment,
    config_from_dict,
    parse_certificate,
    verdict_to_dict,
)
from certgate.errors import MemoryUnavailable, ParseError, ValidationError
from certgate.memory import Ledger, MemoryClass, MemoryState
from certgate.policy import evaluate
from certgate.randomgen import random_config, random_policy, random_trace
from certgate.scenarios import load_policy, load_trace
from certgate.trace import Tier, event_to_dict, canonical_bytes

from conftest import KEY, ev, make_cfg, make_trace, queries

QB = load_policy("query_budget.policy.json")


def test_exposure_rejected_at_third_order():
    v = certify(load_trace("exposure.trace.json"), load_policy("exposure.policy.json"), MemoryState(), make_cfg())
    assert isinstance(v, Rejected)
    assert any("3000>2000 at o3" in r for r in v.reasons)


def test_vacuous_obligations():
    trace = make_trace([ev("log", 0, "MemoryWrite", component="journal")], version="qb-v1", tier=Tier.C0)
    v = certify(trace, QB, MemoryState(), make_cfg())
    assert isinstance(v, Certified)
    assert v.certificate.kinds() == {ComponentKind.ID, ComponentKind.POLICY, ComponentKind.LINEAGE}


def test_pending_row_escalates():
    v = certify(load_trace("escalation.trace.json"), load_policy("filing.policy.json"), MemoryState(), make_cfg())
    assert isinstance(v, Escalate)
    assert "awaits authorization review" in v.reason
    assert v.required_tier >= Tier.C3


def _budget_break_with_clean_release():
    events = queries(6) + [ev("out", 7, "Release", component="report", resource="R")]
    return make_trace(events, version="qb-v1")


def test_final_event_baseline_certifies_impermissible():
    trace = _budget_break_with_clean_release()
    assert not evaluate(QB, trace).permitted
    baseline = make_cfg(observation_mask=ObservationMask.FINAL_EVENT_ONLY, sound=False, memory_class=MemoryClass.M1_Counter)
    assert isinstance(certify(trace, QB, MemoryState(), baseline), Certified)
    sound = replace(baseline, sound=True)
    assert isinstance(certify(trace, QB, MemoryState(), sound), Escalate)
    assert isinstance(certify(trace, QB, MemoryState(), make_cfg()), Rejected)


def test_version_mismatch_and_self_approval():
    trace = load_trace("query5.trace.json")
    v = certify(trace, load_policy("query_budget_v2.policy.json"), MemoryState(), make_cfg())
    assert isinstance(v, Rejected) and "policy version mismatch" in v.reasons[0]
    v = certify(trace, QB, MemoryState(), make_cfg(certifier_id=trace.proposer_id))
    assert isinstance(v, Rejected) and "self-approval" in v.reasons[0]


def test_tier_shortfall_escalates():
    trace = replace(load_trace("query5.trace.json"), declared_tier=Tier.C4)
    v = certify(trace, QB, MemoryState(), make_cfg(authority_tier=Tier.C2))
    assert isinstance(v, Escalate) and v.required_tier is Tier.C4


def test_m0_cannot_witness_counter():
    v = certify(load_trace("query5.trace.json"), QB, MemoryState(), make_cfg(memory_class=MemoryClass.M0_FiniteState))
    assert isinstance(v, Escalate)


def test_m3_needs_ledger_and_records_head():
    cfg = make_cfg(memory_class=MemoryClass.M3_Persistent)
    trace = load_trace("query5.trace.json")
    with pytest.raises(MemoryUnavailable):
        certify(trace, QB, MemoryState(), cfg)
    ledger = Ledger()
    ledger.append(trace_hash="aa" * 32, record={"type": "note"})
    v = certify(trace, QB, MemoryState(), cfg, ledger)
    lineage = next(c for c in v.certificate.components if c.component is ComponentKind.LINEAGE)
    assert f"ledger_head={ledger.head_hash}" in lineage.claim


def test_prior_memory_counts_toward_budget():
    prior = certify(load_trace("query5.trace.json"), QB, MemoryState(), make_cfg())
    assert isinstance(prior, Certified)
    from certgate.memory import update

    state = MemoryState()
    for q in queries(3):
        state = update(state, q, QB)
    later = make_trace(queries(3, start=3), version="qb-v1")
    # three earlier plus three now exceed five within the window
    v = certify(later, QB, state, make_cfg())
    assert isinstance(v, Rejected)


def test_check_certificate_round_trip_and_edits():
    policy = load_policy("trade.policy.json")
    trace = load_trace("trade.trace.json")
    cert = certify(trace, policy, MemoryState(), make_cfg()).certificate
    assert check_certificate(cert, trace, policy, KEY)
    again = parse_certificate(cert.serialize())
    assert again == cert and check_certificate(again, trace, policy, KEY)
    buy = trace.events[2]
    edited = replace(trace, events=(*trace.events[:2], replace(buy, params={**buy.params, "qty": 101}), trace.events[3]))
    assert "certificate is bound to a different trace" in check_certificate_detail(cert, edited, policy, KEY)
    assert not check_certificate(cert, trace, policy, b"other-key")
    forged = replace(cert, certifier_id=trace.proposer_id)
    assert "certifier and proposer are the same role" in check_certificate_detail(forged, trace, policy, KEY)
    low = replace(cert, certifier_tier=Tier.C1)
    assert any("tier" in p for p in check_certificate_detail(low, trace, policy, KEY))


def test_evidence_must_resolve():
    policy = load_policy("trade.policy.json")
    trace = load_trace("trade.trace.json")
    cert = certify(trace, policy, MemoryState(), make_cfg()).certificate
    comp = cert.components[0]
    bad = replace(cert, components=(replace(comp, evidence=("ghost",)), *cert.components[1:]))
    from certgate.certifier import compute_mac

    bad = replace(bad, mac=compute_mac(bad, KEY))
    assert check_certificate_detail(bad, trace, policy, KEY) == ["evidence 'ghost' does not resolve in the trace"]


def test_privacy_commitments():
    policy = load_policy("trade.policy.json")
    trace = load_trace("trade.trace.json")
    cert = certify(trace, policy, MemoryState(), make_cfg()).certificate
    privacy = next(c for c in cert.components if c.component is ComponentKind.PRIVACY)
    assert privacy.evidence == (commitment(trace.events[0]),)
    payload = canonical_bytes(event_to_dict(trace.events[0]))
    assert check_certificate(cert, trace, policy, KEY, {privacy.evidence[0]: payload})
    assert not check_certificate(cert, trace, policy, KEY, {privacy.evidence[0]: payload + b" "})
    assert check_certificate(cert, trace, policy, KEY)  # undisclosed stays opaque


def test_certificate_parse_errors():
    with pytest.raises(ParseError):
        certificate_from_dict({"trace_hash": "x"})
    with pytest.raises(ValidationError):
        config_from_dict({"certifier_id": "c", "memory_class": "M9"})


def _paired_kinds_only():
    same = make_trace(queries(6), version="qb-v1")
    spread = make_trace([replace(q, resource=f"R{i}") for i, q in enumerate(queries(6))], version="qb-v1")
    return same, spread


def test_masked_pairs_escalate_both():
    same, spread = _paired_kinds_only()
    assert not evaluate(QB, same).permitted and evaluate(QB, spread).permitted
    for mask in (ObservationMask.EVENT_KINDS_ONLY, ObservationMask.FINAL_EVENT_ONLY):
        cfg = make_cfg(observation_mask=mask)
        assert isinstance(certify(same, QB, MemoryState(), cfg), Escalate)
        assert isinstance(certify(spread, QB, MemoryState(), cfg), Escalate)


def test_masked_certifier_can_certify_on_kinds_alone():
    cfg = make_cfg(observation_mask=ObservationMask.EVENT_KINDS_ONLY)
    v = certify(make_trace(queries(3), version="qb-v1"), QB, MemoryState(), cfg)
    assert isinstance(v, Certified)


def test_properties_over_random_inputs():
    rng = random.Random(31)
    for _ in range(2000):
        trace = random_trace(rng)
        policy = random_policy(rng)
        cfg = random_config(rng)
        v = certify(trace, policy, MemoryState(), cfg)
        if isinstance(v, Certified):
            assert evaluate(policy, trace).permitted
            assert v.certificate.certifier_tier >= trace.declared_tier
            assert check_certificate(v.certificate, trace, policy, cfg.mac_key)
        if cfg.certifier_id == trace.proposer_id and trace.requested_policy_version == policy.version:
            assert isinstance(v, Rejected)
        again = certify(trace, policy, MemoryState(), cfg)
        assert json.dumps(verdict_to_dict(v), sort_keys=True) == json.dumps(verdict_to_dict(again), sort_keys=True)


def test_self_certification_always_rejected():
    rng = random.Random(32)
    for _ in range(500):
        trace = random_trace(rng)
        policy = random_policy(rng)
        cfg = replace(random_config(rng), certifier_id=trace.proposer_id)
        assert isinstance(certify(trace, policy, MemoryState(), cfg), Rejected)
