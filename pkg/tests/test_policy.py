import itertools
import json
import random
from dataclasses import replace

import pytest

from certgate.errors import DuplicateLayerId, NondeterministicMonitor, ParseError, ValidationError
from certgate.policy import (
    PolicySystem,
    evaluate,
    layer_from_dict,
    lint_report,
    local_action_permitted,
    parse_policy,
    policy_from_dict,
    serialize_policy,
    strengthen,
)
from certgate.randomgen import random_policy, random_policy_dict, random_trace
from certgate.scenarios import fixture_text, load_policy, load_trace
from certgate.trace import prefix

from conftest import ev, make_trace, queries

ALWAYS = {
    "layer_id": "always",
    "kind": "Monitor",
    "tier": "C0",
    "spec": {"states": ["s"], "initial": "s", "accepting": ["s"], "transitions": [], "default": {"s": "SelfLoop"}},
}


def budget_layer(bound, layer_id="budget3"):
    return layer_from_dict(
        {
            "layer_id": layer_id,
            "kind": "Counter",
            "tier": "C1",
            "spec": {
                "counters": [{"name": "q", "window": 10, "bound": bound}],
                "updates": [{"on": {"kind": "Query"}, "counter": "q", "delta": "count"}],
            },
        }
    )


def test_six_queries_violate_at_sixth():
    policy = load_policy("query_budget.policy.json")
    verdict = evaluate(policy, load_trace("query6.trace.json"))
    assert not verdict.permitted
    assert verdict.per_layer[0].violation.event_id == "q5"
    assert verdict.per_layer[0].violation.reason == "queries[agent,R]=6>5"


def test_under_budget_trace_permitted():
    policy = load_policy("query_budget.policy.json")
    trace = make_trace(
        [
            ev("r", 0, "Retrieval", component="vault", resource="R"),
            ev("c", 1, "Claim", params={"value": 1}, evidence_refs=("r",)),
        ],
        version="qb-v1",
    )
    assert evaluate(policy, trace).permitted


def test_exposure_rejected_at_third_order():
    policy = load_policy("exposure.policy.json")
    verdict = evaluate(policy, load_trace("exposure.trace.json"))
    assert not verdict.permitted
    assert verdict.failing() == ["sector_exposure"]
    assert verdict.per_layer[1].violation.event_id == "o3"


def test_window_is_half_open():
    policy = load_policy("query_budget.policy.json")
    # six queries spread over exactly 10 ticks: the first has left the window
    assert evaluate(policy, make_trace(queries(6, step=2), version="qb-v1")).permitted
    assert not evaluate(policy, make_trace(queries(6, step=1), version="qb-v1")).permitted
    # different resources are separate counters
    mixed = queries(3, resource="R") + [replace(q, event_id=f"x{i}", tick=3 + i) for i, q in enumerate(queries(3, resource="S"))]
    assert evaluate(policy, make_trace(mixed, version="qb-v1")).permitted


def test_query_budget_fixture_shape():
    policy = load_policy("query_budget.policy.json")
    assert len(policy.layers) == 1
    assert policy.layers[0].kind.value == "Counter"
    assert policy.layers[0].spec.counters[0].bound == 5


def test_overlapping_monitor_rejected():
    doc = {
        "version": "m",
        "source": "s",
        "effective_from": 0,
        "layers": [
            {
                "layer_id": "m1",
                "kind": "Monitor",
                "tier": "C1",
                "spec": {
                    "states": ["a", "b"],
                    "initial": "a",
                    "accepting": ["a", "b"],
                    "transitions": [
                        {"from": "a", "on": {"kind": "Query"}, "to": "b"},
                        {"from": "a", "on": {"kind": ["Query", "Claim"], "resource": "R"}, "to": "a"},
                    ],
                    "default": {"a": "SelfLoop", "b": "SelfLoop"},
                },
            }
        ],
    }
    with pytest.raises(NondeterministicMonitor):
        parse_policy(json.dumps(doc))
    report = lint_report(doc)
    assert not report["ok"] and report["layers"][0]["deterministic"] is False
    # disjoint resources make it deterministic again
    doc["layers"][0]["spec"]["transitions"][0]["on"]["resource"] = "S"
    parse_policy(json.dumps(doc))


@pytest.mark.parametrize(
    "patch, exc",
    [
        (lambda d: d["layers"].append(dict(d["layers"][0])), ValidationError),
        (lambda d: d["layers"][0]["spec"]["counters"][0].update(bound=-1), ValidationError),
        (lambda d: d["layers"][0].update(kind="Oracle"), ValidationError),
        (lambda d: d["layers"][0]["spec"]["updates"][0]["on"].update(kind="Teleport"), ValidationError),
        (lambda d: d["layers"][0]["spec"]["updates"][0]["on"].update(params={"observed": 1}), ValidationError),
        (lambda d: d.pop("version"), ValidationError),
    ],
)
def test_policy_validation(patch, exc):
    doc = json.loads(fixture_text("query_budget.policy.json"))
    patch(doc)
    with pytest.raises(exc):
        parse_policy(json.dumps(doc))


def test_malformed_policy_is_parse_error():
    with pytest.raises(ParseError):
        parse_policy("[1, 2")


# layered finance fixture: one layer of each kind

def _finance_trace(with_approval=True):
    events = [
        ev("res", 0, "Retrieval", component="research", resource="SEMI", data_class="research", purpose="trading"),
        ev("ok", 1, "Approval", principal="risk", component="workflow"),
        ev("o1", 2, "ExecutionCall", component="broker", resource="SEMI", purpose="trading", quantity_deltas={"exposure": 1000}, evidence_refs=("res",)),
        ev("o2", 3, "ExecutionCall", component="broker", resource="SEMI", quantity_deltas={"exposure": 500}),
    ]
    if not with_approval:
        events.pop(1)
    return make_trace(events, version="lf-v1")


def test_layered_finance_conjunction():
    policy = load_policy("layered_finance.policy.json")
    assert [layer.kind.value for layer in policy.layers] == ["Monitor", "Counter", "Temporal", "InfoFlow"]
    assert evaluate(policy, _finance_trace()).permitted
    verdict = evaluate(policy, _finance_trace(with_approval=False))
    assert not verdict.permitted
    assert verdict.failing() == ["pre_trade_approval"]


def test_local_check_is_not_compositional():
    policy = load_policy("exposure.policy.json")
    trace = load_trace("exposure.trace.json")
    assert all(local_action_permitted(policy, e) for e in trace.events)
    assert not evaluate(policy, trace).permitted


def test_temporal_patterns():
    def temporal(pattern, a, b, k=0):
        return policy_from_dict(
            {
                "version": "t",
                "source": "s",
                "effective_from": 0,
                "layers": [{"layer_id": "T", "kind": "Temporal", "tier": "C1", "spec": {"pattern": pattern, "a": a, "b": b, "k": k}}],
            }
        )

    q, c = {"kind": "Query"}, {"kind": "Claim"}
    qc = [ev("q", 0, "Query"), ev("c", 3, "Claim")]
    cq = [ev("c", 0, "Claim"), ev("q", 3, "Query")]
    assert evaluate(temporal("Precedence", q, c), qc).permitted
    assert not evaluate(temporal("Precedence", q, c), cq).permitted
    assert not evaluate(temporal("AbsenceAfter", q, c), cq).permitted
    assert evaluate(temporal("AbsenceAfter", q, c), qc).permitted
    assert evaluate(temporal("ResponseWithin", q, c, 3), qc).permitted
    assert not evaluate(temporal("ResponseWithin", q, c, 2), qc).permitted


def test_response_within_not_prefix_closed():
    policy = policy_from_dict(
        {
            "version": "t",
            "source": "s",
            "effective_from": 0,
            "layers": [
                {"layer_id": "T", "kind": "Temporal", "tier": "C1", "spec": {"pattern": "ResponseWithin", "a": {"kind": "Query"}, "b": {"kind": "Claim"}, "k": 5}}
            ],
        }
    )
    full = make_trace([ev("q", 0, "Query"), ev("c", 2, "Claim")])
    assert not evaluate(policy, prefix(full, 1)).permitted
    assert evaluate(policy, full).permitted


def test_info_flow_rules():
    policy = load_policy("layered_finance.policy.json")
    wrong_purpose = [ev("r", 0, "Retrieval", component="research", data_class="research", purpose="marketing")]
    assert evaluate(policy, wrong_purpose).failing() == ["research_access"]
    laundering = [
        ev("r", 0, "Retrieval", component="research", data_class="research", purpose="trading"),
        ev("m", 1, "ToolCall", component="mail", purpose="marketing", evidence_refs=("r",)),
    ]
    assert evaluate(policy, laundering).failing() == ["research_access"]
    release = [ev("r", 0, "Release", component="research", data_class="research", purpose="trading")]
    assert evaluate(policy, release).failing() == ["research_access"]


def test_strengthen_neutral_element():
    rng = random.Random(3)
    for _ in range(100):
        policy = random_policy(rng)
        stronger = strengthen(policy, layer_from_dict(ALWAYS), "v-next")
        for _ in range(5):
            trace = random_trace(rng)
            assert evaluate(policy, trace).permitted == evaluate(stronger, trace).permitted


def test_strengthen_errors():
    policy = load_policy("query_budget.policy.json")
    with pytest.raises(ValidationError):
        strengthen(policy, budget_layer(3), policy.version)
    with pytest.raises(DuplicateLayerId):
        strengthen(policy, budget_layer(3, "query_budget"), "qb-x")


def test_strengthened_budget_language_inclusion():
    base = load_policy("query_budget.policy.json")
    stronger = strengthen(base, budget_layer(3), "qb-3")
    four = make_trace(queries(4), version="qb-v1")
    assert evaluate(base, four).permitted and not evaluate(stronger, four).permitted
    # every query trace of length <= 6 over ticks {0, 4} gaps and two resources
    for n in range(1, 7):
        for gaps in itertools.product((0, 4), repeat=n - 1):
            for res in itertools.product("RS", repeat=n):
                ticks = [0]
                for g in gaps:
                    ticks.append(ticks[-1] + g)
                events = [ev(f"q{i}", t, "Query", resource=r) for i, (t, r) in enumerate(zip(ticks, res))]
                if evaluate(stronger, events).permitted:
                    assert evaluate(base, events).permitted


def test_strengthen_monotone_and_gap():
    rng = random.Random(11)
    for _ in range(30):
        policy = random_policy(rng)
        extra_doc = random_policy_dict(rng, max_layers=1)["layers"]
        if not extra_doc:
            continue
        raw = json.loads(json.dumps(extra_doc[0]).replace('"c0"', '"cx"'))
        extra = layer_from_dict({**raw, "layer_id": "extra"})
        stronger = strengthen(policy, extra, "rand-v2")
        sample = [random_trace(rng) for _ in range(100)]
        gap = sum(not evaluate(policy, t).permitted for t in sample)
        gap2 = sum(not evaluate(stronger, t).permitted for t in sample)
        assert gap2 >= gap
        for t in sample:
            if evaluate(stronger, t).permitted:
                assert evaluate(policy, t).permitted


def test_conjunction_semantics():
    rng = random.Random(21)
    for _ in range(300):
        policy = random_policy(rng, max_layers=4)
        trace = random_trace(rng)
        verdict = evaluate(policy, trace)
        singles = [evaluate(PolicySystem(policy.version, policy.source, 0, (layer,)), trace).permitted for layer in policy.layers]
        assert verdict.permitted == all(singles)
        assert verdict.permitted == all(lv.accepted for lv in verdict.per_layer)
        subset = tuple(layer for layer in policy.layers if rng.random() < 0.5)
        sub = evaluate(PolicySystem(policy.version, policy.source, 0, subset), trace).permitted
        assert sub == all(s for s, layer in zip(singles, policy.layers) if layer in subset)


def _reject_default_only(policy: PolicySystem) -> PolicySystem:
    keep = []
    for layer in policy.layers:
        if layer.kind.value == "Counter":
            keep.append(layer)
        elif layer.kind.value == "Monitor" and all(d.value == "Reject" for d in layer.spec.default.values()):
            keep.append(layer)
    return replace(policy, layers=tuple(keep))


def test_prefix_closed_for_monitor_and_counter():
    rng = random.Random(8)
    checked = 0
    for _ in range(3000):
        policy = _reject_default_only(random_policy(rng, max_layers=4))
        trace = random_trace(rng, max_len=10)
        for t in range(1, len(trace.events)):
            if not evaluate(policy, prefix(trace, t)).permitted:
                checked += 1
                assert not evaluate(policy, trace).permitted
                break
    assert checked > 50


def test_verdicts_serialize_identically():
    rng = random.Random(2)
    for _ in range(50):
        policy = random_policy(rng)
        trace = random_trace(rng)
        assert evaluate(policy, trace).serialize() == evaluate(policy, trace).serialize()
        assert serialize_policy(parse_policy(serialize_policy(policy))) == serialize_policy(policy)
