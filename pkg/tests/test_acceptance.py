"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line."""

import json
import math
import random
import time
from dataclasses import replace
from fractions import Fraction

from certgate.boundary import Classifier, drift_eval, drift_from_ledger, estimate_measures, exact_measures, generator_from_dict
from certgate.certifier import (
    Certificate,
    Certified,
    ComponentKind,
    Rejected,
    certify,
    check_certificate,
    compute_mac,
)
from certgate.executor import conform, execute
from certgate.memory import Ledger, MemoryState, update, verify_chain
from certgate.policy import evaluate, layer_from_dict, local_action_permitted, strengthen
from certgate.randomgen import random_config, random_environment, random_policy, random_policy_dict, random_trace
from certgate.scenarios import fixture_text, load_config, load_policy, load_trace
from certgate.trace import EventKind, Tier, approval_subject_hash, canonical_hash, trace_to_dict

import conftest
from conftest import make_cfg

QB = load_policy("query_budget.policy.json")
QB3 = load_policy("query_budget_v2.policy.json")
SOUND = load_config("sound.certifier.json")


def report(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} [{detail}]"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def gen(name, **over):
    return generator_from_dict({**json.loads(fixture_text(name)), **over})


def _prior_memory(rng, policy):
    """Memory left behind by an earlier random trace, or nothing."""
    if rng.random() < 0.5:
        return MemoryState(), 0
    state = MemoryState()
    earlier = random_trace(rng)
    by_id = {}
    for e in earlier.events:
        by_id[e.event_id] = e
        state = update(state, e, policy, by_id)
    return state, state.last_updated_tick


def _shift(trace, offset):
    return replace(trace, events=tuple(replace(e, tick=e.tick + offset) for e in trace.events))


def test_1_soundness():
    rng = random.Random(2024)
    start = time.perf_counter()
    bad = certified = 0
    for _ in range(10_000):
        policy = random_policy(rng, max_layers=4)
        memory, offset = _prior_memory(rng, policy)
        trace = _shift(random_trace(rng), offset)
        v = certify(trace, policy, memory, random_config(rng, sound=True))
        if isinstance(v, Certified):
            certified += 1
            bad += not evaluate(policy, trace).permitted
    elapsed = time.perf_counter() - start
    report(1, "soundness", bad == 0 and elapsed < 60, f"10000 pairs, {certified} certified, {bad} impermissible, {elapsed:.1f}s < 60s")


def test_2_realized_permissibility():
    rng = random.Random(7)
    runs = problems = completed = stopped = 0
    while runs < 1000:
        trace = random_trace(rng)
        policy = random_policy(rng)
        cfg = replace(random_config(rng), observation_mask=SOUND.observation_mask)
        v = certify(trace, policy, MemoryState(), cfg)
        if not isinstance(v, Certified):
            continue
        env = random_environment(rng, trace, p_deviate=0.5)
        runs += 1
        try:
            result = execute(trace, v.certificate, policy, env, Ledger(), cfg.mac_key)
        except Exception:  # any exception counts against the criterion
            problems += 1
            continue
        performed = [e.event_id for e in env.realized_log]
        if result.realized.outcome.value == "Completed":
            completed += 1
            ok = evaluate(policy, result.realized).permitted and conform(result.realized, trace)[0]
        else:
            stopped += 1
            ids = [e.event_id for e in trace.events]
            cut = ids.index(result.halted_before)
            injected = {eid for eid, _, _ in env.deviation_injections}
            ok = (
                result.halted_before in injected or trace.events[cut].observation_slot
            ) and not set(ids[cut:]) & set(performed)
        problems += not ok
    report(2, "realized permissibility", problems == 0, f"1000 runs, {completed} completed, {stopped} halted/rolled back, {problems} exceptions")


def _max_in_window(ticks, window=10):
    return max(sum(1 for s in ticks if t - window < s <= t) for t in ticks)


def test_3_non_compositionality():
    g = gen("query_universe.generator.json")
    classify = Classifier(SOUND, QB)
    five = []
    for spec, choices, _ in g.enumerate():
        if choices[0] == 5:
            classify(spec, choices)
    five = [t for t in classify.traces.values() if len(t.events) == 5]
    five_ok = all(isinstance(certify(t, QB, MemoryState(), SOUND), Certified) for t in five)
    five_ok = five_ok and isinstance(certify(load_trace("query5.trace.json"), QB, MemoryState(), SOUND), Certified)
    six = load_trace("query6.trace.json")
    v6 = certify(six, QB, MemoryState(), SOUND)
    oracle6 = evaluate(QB, six).per_layer[0].violation.reason
    six_ok = isinstance(v6, Rejected) and any("queries[agent,R]=6>5" in r for r in v6.reasons) and oracle6 == "queries[agent,R]=6>5"
    six_ok = six_ok and all(local_action_permitted(QB, e) for e in six.events)
    exposure = load_policy("exposure.policy.json")
    orders = load_trace("exposure.trace.json")
    vx = certify(orders, exposure, MemoryState(), SOUND)
    local = [local_action_permitted(exposure, e) for e in orders.events]
    exp_ok = all(local) and isinstance(vx, Rejected) and any("exposure[agent,SEMI]=3000>2000" in r for r in vx.reasons)
    report(
        3,
        "non-compositionality",
        five_ok and six_ok and exp_ok,
        f"{len(five) + 1} five-query traces certified; six queries: {oracle6}; exposure 3000>2000 with every order locally ok",
    )


def test_4_decomposition_identity():
    start = time.perf_counter()
    cases = [
        ("query_universe.generator.json", "sound.certifier.json", QB),
        ("guardrail.generator.json", "sound.certifier.json", QB),
        ("guardrail.generator.json", "baseline.certifier.json", QB),
        ("guardrail.generator.json", "masked.certifier.json", QB),
        ("mixed.generator.json", "sound.certifier.json", load_policy("boundary.policy.json")),
    ]
    ok = True
    details = []
    for gname, cname, policy in cases:
        cfg = load_config(cname)
        r = exact_measures(gen(gname), cfg, policy)
        ok &= r.identity_residual == 0 and r.d == r.u + r.m
        ok &= r.rho is None or r.rho == r.u / r.y
        ok &= r.recall is None or r.recall == 1 - r.m / (1 - r.gap)
        if cfg.sound:
            ok &= r.u == 0
        details.append(f"{gname.split('.')[0]}/{cname.split('.')[0]} u={r.u}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    report(4, "decomposition identity", ok, f"residual 0 in all {len(cases)} cases; " + ", ".join(details) + f"; {elapsed:.1f}s < 30s")


def test_5_monotonicity():
    violations = checks = 0
    for sample_seed in range(5):
        rng = random.Random(100 + sample_seed)
        base = random_policy(rng, max_layers=3)
        sample = [random_trace(rng) for _ in range(1000)]
        gap = sum(not evaluate(base, t).permitted for t in sample)
        added = 0
        while added < 10:
            layers = random_policy_dict(rng, max_layers=1)["layers"]
            if not layers:
                continue
            raw = json.loads(json.dumps(layers[0]).replace('"c0"', f'"s{added}"'))
            stronger = strengthen(base, layer_from_dict({**raw, "layer_id": f"extra{added}"}), f"rand-s{added}")
            gap2 = sum(not evaluate(stronger, t).permitted for t in sample)
            violations += gap2 < gap
            checks += 1
            added += 1
    report(5, "monotonicity", violations == 0 and checks == 50, f"5 samples x 10 strengthenings, {violations} decreases")


def test_6_guardrail_insufficiency():
    g = gen("guardrail.generator.json")
    base = exact_measures(g, load_config("baseline.certifier.json"), QB)
    masked = exact_measures(g, load_config("masked.certifier.json"), QB)
    ok = base.u > 0 and masked.u == 0 and masked.m > 0
    report(6, "guardrail insufficiency", ok, f"baseline u={base.u}; masked sound u={masked.u}, m={masked.m}")


def _approval_witnessed(trace, gated_ticks):
    subject = approval_subject_hash(trace).hex()
    for tick in gated_ticks:
        good = [
            e
            for e in trace.events
            if e.kind is EventKind.APPROVAL
            and e.tick <= tick
            and e.params.get("binds") == subject
            and e.principal != trace.proposer_id
            and tick <= (e.params["valid_until"] if isinstance(e.params.get("valid_until"), int) else e.tick + 100)
        ]
        if not good:
            return False
    return True


def test_7_self_and_stale_approval():
    rng = random.Random(70)
    self_ok = True
    for _ in range(1000):
        trace = random_trace(rng)
        policy = random_policy(rng)
        cfg = replace(random_config(rng), certifier_id=trace.proposer_id)
        self_ok &= isinstance(certify(trace, policy, MemoryState(), cfg), Rejected)
    pay = load_policy("payment.policy.json")
    fresh = load_trace("payment_fresh.trace.json")
    forged = Certificate(canonical_hash(fresh).hex(), pay.version, (), 0, fresh.proposer_id, Tier.C5)
    forged = replace(forged, mac=compute_mac(forged, b"k"))
    self_ok &= not check_certificate(forged, fresh, pay, b"k")
    self_ok &= isinstance(certify(load_trace("payment_self_approved.trace.json"), pay, MemoryState(), make_cfg()), Rejected)

    stale_ok = isinstance(certify(fresh, pay, MemoryState(), make_cfg()), Certified)
    for name in ("payment_expired.trace.json", "payment_rebound.trace.json"):
        stale_ok &= not isinstance(certify(load_trace(name), pay, MemoryState(), make_cfg()), Certified)
    g = gen("mixed.generator.json")
    classify = Classifier(SOUND, load_policy("boundary.policy.json"))
    for spec, choices, _ in g.enumerate():
        if spec.name == "payment_with_approval" and choices[0] in ("wrongbind", "stale"):
            stale_ok &= classify(spec, choices)[1] is False
    human = 0
    for _ in range(5000):
        trace = random_trace(rng)
        policy = random_policy(rng)
        v = certify(trace, policy, MemoryState(), replace(random_config(rng), observation_mask=SOUND.observation_mask))
        if isinstance(v, Certified):
            for comp in v.certificate.components:
                if comp.component is ComponentKind.HUMAN:
                    human += 1
                    b = policy.layer(comp.layer_id).spec.b
                    gated = [e.tick for e in trace.events if b.matches(e, {x.event_id: x for x in trace.events})]
                    stale_ok &= _approval_witnessed(trace, gated)
    report(7, "self-approval and stale approval", self_ok and stale_ok, f"1000 self-certifications rejected; {human} random Human components all fresh and bound")


def test_8_ledger_integrity():
    ledger = Ledger()
    for i in range(5):
        ledger.append(trace_hash=f"{i:064x}", record={"type": "certification", "outcome": "Certified"}, recorded_tick=i)
    data = ledger.to_bytes()
    start = time.perf_counter()
    pristine = verify_chain(data).ok
    survived = mutations = 0
    for pos in range(len(data)):
        head, tail = data[:pos], data[pos + 1 :]
        for value in range(256):
            if value == data[pos]:
                continue
            mutations += 1
            if verify_chain(head + bytes((value,)) + tail).ok:
                survived += 1
    elapsed = time.perf_counter() - start
    report(
        8,
        "ledger integrity",
        pristine and survived == 0 and elapsed < 10,
        f"{mutations} single-byte mutations of {len(data)} bytes, {survived} undetected, {elapsed:.1f}s < 10s",
    )


def test_9_policy_drift():
    g = gen("query_universe.generator.json")
    classify = Classifier(SOUND, QB)
    for spec, choices, _ in g.enumerate():
        classify(spec, choices)
    ledger = Ledger()
    expected = set()
    for trace in classify.traces.values():
        v = certify(trace, QB, MemoryState(), SOUND)
        entry = ledger.append(
            trace_hash=canonical_hash(trace).hex(),
            record={"type": "certification", "outcome": v.outcome, "trace": trace_to_dict(trace)},
            policy=QB,
        )
        if isinstance(v, Certified) and 4 <= _max_in_window([e.tick for e in trace.events]) <= 5:
            expected.add(entry.seq)
    _, flagged = drift_from_ledger(ledger, QB3)
    d = drift_eval(g, SOUND, QB, QB3)
    mass = Fraction(0)
    for _, choices, weight in g.enumerate():
        length, *gaps, _ = choices
        ticks = [0]
        for step in gaps[: length - 1]:
            ticks.append(ticks[-1] + step)
        if 4 <= _max_in_window(ticks) <= 5:
            mass += weight
    ok = set(flagged) == expected and d == mass
    report(9, "policy drift", ok, f"{len(flagged)} of {len(ledger)} entries flagged; D = {d} = enumerated mass {mass}")


def test_10_monte_carlo():
    cases = [
        ("query_universe.generator.json", "sound.certifier.json", QB),
        ("guardrail.generator.json", "baseline.certifier.json", QB),
        ("guardrail.generator.json", "masked.certifier.json", QB),
        ("mixed.generator.json", "sound.certifier.json", load_policy("boundary.policy.json")),
    ]
    n = 100_000
    worst = 0.0
    misses = []
    for gname, cname, policy in cases:
        g = gen(gname)
        cfg = load_config(cname)
        truth = exact_measures(g, cfg, policy)
        for seed in (1, 2, 3):
            est = estimate_measures(g, cfg, policy, n=n, seed=seed)
            for name in ("gap", "u", "m", "y"):
                p = float(getattr(truth, name))
                sigma = math.sqrt(p * (1 - p) / n)
                err = abs(float(getattr(est, name)) - p)
                if sigma == 0:
                    if err != 0:
                        misses.append((gname, cname, seed, name))
                    continue
                worst = max(worst, err / sigma)
                if err > 3 * sigma:
                    misses.append((gname, cname, seed, name))
    report(10, "Monte-Carlo consistency", not misses, f"{len(cases)} fixtures x 3 seeds at n=1e5, worst deviation {worst:.2f} sigma, misses {misses}")
