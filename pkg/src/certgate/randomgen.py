"""Seeded random traces, policies, certifier configs and environments.

Used by the property tests and the soundness sweep. Everything is drawn from a
caller-supplied :class:`random.Random`, so a seed pins the whole sample.
"""

from __future__ import annotations

import random
from dataclasses import replace
from typing import Any

from certgate.certifier import CertifierConfig, ObservationMask
from certgate.executor import Environment
from certgate.memory import MemoryClass
from certgate.policy import PolicySystem, policy_from_dict, validate_policy
from certgate.trace import (
    CONSTRAINT,
    EventKind,
    ProposedTrace,
    Tier,
    TraceEvent,
    approval_subject_hash,
    validate_trace,
)

PRINCIPALS = ("alice", "bob", "agent")
COMPONENTS = ("crm", "ledger", "mail")
RESOURCES = ("R1", "R2", None)
DATA_CLASSES = (None, None, "pii", "public", "fin")
PURPOSES = (None, "audit", "marketing")
KINDS = tuple(k.value for k in EventKind)
POLICY_VERSION = "rand-v1"
SLOT_CONSTRAINT = "range:100:200"


def random_event(rng: random.Random, index: int, tick: int, prior: list[TraceEvent]) -> TraceEvent:
    kind = EventKind(rng.choice(KINDS))
    params: dict[str, Any] = {}
    refs: tuple[str, ...] = ()
    if prior and rng.random() < 0.4:
        refs = tuple(sorted({rng.choice(prior).event_id for _ in range(rng.randint(1, 2))}))
    if rng.random() < 0.5:
        params["amount"] = rng.randint(0, 5)
    if kind is EventKind.COMPUTATION:
        sources = [e for e in prior if "amount" in e.params]
        if sources:
            refs = (rng.choice(sources).event_id,)
            params = {"expr": "amount * 2", "result": 2 * sources_value(prior, refs[0]) + rng.choice((0, 0, 0, 1))}
        else:
            params = {"expr": "3 + 4", "result": rng.choice((7, 7, 8))}
    elif kind is EventKind.CLAIM:
        comps = [e for e in prior if e.kind is EventKind.COMPUTATION]
        if comps and rng.random() < 0.7:
            src = rng.choice(comps)
            refs = (src.event_id,)
            params = {"value": src.params["result"] + rng.choice((0, 0, 1))}
    slot = kind is EventKind.TOOL_CALL and rng.random() < 0.4
    if slot:
        params.pop("amount", None)
        params[CONSTRAINT] = SLOT_CONSTRAINT
    qty = {}
    if rng.random() < 0.4:
        qty["exposure"] = rng.choice((500, 1000, -500))
    return TraceEvent(
        event_id=f"e{index}",
        tick=tick,
        kind=kind,
        principal=rng.choice(PRINCIPALS),
        component=rng.choice(COMPONENTS),
        resource=rng.choice(RESOURCES),
        data_class=rng.choice(DATA_CLASSES),
        purpose=rng.choice(PURPOSES),
        params=params,
        quantity_deltas=qty,
        evidence_refs=refs,
        observation_slot=slot,
        irreversible=kind in (EventKind.EXECUTION_CALL, EventKind.RELEASE) and rng.random() < 0.6,
    )


def sources_value(prior: list[TraceEvent], event_id: str) -> int:
    return next(e.params["amount"] for e in prior if e.event_id == event_id)


def random_trace(rng: random.Random, max_len: int = 8, trace_id: str = "t") -> ProposedTrace:
    events: list[TraceEvent] = []
    tick = 0
    for i in range(rng.randint(1, max_len)):
        tick += rng.choice((0, 1, 1, 2, 5))
        events.append(random_event(rng, i, tick, events))
    trace = ProposedTrace(
        trace_id=trace_id,
        proposer_id=rng.choice(("agent", "agent", "alice")),
        task="random",
        declared_tier=Tier(rng.randint(0, 3)),
        requested_policy_version=POLICY_VERSION if rng.random() < 0.95 else "other",
        events=tuple(events),
    )
    # approvals either bind the trace they sit in or something else
    subject = approval_subject_hash(trace).hex()
    fixed = []
    for ev in trace.events:
        if ev.kind is EventKind.APPROVAL and rng.random() < 0.8:
            binds = subject if rng.random() < 0.75 else "ab" * 32
            params = {"binds": binds}
            if rng.random() < 0.3:
                params["valid_until"] = ev.tick + rng.randint(0, 3)
            ev = replace(ev, params=params)
        fixed.append(ev)
    trace = replace(trace, events=tuple(fixed))
    validate_trace(trace)
    return trace


def _predicate(rng: random.Random, kind: str | None = None) -> dict[str, Any]:
    pred: dict[str, Any] = {"kind": kind or rng.choice(KINDS)}
    roll = rng.random()
    if roll < 0.15:
        pred["principal"] = rng.choice(PRINCIPALS)
    elif roll < 0.25:
        pred["params"] = {"amount": {"min": rng.randint(0, 2), "max": rng.randint(2, 5)}}
    elif roll < 0.3:
        pred["compute_valid"] = rng.random() < 0.5
    elif roll < 0.35:
        pred["qty"] = {"exposure": {"min": 1000}}
    elif roll < 0.4 and kind is None:
        del pred["kind"]
        pred["resource"] = rng.choice(("R1", "R2"))
    return pred


def _monitor(rng: random.Random) -> dict[str, Any]:
    states = [f"s{i}" for i in range(rng.randint(1, 3))]
    transitions = []
    for s in states:
        for kind in rng.sample(KINDS, rng.randint(0, 3)):
            transitions.append({"from": s, "on": _predicate(rng, kind), "to": rng.choice(states)})
    accepting = [s for s in states if rng.random() < 0.7] or [states[0]]
    default = {s: ("Reject" if rng.random() < 0.25 else "SelfLoop") for s in states}
    return {"states": states, "initial": states[0], "accepting": accepting, "transitions": transitions, "default": default}


def _counter(rng: random.Random, name: str) -> dict[str, Any]:
    updates = []
    for _ in range(rng.randint(1, 2)):
        delta = rng.choice(("count", "count", "qty:exposure", 2, -1))
        updates.append({"on": _predicate(rng), "counter": name, "delta": delta})
    bound = rng.choice((0, 1, 2, 3, 5, 1000, 2000))
    return {"counters": [{"name": name, "window": rng.choice((None, 1, 3, 10)), "bound": bound}], "updates": updates}


def _temporal(rng: random.Random) -> dict[str, Any]:
    pattern = rng.choice(("Precedence", "AbsenceAfter", "ResponseWithin"))
    a = {"kind": "Approval"} if pattern == "Precedence" and rng.random() < 0.5 else _predicate(rng)
    return {"pattern": pattern, "a": a, "b": _predicate(rng), "k": rng.randint(0, 4)}


def _info_flow(rng: random.Random) -> dict[str, Any]:
    rows = []
    for _ in range(rng.randint(0, 4)):
        row = {}
        for key, pool in (("principal", PRINCIPALS), ("component", COMPONENTS), ("data_class", ("pii", "public", "fin")), ("purpose", ("audit", "marketing"))):
            if rng.random() < 0.4:
                row[key] = rng.choice(pool)
        if rng.random() < 0.2:
            row["pending"] = True
        rows.append(row)
    return {
        "auth_table": rows,
        "purpose_binding": rng.random() < 0.4,
        "release_constraints": rng.sample(["pii", "fin"], rng.randint(0, 1)),
    }


def random_policy_dict(rng: random.Random, max_layers: int = 3, version: str = POLICY_VERSION) -> dict[str, Any]:
    layers = []
    for i in range(rng.randint(0, max_layers)):
        kind = rng.choice(("Monitor", "Counter", "Temporal", "InfoFlow"))
        spec = {
            "Monitor": lambda: _monitor(rng),
            "Counter": lambda: _counter(rng, f"c{i}"),
            "Temporal": lambda: _temporal(rng),
            "InfoFlow": lambda: _info_flow(rng),
        }[kind]()
        layers.append({"layer_id": f"L{i}", "kind": kind, "tier": f"C{rng.randint(0, 5)}", "spec": spec})
    return {"version": version, "source": "random", "effective_from": 0, "layers": layers}


def random_policy(rng: random.Random, max_layers: int = 3, version: str = POLICY_VERSION) -> PolicySystem:
    policy = policy_from_dict(random_policy_dict(rng, max_layers, version))
    validate_policy(policy)
    return policy


def random_config(rng: random.Random, sound: bool = True) -> CertifierConfig:
    return CertifierConfig(
        certifier_id=rng.choice(("cert-1", "cert-1", "agent")),
        authority_tier=Tier(rng.randint(1, 5)),
        memory_class=MemoryClass(rng.randint(0, 2)),
        observation_mask=rng.choice(list(ObservationMask)),
        mac_key=b"random-key",
        sound=sound,
    )


def random_environment(rng: random.Random, trace: ProposedTrace, p_deviate: float = 0.3) -> Environment:
    behaviors: dict[str, dict[str, Any]] = {}
    for ev in trace.events:
        if ev.observation_slot:
            behaviors.setdefault(ev.component, {})[ev.event_id] = rng.randint(100, 200)
    injections = []
    if rng.random() < p_deviate:
        ev = rng.choice(trace.events)
        fld, value = rng.choice(
            (
                ("params.amount", rng.randint(6, 9)),
                ("principal", "mallory"),
                ("quantity_deltas.exposure", 3000),
                ("observed", rng.choice((250, 99, 150))),
                ("resource", "R9"),
            )
        )
        injections.append((ev.event_id, fld, value))
    return Environment(behaviors, injections)
