"""Layered, versioned policy systems and the ground-truth membership oracle.

A :class:`PolicySystem` is a conjunction of layers. :func:`evaluate` decides
whether a trace lies in the permitted language by brute force over the raw
event list; it is deliberately simple so it can serve as the reference every
other component is measured against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import Any, Iterable, Mapping, Sequence, Union

from certgate.arith import compute_status
from certgate.errors import (
    DuplicateLayerId,
    NondeterministicMonitor,
    ParseError,
    SpecError,
    ValidationError,
)
from certgate.trace import (
    OBSERVED,
    Bp,
    EventKind,
    ProposedTrace,
    RealizedTrace,
    Tier,
    TraceEvent,
    canonical_bytes,
    load_json,
)

REJECT_SINK = "__reject__"
WILDCARD = "*"

# ---------------------------------------------------------------------------
# event predicates


@dataclass(frozen=True)
class AnyOf:
    values: frozenset

    def matches(self, value: Any) -> bool:
        # bool is an int subclass; keep True from matching 1
        return any(value == v and type(value) is type(v) for v in self.values)

    def to_json(self) -> Any:
        vals = sorted((_value_json(v) for v in self.values), key=lambda v: json.dumps(v, sort_keys=True))
        return vals[0] if len(vals) == 1 else vals


@dataclass(frozen=True)
class Range:
    lo: int | None = None
    hi: int | None = None

    def matches(self, value: Any) -> bool:
        num = _num(value)
        if num is None:
            return False
        return (self.lo is None or num >= self.lo) and (self.hi is None or num <= self.hi)

    def to_json(self) -> Any:
        out = {}
        if self.lo is not None:
            out["min"] = self.lo
        if self.hi is not None:
            out["max"] = self.hi
        return out


Matcher = Union[AnyOf, Range]


def _num(value: Any) -> int | None:
    if isinstance(value, Bp):
        return value.bp
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    return None


def _value_json(value: Any) -> Any:
    return {"bp": value.bp} if isinstance(value, Bp) else value


def _intersects(m1: Matcher, m2: Matcher) -> bool:
    if isinstance(m1, AnyOf) and isinstance(m2, AnyOf):
        return any(m2.matches(v) for v in m1.values)
    if isinstance(m1, AnyOf):
        return any(m2.matches(v) for v in m1.values)
    if isinstance(m2, AnyOf):
        return any(m1.matches(v) for v in m2.values)
    lo = max((b for b in (m1.lo, m2.lo) if b is not None), default=None)
    hi = min((b for b in (m1.hi, m2.hi) if b is not None), default=None)
    return lo is None or hi is None or lo <= hi


EVENT_FIELDS = (
    "kind",
    "principal",
    "component",
    "resource",
    "data_class",
    "purpose",
    "irreversible",
    "observation_slot",
    "compute_valid",
)


@dataclass(frozen=True)
class Predicate:
    """Conjunction of field matchers; an absent field is a wildcard."""

    fields: tuple[tuple[str, Matcher], ...] = ()
    params: tuple[tuple[str, Matcher], ...] = ()
    qty: tuple[tuple[str, Matcher], ...] = ()

    def matches(self, event: TraceEvent, by_id: Mapping[str, TraceEvent] | None = None) -> bool:
        for name, m in self.fields:
            if name == "kind":
                value: Any = event.kind.value
            elif name == "compute_valid":
                value = compute_status(event, by_id or {})
            else:
                value = getattr(event, name)
            if not m.matches(value):
                return False
        for key, m in self.params:
            if key not in event.params or not m.matches(event.params[key]):
                return False
        for key, m in self.qty:
            if not m.matches(event.quantity_deltas.get(key, 0)):
                return False
        return True

    def overlaps(self, other: "Predicate") -> bool:
        """False only when no event can satisfy both predicates."""
        for mine, theirs in ((self.fields, other.fields), (self.params, other.params), (self.qty, other.qty)):
            index = dict(theirs)
            for key, m in mine:
                if key in index and not _intersects(m, index[key]):
                    return False
        return True

    @property
    def constrained_fields(self) -> set[str]:
        names = {n for n, _ in self.fields}
        if self.params:
            names.add("params")
        if self.qty:
            names.add("qty")
        return names

    @property
    def kind_only(self) -> bool:
        return self.constrained_fields <= {"kind"}

    @property
    def kinds(self) -> frozenset[str] | None:
        for name, m in self.fields:
            if name == "kind" and isinstance(m, AnyOf):
                return frozenset(m.values)
        return None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {n: m.to_json() for n, m in self.fields}
        if self.params:
            out["params"] = {k: m.to_json() for k, m in self.params}
        if self.qty:
            out["qty"] = {k: m.to_json() for k, m in self.qty}
        return out


def _matcher_from_json(raw: Any, where: str, bool_field: bool = False) -> Matcher:
    if isinstance(raw, dict) and set(raw) <= {"min", "max"} and raw:
        for key, v in raw.items():
            if not isinstance(v, int) or isinstance(v, bool):
                raise ValidationError(f"{where}.{key}", "range bounds must be integers")
        return Range(raw.get("min"), raw.get("max"))
    values = raw if isinstance(raw, list) else [raw]
    if not values:
        raise ValidationError(where, "empty value list matches nothing")
    out = []
    for v in values:
        if isinstance(v, dict):
            if set(v) != {"bp"} or not isinstance(v["bp"], int):
                raise ValidationError(where, f"bad matcher value {v!r}")
            out.append(Bp(v["bp"]))
        elif isinstance(v, bool) and not bool_field:
            raise ValidationError(where, "boolean matcher on a non-boolean field")
        elif v is None or isinstance(v, (str, int)):
            out.append(v)
        else:
            raise ValidationError(where, f"bad matcher value {v!r}")
    return AnyOf(frozenset(out))


def predicate_from_json(raw: Any, where: str) -> Predicate:
    if not isinstance(raw, dict):
        raise ValidationError(where, "predicate must be an object")
    fields = []
    params = []
    qty = []
    for key in sorted(raw):
        value = raw[key]
        if key == "params":
            if not isinstance(value, dict):
                raise ValidationError(f"{where}.params", "must be an object")
            for pk in sorted(value):
                if pk == OBSERVED:
                    raise ValidationError(f"{where}.params.{pk}", "observed tool output cannot drive policy")
                params.append((pk, _matcher_from_json(value[pk], f"{where}.params.{pk}")))
        elif key == "qty":
            if not isinstance(value, dict):
                raise ValidationError(f"{where}.qty", "must be an object")
            for qk in sorted(value):
                qty.append((qk, _matcher_from_json(value[qk], f"{where}.qty.{qk}")))
        elif key in EVENT_FIELDS:
            is_bool = key in ("irreversible", "observation_slot", "compute_valid")
            m = _matcher_from_json(value, f"{where}.{key}", bool_field=is_bool)
            if key == "kind":
                if not isinstance(m, AnyOf) or not all(_valid_kind(k) for k in m.values):
                    raise ValidationError(f"{where}.kind", f"unknown event kind in {value!r}")
            if is_bool and (not isinstance(m, AnyOf) or not all(isinstance(v, bool) for v in m.values)):
                raise ValidationError(f"{where}.{key}", "must be true or false")
            fields.append((key, m))
        else:
            raise ValidationError(f"{where}.{key}", "unknown predicate field")
    return Predicate(tuple(fields), tuple(params), tuple(qty))


def _valid_kind(value: Any) -> bool:
    try:
        EventKind(value)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# layer specs


class Default(str, Enum):
    SELF_LOOP = "SelfLoop"
    REJECT = "Reject"


@dataclass(frozen=True)
class Transition:
    source: str
    on: Predicate
    target: str


@dataclass(frozen=True)
class MonitorSpec:
    states: tuple[str, ...]
    initial: str
    accepting: frozenset[str]
    transitions: tuple[Transition, ...]
    default: Mapping[str, Default]

    def step(self, state: str, event: TraceEvent, by_id: Mapping[str, TraceEvent]) -> str:
        if state == REJECT_SINK:
            return state
        for tr in self.transitions:
            if tr.source == state and tr.on.matches(event, by_id):
                return tr.target
        if self.default[state] is Default.REJECT:
            return REJECT_SINK
        return state


@dataclass(frozen=True)
class CounterDef:
    name: str
    window: int | None  # None means unbounded
    bound: int

    def in_window(self, now: int, tick: int) -> bool:
        return self.window is None or now - tick < self.window


@dataclass(frozen=True)
class CounterUpdate:
    on: Predicate
    counter: str
    delta: Union[str, int]  # "count", "qty:<name>", or a constant

    def amount(self, event: TraceEvent) -> int:
        if self.delta == "count":
            return 1
        if isinstance(self.delta, str):
            return event.quantity_deltas.get(self.delta[4:], 0)
        return self.delta


@dataclass(frozen=True)
class CounterSpec:
    counters: tuple[CounterDef, ...]
    updates: tuple[CounterUpdate, ...]

    def counter(self, name: str) -> CounterDef:
        for c in self.counters:
            if c.name == name:
                return c
        raise SpecError(f"undeclared counter {name!r}")


class Pattern(str, Enum):
    PRECEDENCE = "Precedence"
    ABSENCE_AFTER = "AbsenceAfter"
    RESPONSE_WITHIN = "ResponseWithin"


@dataclass(frozen=True)
class TemporalSpec:
    pattern: Pattern
    a: Predicate
    b: Predicate
    k: int = 0

    @property
    def gates_on_approval(self) -> bool:
        return self.pattern is Pattern.PRECEDENCE and self.a.kinds == frozenset({EventKind.APPROVAL.value})


@dataclass(frozen=True)
class AuthRow:
    principal: str = WILDCARD
    component: str = WILDCARD
    data_class: str = WILDCARD
    purpose: str = WILDCARD
    pending: bool = False

    def matches(self, event: TraceEvent) -> bool:
        return all(
            want == WILDCARD or want == got
            for want, got in (
                (self.principal, event.principal),
                (self.component, event.component),
                (self.data_class, event.data_class),
                (self.purpose, event.purpose),
            )
        )


@dataclass(frozen=True)
class InfoFlowSpec:
    auth_table: tuple[AuthRow, ...]
    purpose_binding: bool = False
    release_constraints: frozenset[str] = frozenset()

    def authorization(self, event: TraceEvent) -> str:
        """``granted``, ``pending`` or ``denied`` for a data-touching event."""
        rows = [r for r in self.auth_table if r.matches(event)]
        if any(not r.pending for r in rows):
            return "granted"
        return "pending" if rows else "denied"


class LayerKind(str, Enum):
    MONITOR = "Monitor"
    COUNTER = "Counter"
    TEMPORAL = "Temporal"
    INFO_FLOW = "InfoFlow"


LayerSpec = Union[MonitorSpec, CounterSpec, TemporalSpec, InfoFlowSpec]

_SPEC_TYPES = {
    LayerKind.MONITOR: MonitorSpec,
    LayerKind.COUNTER: CounterSpec,
    LayerKind.TEMPORAL: TemporalSpec,
    LayerKind.INFO_FLOW: InfoFlowSpec,
}


@dataclass(frozen=True)
class PolicyLayer:
    layer_id: str
    kind: LayerKind
    spec: LayerSpec
    tier: Tier = Tier.C0
    description: str = ""


@dataclass(frozen=True)
class PolicySystem:
    version: str
    source: str
    effective_from: int
    layers: tuple[PolicyLayer, ...] = ()

    def layer(self, layer_id: str) -> PolicyLayer:
        for layer in self.layers:
            if layer.layer_id == layer_id:
                return layer
        raise KeyError(layer_id)


# ---------------------------------------------------------------------------
# verdicts


@dataclass(frozen=True)
class Violation:
    event_id: str | None
    reason: str


@dataclass(frozen=True)
class LayerVerdict:
    layer_id: str
    accepted: bool
    violation: Violation | None = None


@dataclass(frozen=True)
class PermissibilityVerdict:
    permitted: bool
    per_layer: tuple[LayerVerdict, ...]

    def failing(self) -> list[str]:
        return [lv.layer_id for lv in self.per_layer if not lv.accepted]

    def to_dict(self) -> dict[str, Any]:
        return {
            "permitted": self.permitted,
            "per_layer": [
                {
                    "layer_id": lv.layer_id,
                    "accepted": lv.accepted,
                    "violation": None
                    if lv.violation is None
                    else {"event_id": lv.violation.event_id, "reason": lv.violation.reason},
                }
                for lv in self.per_layer
            ],
        }

    def serialize(self) -> bytes:
        return canonical_bytes(self.to_dict())


# ---------------------------------------------------------------------------
# the oracle


def evaluate(policy: PolicySystem, trace: ProposedTrace | RealizedTrace | Sequence[TraceEvent]) -> PermissibilityVerdict:
    events = tuple(trace.events) if hasattr(trace, "events") else tuple(trace)
    per_layer = tuple(evaluate_layer(layer, events) for layer in policy.layers)
    return PermissibilityVerdict(all(lv.accepted for lv in per_layer), per_layer)


def evaluate_layer(layer: PolicyLayer, events: Sequence[TraceEvent]) -> LayerVerdict:
    by_id = {e.event_id: e for e in events}
    spec = layer.spec
    if not isinstance(spec, _SPEC_TYPES.get(layer.kind, ())):
        raise SpecError(f"layer {layer.layer_id!r}: {layer.kind.value} layer carries {type(spec).__name__}")
    if isinstance(spec, MonitorSpec):
        violation = _run_monitor(spec, events, by_id)
    elif isinstance(spec, CounterSpec):
        violation = _run_counters(spec, events, by_id)
    elif isinstance(spec, TemporalSpec):
        violation = _run_temporal(spec, events, by_id)
    else:
        violation = _run_info_flow(spec, events, by_id)
    return LayerVerdict(layer.layer_id, violation is None, violation)


def _run_monitor(spec: MonitorSpec, events, by_id) -> Violation | None:
    state = spec.initial
    for ev in events:
        nxt = spec.step(state, ev, by_id)
        if nxt == REJECT_SINK:
            return Violation(ev.event_id, f"no transition from state {state!r} and default is Reject")
        state = nxt
    if state not in spec.accepting:
        return Violation(None, f"trace ends in non-accepting state {state!r}")
    return None


def _run_counters(spec: CounterSpec, events, by_id) -> Violation | None:
    # recount every window from scratch at every event
    for i, now_ev in enumerate(events):
        now = now_ev.tick
        for c in spec.counters:
            sums: dict[tuple[Any, Any], int] = {}
            for ev in events[: i + 1]:
                if not c.in_window(now, ev.tick):
                    continue
                for upd in spec.updates:
                    if upd.counter == c.name and upd.on.matches(ev, by_id):
                        key = (ev.principal, ev.resource)
                        sums[key] = sums.get(key, 0) + upd.amount(ev)
            for (principal, resource), total in sorted(sums.items(), key=lambda kv: repr(kv[0])):
                if total > c.bound:
                    return Violation(
                        now_ev.event_id,
                        f"{c.name}[{principal},{resource}]={total}>{c.bound}",
                    )
    return None


def _run_temporal(spec: TemporalSpec, events, by_id) -> Violation | None:
    if spec.pattern is Pattern.PRECEDENCE:
        seen_a = False
        for ev in events:
            if spec.b.matches(ev, by_id) and not seen_a:
                return Violation(ev.event_id, "required predecessor has not occurred")
            if spec.a.matches(ev, by_id):
                seen_a = True
        return None
    if spec.pattern is Pattern.ABSENCE_AFTER:
        seen_b = False
        for ev in events:
            if seen_b and spec.a.matches(ev, by_id):
                return Violation(ev.event_id, "forbidden event after trigger")
            if spec.b.matches(ev, by_id):
                seen_b = True
        return None
    for i, ev in enumerate(events):
        if not spec.a.matches(ev, by_id):
            continue
        deadline = ev.tick + spec.k
        if not any(spec.b.matches(later, by_id) and later.tick <= deadline for later in events[i + 1 :]):
            return Violation(ev.event_id, f"no response within {spec.k} ticks")
    return None


def _run_info_flow(spec: InfoFlowSpec, events, by_id) -> Violation | None:
    for ev in events:
        if ev.data_class is not None:
            status = spec.authorization(ev)
            if status != "granted":
                return Violation(
                    ev.event_id,
                    f"access ({ev.principal},{ev.component},{ev.data_class},{ev.purpose}) {status}",
                )
        sources = [by_id[r] for r in ev.evidence_refs if r in by_id and by_id[r].kind is EventKind.RETRIEVAL]
        if spec.purpose_binding:
            for src in sources:
                if src.purpose is not None and ev.purpose != src.purpose:
                    return Violation(
                        ev.event_id,
                        f"datum {src.event_id} retrieved for {src.purpose!r} reused for {ev.purpose!r}",
                    )
        if ev.kind is EventKind.RELEASE and spec.release_constraints:
            classes = {ev.data_class} | {s.data_class for s in sources}
            leaked = sorted(c for c in classes & spec.release_constraints if c is not None)
            if leaked:
                return Violation(ev.event_id, f"release of forbidden data class {leaked[0]!r}")
    return None


def local_action_permitted(policy: PolicySystem, event: TraceEvent) -> bool:
    """Action-level check: the event judged as if it were the whole trace."""
    return evaluate(policy, (event,)).permitted


# ---------------------------------------------------------------------------
# strengthening


def strengthen(policy: PolicySystem, layer: PolicyLayer, new_version: str) -> PolicySystem:
    if new_version == policy.version:
        raise ValidationError("version", "strengthened policy needs a new version string")
    if any(existing.layer_id == layer.layer_id for existing in policy.layers):
        raise DuplicateLayerId(layer.layer_id)
    out = replace(policy, version=new_version, layers=policy.layers + (layer,))
    validate_policy(out)
    return out


# ---------------------------------------------------------------------------
# (de)serialization and validation


def parse_policy(data: bytes | str) -> PolicySystem:
    policy = policy_from_dict(load_json(data, "policy"))
    validate_policy(policy)
    return policy


def policy_from_dict(raw: Any) -> PolicySystem:
    if not isinstance(raw, dict):
        raise ParseError("policy document must be a JSON object")
    for key in ("version", "source", "effective_from", "layers"):
        if key not in raw:
            raise ValidationError(key, "missing")
    if not isinstance(raw["version"], str) or not raw["version"]:
        raise ValidationError("version", "must be a nonempty string")
    if not isinstance(raw["source"], str):
        raise ValidationError("source", "must be a string")
    if not isinstance(raw["effective_from"], int) or raw["effective_from"] < 0:
        raise ValidationError("effective_from", "must be a non-negative tick")
    if not isinstance(raw["layers"], list):
        raise ValidationError("layers", "must be a list")
    return PolicySystem(
        version=raw["version"],
        source=raw["source"],
        effective_from=raw["effective_from"],
        layers=tuple(layer_from_dict(l, i) for i, l in enumerate(raw["layers"])),
    )


def layer_from_dict(raw: Any, index: int = 0) -> PolicyLayer:
    if not isinstance(raw, dict):
        raise ValidationError(f"layers[{index}]", "must be an object")
    layer_id = raw.get("layer_id")
    if not isinstance(layer_id, str) or not layer_id:
        raise ValidationError(f"layers[{index}].layer_id", "must be a nonempty string")
    where = f"layers[{layer_id}]"
    try:
        kind = LayerKind(raw.get("kind"))
    except ValueError:
        raise ValidationError(f"{where}.kind", f"unknown layer kind {raw.get('kind')!r}") from None
    try:
        tier = Tier.parse(raw.get("tier", "C0"))
    except (ValueError, TypeError):
        raise ValidationError(f"{where}.tier", "must be one of C0..C5") from None
    spec_raw = raw.get("spec")
    if not isinstance(spec_raw, dict):
        raise ValidationError(f"{where}.spec", "must be an object")
    builder = {
        LayerKind.MONITOR: _monitor_from,
        LayerKind.COUNTER: _counter_from,
        LayerKind.TEMPORAL: _temporal_from,
        LayerKind.INFO_FLOW: _info_flow_from,
    }[kind]
    return PolicyLayer(layer_id, kind, builder(spec_raw, f"{where}.spec"), tier, str(raw.get("description", "")))


def _monitor_from(raw: dict, where: str) -> MonitorSpec:
    states = raw.get("states")
    if not isinstance(states, list) or not states or not all(isinstance(s, str) for s in states):
        raise ValidationError(f"{where}.states", "must be a nonempty list of names")
    transitions = []
    for i, tr in enumerate(raw.get("transitions", [])):
        if not isinstance(tr, dict) or not {"from", "on", "to"} <= set(tr):
            raise ValidationError(f"{where}.transitions[{i}]", "needs from/on/to")
        transitions.append(Transition(tr["from"], predicate_from_json(tr["on"], f"{where}.transitions[{i}].on"), tr["to"]))
    default_raw = raw.get("default", {})
    if not isinstance(default_raw, dict):
        raise ValidationError(f"{where}.default", "must map each state to SelfLoop or Reject")
    default = {}
    for state, rule in default_raw.items():
        try:
            default[state] = Default(rule)
        except ValueError:
            raise ValidationError(f"{where}.default.{state}", f"must be SelfLoop or Reject, got {rule!r}") from None
    return MonitorSpec(
        states=tuple(states),
        initial=raw.get("initial"),
        accepting=frozenset(raw.get("accepting", [])),
        transitions=tuple(transitions),
        default=default,
    )


def _counter_from(raw: dict, where: str) -> CounterSpec:
    counters = []
    for i, c in enumerate(raw.get("counters", [])):
        if not isinstance(c, dict) or "name" not in c or "bound" not in c:
            raise ValidationError(f"{where}.counters[{i}]", "needs name and bound")
        counters.append(CounterDef(c["name"], c.get("window"), c["bound"]))
    updates = []
    for i, u in enumerate(raw.get("updates", [])):
        if not isinstance(u, dict) or not {"on", "counter"} <= set(u):
            raise ValidationError(f"{where}.updates[{i}]", "needs on and counter")
        updates.append(CounterUpdate(predicate_from_json(u["on"], f"{where}.updates[{i}].on"), u["counter"], u.get("delta", "count")))
    return CounterSpec(tuple(counters), tuple(updates))


def _temporal_from(raw: dict, where: str) -> TemporalSpec:
    try:
        pattern = Pattern(raw.get("pattern"))
    except ValueError:
        raise ValidationError(f"{where}.pattern", f"unknown pattern {raw.get('pattern')!r}") from None
    for key in ("a", "b"):
        if key not in raw:
            raise ValidationError(f"{where}.{key}", "missing")
    return TemporalSpec(
        pattern,
        predicate_from_json(raw["a"], f"{where}.a"),
        predicate_from_json(raw["b"], f"{where}.b"),
        raw.get("k", 0),
    )


def _info_flow_from(raw: dict, where: str) -> InfoFlowSpec:
    rows = []
    for i, r in enumerate(raw.get("auth_table", [])):
        if not isinstance(r, dict) or set(r) - {"principal", "component", "data_class", "purpose", "pending"}:
            raise ValidationError(f"{where}.auth_table[{i}]", "unexpected row shape")
        for key in ("principal", "component", "data_class", "purpose"):
            if not isinstance(r.get(key, WILDCARD), str):
                raise ValidationError(f"{where}.auth_table[{i}].{key}", "must be a string or '*'")
        if not isinstance(r.get("pending", False), bool):
            raise ValidationError(f"{where}.auth_table[{i}].pending", "must be a boolean")
        rows.append(AuthRow(**r))
    release = raw.get("release_constraints", [])
    if not isinstance(release, list) or not all(isinstance(c, str) for c in release):
        raise ValidationError(f"{where}.release_constraints", "must be a list of data classes")
    binding = raw.get("purpose_binding", False)
    if not isinstance(binding, bool):
        raise ValidationError(f"{where}.purpose_binding", "must be a boolean")
    return InfoFlowSpec(tuple(rows), binding, frozenset(release))


def policy_to_dict(policy: PolicySystem) -> dict[str, Any]:
    return {
        "version": policy.version,
        "source": policy.source,
        "effective_from": policy.effective_from,
        "layers": [layer_to_dict(l) for l in policy.layers],
    }


def layer_to_dict(layer: PolicyLayer) -> dict[str, Any]:
    spec = layer.spec
    if isinstance(spec, MonitorSpec):
        body: dict[str, Any] = {
            "states": list(spec.states),
            "initial": spec.initial,
            "accepting": sorted(spec.accepting),
            "transitions": [{"from": t.source, "on": t.on.to_json(), "to": t.target} for t in spec.transitions],
            "default": {s: d.value for s, d in spec.default.items()},
        }
    elif isinstance(spec, CounterSpec):
        body = {
            "counters": [{"name": c.name, "window": c.window, "bound": c.bound} for c in spec.counters],
            "updates": [{"on": u.on.to_json(), "counter": u.counter, "delta": u.delta} for u in spec.updates],
        }
    elif isinstance(spec, TemporalSpec):
        body = {"pattern": spec.pattern.value, "a": spec.a.to_json(), "b": spec.b.to_json()}
        if spec.pattern is Pattern.RESPONSE_WITHIN:
            body["k"] = spec.k
    else:
        body = {
            "auth_table": [
                {
                    "principal": r.principal,
                    "component": r.component,
                    "data_class": r.data_class,
                    "purpose": r.purpose,
                    **({"pending": True} if r.pending else {}),
                }
                for r in spec.auth_table
            ],
            "purpose_binding": spec.purpose_binding,
            "release_constraints": sorted(spec.release_constraints),
        }
    return {
        "layer_id": layer.layer_id,
        "kind": layer.kind.value,
        "tier": layer.tier.name,
        "description": layer.description,
        "spec": body,
    }


def serialize_policy(policy: PolicySystem) -> bytes:
    return canonical_bytes(policy_to_dict(policy))


def monitor_overlaps(spec: MonitorSpec) -> list[tuple[str, int, int]]:
    """Pairs of transitions leaving the same state whose predicates can both fire."""
    found = []
    for (i, t1), (j, t2) in combinations(enumerate(spec.transitions), 2):
        if t1.source == t2.source and t1.on.overlaps(t2.on):
            found.append((t1.source, i, j))
    return found


def validate_policy(policy: PolicySystem) -> None:
    seen_layers: set[str] = set()
    seen_counters: dict[str, str] = {}
    for layer in policy.layers:
        where = f"layers[{layer.layer_id}]"
        if layer.layer_id in seen_layers:
            raise ValidationError(f"{where}.layer_id", "duplicate layer id")
        seen_layers.add(layer.layer_id)
        if not isinstance(layer.spec, _SPEC_TYPES[layer.kind]):
            raise ValidationError(f"{where}.spec", f"{layer.kind.value} layer needs a {_SPEC_TYPES[layer.kind].__name__}")
        spec = layer.spec
        if isinstance(spec, MonitorSpec):
            _validate_monitor(spec, layer.layer_id, where)
        elif isinstance(spec, CounterSpec):
            for c in spec.counters:
                if not isinstance(c.name, str) or not c.name:
                    raise ValidationError(f"{where}.spec.counters", "counter names must be nonempty strings")
                if c.name in seen_counters:
                    raise ValidationError(f"{where}.spec.counters.{c.name}", f"name already used by layer {seen_counters[c.name]}")
                seen_counters[c.name] = layer.layer_id
                if not isinstance(c.bound, int) or isinstance(c.bound, bool) or c.bound < 0:
                    raise ValidationError(f"{where}.spec.counters.{c.name}.bound", "must be a finite non-negative integer")
                if c.window is not None and (not isinstance(c.window, int) or isinstance(c.window, bool) or c.window <= 0):
                    raise ValidationError(f"{where}.spec.counters.{c.name}.window", "must be a positive integer or null")
            declared = {c.name for c in spec.counters}
            for i, u in enumerate(spec.updates):
                if u.counter not in declared:
                    raise ValidationError(f"{where}.spec.updates[{i}].counter", f"undeclared counter {u.counter!r}")
                ok = u.delta == "count" or (isinstance(u.delta, str) and u.delta.startswith("qty:") and len(u.delta) > 4)
                ok = ok or (isinstance(u.delta, int) and not isinstance(u.delta, bool))
                if not ok:
                    raise ValidationError(f"{where}.spec.updates[{i}].delta", "must be 'count', 'qty:<name>' or an integer")
        elif isinstance(spec, TemporalSpec):
            if not isinstance(spec.k, int) or isinstance(spec.k, bool) or spec.k < 0:
                raise ValidationError(f"{where}.spec.k", "must be a non-negative integer")


def _validate_monitor(spec: MonitorSpec, layer_id: str, where: str) -> None:
    states = set(spec.states)
    if len(states) != len(spec.states):
        raise ValidationError(f"{where}.spec.states", "duplicate state")
    if REJECT_SINK in states:
        raise ValidationError(f"{where}.spec.states", f"{REJECT_SINK!r} is reserved")
    if spec.initial not in states:
        raise ValidationError(f"{where}.spec.initial", f"{spec.initial!r} is not a declared state")
    if not spec.accepting <= states:
        raise ValidationError(f"{where}.spec.accepting", "accepting states must be declared")
    for i, tr in enumerate(spec.transitions):
        if tr.source not in states or tr.target not in states:
            raise ValidationError(f"{where}.spec.transitions[{i}]", "endpoint is not a declared state")
    missing = [s for s in spec.states if s not in spec.default]
    if missing:
        raise ValidationError(f"{where}.spec.default", f"no default rule for state {missing[0]!r}")
    extra = set(spec.default) - states
    if extra:
        raise ValidationError(f"{where}.spec.default", f"default for undeclared state {sorted(extra)[0]!r}")
    overlaps = monitor_overlaps(spec)
    if overlaps:
        state, i, j = overlaps[0]
        raise NondeterministicMonitor(layer_id, state, i, j)


def lint_report(raw: Any) -> dict[str, Any]:
    """Validate a policy document and describe the determinism check per monitor layer."""
    policy = policy_from_dict(raw)
    report: dict[str, Any] = {"version": policy.version, "layers": [], "ok": True, "error": None}
    for layer in policy.layers:
        entry: dict[str, Any] = {"layer_id": layer.layer_id, "kind": layer.kind.value}
        if isinstance(layer.spec, MonitorSpec):
            pairs = [
                (i, j)
                for (i, t1), (j, t2) in combinations(enumerate(layer.spec.transitions), 2)
                if t1.source == t2.source
            ]
            overlaps = monitor_overlaps(layer.spec)
            entry.update(
                pairs_checked=len(pairs),
                deterministic=not overlaps,
                overlaps=[{"state": s, "transitions": [i, j]} for s, i, j in overlaps],
            )
        report["layers"].append(entry)
    try:
        validate_policy(policy)
    except ValidationError as exc:
        report["ok"] = False
        report["error"] = str(exc)
    return report


def iter_predicates(layer: PolicyLayer) -> Iterable[Predicate]:
    spec = layer.spec
    if isinstance(spec, MonitorSpec):
        yield from (t.on for t in spec.transitions)
    elif isinstance(spec, CounterSpec):
        yield from (u.on for u in spec.updates)
    elif isinstance(spec, TemporalSpec):
        yield spec.a
        yield spec.b
