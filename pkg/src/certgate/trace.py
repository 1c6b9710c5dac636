"""Trace universe: events, proposed and realized traces, canonical bytes, hashes.

All values are immutable once built. Construction does not validate; call
:func:`validate_trace` (``parse_trace`` does it for you) before relying on the
invariants.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Any, Mapping, Union

from certgate.errors import OutOfRange, ParseError, ValidationError

OBSERVED = "observed"
CONSTRAINT = "constraint"


class EventKind(str, Enum):
    QUERY = "Query"
    RETRIEVAL = "Retrieval"
    TOOL_CALL = "ToolCall"
    COMPUTATION = "Computation"
    CLAIM = "Claim"
    APPROVAL = "Approval"
    MEMORY_WRITE = "MemoryWrite"
    RELEASE = "Release"
    EXECUTION_CALL = "ExecutionCall"


class Tier(IntEnum):
    C0 = 0
    C1 = 1
    C2 = 2
    C3 = 3
    C4 = 4
    C5 = 5

    @classmethod
    def parse(cls, text: str) -> "Tier":
        try:
            return cls[text]
        except KeyError:
            raise ValueError(f"unknown risk tier {text!r}") from None


class Outcome(str, Enum):
    COMPLETED = "Completed"
    HALTED = "Halted"
    ROLLED_BACK = "RolledBack"
    ESCALATED = "Escalated"


@dataclass(frozen=True, order=True)
class Bp:
    """A decimal quantity held as integer basis points (1 bp = 0.0001)."""

    bp: int

    def __str__(self) -> str:
        return f"{self.bp}bp"


Scalar = Union[str, int, Bp]


@dataclass(frozen=True)
class TraceEvent:
    event_id: str
    tick: int
    kind: EventKind
    principal: str
    component: str
    resource: str | None = None
    data_class: str | None = None
    purpose: str | None = None
    params: Mapping[str, Scalar] = field(default_factory=dict)
    quantity_deltas: Mapping[str, int] = field(default_factory=dict)
    evidence_refs: tuple[str, ...] = ()
    observation_slot: bool = False
    irreversible: bool = False


@dataclass(frozen=True)
class ProposedTrace:
    trace_id: str
    proposer_id: str
    task: str
    declared_tier: Tier
    requested_policy_version: str
    events: tuple[TraceEvent, ...]
    execution_conditions: Mapping[str, Scalar] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class Deviation:
    event_id: str
    field: str
    expected: Any
    observed: Any


@dataclass(frozen=True)
class RealizedTrace:
    trace_id: str
    events: tuple[TraceEvent, ...]
    outcome: Outcome
    deviation_log: tuple[Deviation, ...] = ()


# ---------------------------------------------------------------------------
# observation-slot constraints


@dataclass(frozen=True)
class Constraint:
    """Declared contract for a value the environment fills in at execution time.

    Text forms: ``any``, ``eq:<value>``, ``range:<lo>:<hi>`` (inclusive, integers
    or basis points).
    """

    op: str
    args: tuple[Any, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "Constraint":
        if not isinstance(text, str):
            raise ValueError("constraint must be text")
        if text == "any":
            return cls("any")
        head, _, rest = text.partition(":")
        if head == "eq" and rest:
            return cls("eq", (_coerce_text(rest),))
        if head == "range":
            lo, sep, hi = rest.partition(":")
            try:
                lo_v, hi_v = int(lo), int(hi)
            except ValueError:
                raise ValueError(f"bad range constraint {text!r}") from None
            if not sep or lo_v > hi_v:
                raise ValueError(f"bad range constraint {text!r}")
            return cls("range", (lo_v, hi_v))
        raise ValueError(f"unknown constraint {text!r}")

    def satisfied_by(self, value: Any) -> bool:
        if value is None:
            return False
        if self.op == "any":
            return True
        if self.op == "eq":
            return _numeric(value) == _numeric(self.args[0]) if _is_num(value) else value == self.args[0]
        lo, hi = self.args
        if not _is_num(value):
            return False
        return lo <= _numeric(value) <= hi


def _coerce_text(text: str) -> Scalar:
    try:
        return int(text)
    except ValueError:
        return text


def _is_num(value: Any) -> bool:
    return isinstance(value, Bp) or (isinstance(value, int) and not isinstance(value, bool))


def _numeric(value: Any) -> Any:
    return value.bp if isinstance(value, Bp) else value


# ---------------------------------------------------------------------------
# JSON encoding


def scalar_to_json(value: Scalar) -> Any:
    if isinstance(value, Bp):
        return {"bp": value.bp}
    return value


def scalar_from_json(raw: Any, where: str) -> Scalar:
    if isinstance(raw, dict):
        if set(raw) != {"bp"} or not _is_int(raw["bp"]):
            raise ValidationError(where, "decimal must be encoded as {\"bp\": integer}")
        return Bp(raw["bp"])
    if isinstance(raw, str) or _is_int(raw):
        return raw
    raise ValidationError(where, f"unsupported scalar {raw!r}")


def _is_int(raw: Any) -> bool:
    return isinstance(raw, int) and not isinstance(raw, bool)


def event_to_dict(ev: TraceEvent) -> dict[str, Any]:
    return {
        "event_id": ev.event_id,
        "tick": ev.tick,
        "kind": ev.kind.value,
        "principal": ev.principal,
        "component": ev.component,
        "resource": ev.resource,
        "data_class": ev.data_class,
        "purpose": ev.purpose,
        "params": {k: scalar_to_json(v) for k, v in ev.params.items()},
        "quantity_deltas": dict(ev.quantity_deltas),
        "evidence_refs": list(ev.evidence_refs),
        "observation_slot": ev.observation_slot,
        "irreversible": ev.irreversible,
    }


_EVENT_REQUIRED = ("event_id", "tick", "kind", "principal", "component")


def event_from_dict(raw: Any, where: str = "events[?]") -> TraceEvent:
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: event must be an object")
    for key in _EVENT_REQUIRED:
        if key not in raw:
            raise ValidationError(f"{where}.{key}", "missing")
    if not isinstance(raw["event_id"], str) or not raw["event_id"]:
        raise ValidationError(f"{where}.event_id", "must be a nonempty string")
    if not _is_int(raw["tick"]):
        raise ValidationError(f"{where}.tick", "must be an integer")
    try:
        kind = EventKind(raw["kind"])
    except ValueError:
        raise ValidationError(f"{where}.kind", f"unknown event kind {raw['kind']!r}") from None
    for key in ("principal", "component"):
        if not isinstance(raw[key], str):
            raise ValidationError(f"{where}.{key}", "must be a string")
    for key in ("resource", "data_class", "purpose"):
        if raw.get(key) is not None and not isinstance(raw[key], str):
            raise ValidationError(f"{where}.{key}", "must be a string or null")
    params_raw = raw.get("params", {})
    if not isinstance(params_raw, dict):
        raise ValidationError(f"{where}.params", "must be an object")
    params = {k: scalar_from_json(v, f"{where}.params.{k}") for k, v in params_raw.items()}
    deltas_raw = raw.get("quantity_deltas", {})
    if not isinstance(deltas_raw, dict) or not all(_is_int(v) for v in deltas_raw.values()):
        raise ValidationError(f"{where}.quantity_deltas", "must map names to integers")
    refs = raw.get("evidence_refs", [])
    if not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
        raise ValidationError(f"{where}.evidence_refs", "must be a list of event ids")
    for key in ("observation_slot", "irreversible"):
        if not isinstance(raw.get(key, False), bool):
            raise ValidationError(f"{where}.{key}", "must be a boolean")
    extra = set(raw) - set(event_to_dict(TraceEvent("x", 0, EventKind.QUERY, "", "")))
    if extra:
        raise ValidationError(f"{where}", f"unknown fields {sorted(extra)}")
    return TraceEvent(
        event_id=raw["event_id"],
        tick=raw["tick"],
        kind=kind,
        principal=raw["principal"],
        component=raw["component"],
        resource=raw.get("resource"),
        data_class=raw.get("data_class"),
        purpose=raw.get("purpose"),
        params=params,
        quantity_deltas=dict(deltas_raw),
        evidence_refs=tuple(refs),
        observation_slot=raw.get("observation_slot", False),
        irreversible=raw.get("irreversible", False),
    )


def trace_to_dict(trace: ProposedTrace) -> dict[str, Any]:
    return {
        "trace_id": trace.trace_id,
        "proposer_id": trace.proposer_id,
        "task": trace.task,
        "declared_tier": trace.declared_tier.name,
        "requested_policy_version": trace.requested_policy_version,
        "execution_conditions": {k: scalar_to_json(v) for k, v in trace.execution_conditions.items()},
        "events": [event_to_dict(e) for e in trace.events],
    }


_TRACE_KEYS = {
    "trace_id",
    "proposer_id",
    "task",
    "declared_tier",
    "requested_policy_version",
    "execution_conditions",
    "events",
}


def trace_from_dict(raw: Any) -> ProposedTrace:
    if not isinstance(raw, dict):
        raise ParseError("trace document must be a JSON object")
    missing = _TRACE_KEYS - set(raw) - {"execution_conditions"}
    if missing:
        raise ValidationError(sorted(missing)[0], "missing")
    extra = set(raw) - _TRACE_KEYS
    if extra:
        raise ValidationError(sorted(extra)[0], "unknown top-level key")
    for key in ("trace_id", "proposer_id", "task", "requested_policy_version"):
        if not isinstance(raw[key], str):
            raise ValidationError(key, "must be a string")
    try:
        tier = Tier.parse(raw["declared_tier"])
    except (ValueError, TypeError):
        raise ValidationError("declared_tier", f"must be one of C0..C5, got {raw['declared_tier']!r}") from None
    if not isinstance(raw["events"], list):
        raise ValidationError("events", "must be a list")
    cond_raw = raw.get("execution_conditions", {})
    if not isinstance(cond_raw, dict):
        raise ValidationError("execution_conditions", "must be an object")
    return ProposedTrace(
        trace_id=raw["trace_id"],
        proposer_id=raw["proposer_id"],
        task=raw["task"],
        declared_tier=tier,
        requested_policy_version=raw["requested_policy_version"],
        events=tuple(event_from_dict(e, f"events[{i}]") for i, e in enumerate(raw["events"])),
        execution_conditions={
            k: scalar_from_json(v, f"execution_conditions.{k}") for k, v in cond_raw.items()
        },
    )


def canonical_bytes(doc: Any) -> bytes:
    """Sorted keys, no insignificant whitespace, ASCII only."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


def serialize_trace(trace: ProposedTrace) -> bytes:
    return canonical_bytes(trace_to_dict(trace))


def load_json(data: bytes | str, what: str) -> Any:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"{what} is not UTF-8: {exc}") from None
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} is not valid JSON: {exc}") from None


def parse_trace(data: bytes | str) -> ProposedTrace:
    trace = trace_from_dict(load_json(data, "trace"))
    validate_trace(trace)
    return trace


def validate_trace(trace: ProposedTrace) -> None:
    if not trace.trace_id:
        raise ValidationError("trace_id", "must be nonempty")
    if not trace.events:
        raise ValidationError("events", "must be nonempty")
    if not isinstance(trace.declared_tier, Tier):
        raise ValidationError("declared_tier", "must be one of C0..C5")
    _validate_events(trace.events, proposed=True)


def _validate_events(events: tuple[TraceEvent, ...], proposed: bool) -> None:
    seen: set[str] = set()
    last_tick = None
    for i, ev in enumerate(events):
        where = f"events[{i}]"
        if ev.event_id in seen:
            raise ValidationError(f"{where}.event_id", f"duplicate event_id {ev.event_id!r}")
        if ev.tick < 0:
            raise ValidationError(f"{where}.tick", "must be non-negative")
        if last_tick is not None and ev.tick < last_tick:
            raise ValidationError(f"{where}.tick", "ticks non-decreasing violated")
        for ref in ev.evidence_refs:
            if ref not in seen:
                raise ValidationError(f"{where}.evidence_refs", f"{ref!r} is not an earlier event")
        if ev.observation_slot:
            if CONSTRAINT not in ev.params:
                raise ValidationError(f"{where}.params", "observation slot needs a constraint")
            try:
                Constraint.parse(ev.params[CONSTRAINT])
            except ValueError as exc:
                raise ValidationError(f"{where}.params.constraint", str(exc)) from None
            if proposed and OBSERVED in ev.params:
                raise ValidationError(f"{where}.params", "observation slot fixes a value before execution")
        elif OBSERVED in ev.params:
            raise ValidationError(f"{where}.params", "'observed' is reserved for observation slots")
        seen.add(ev.event_id)
        last_tick = ev.tick


def validate_realized(realized: RealizedTrace) -> None:
    _validate_events(realized.events, proposed=False)
    if realized.outcome is Outcome.COMPLETED and realized.deviation_log:
        raise ValidationError("deviation_log", "a completed execution has no deviations")


def canonical_hash(trace: ProposedTrace) -> bytes:
    return hashlib.sha256(serialize_trace(trace)).digest()


def approval_subject_hash(trace: ProposedTrace) -> bytes:
    """Hash an approval must bind: the trace with its Approval events removed.

    An approval inside a trace cannot contain the hash of the bytes it is part
    of, so approvals bind everything else. For a trace without Approval events
    this is exactly :func:`canonical_hash`.
    """
    body = replace(trace, events=tuple(e for e in trace.events if e.kind is not EventKind.APPROVAL))
    return canonical_hash(body)


def prefix(trace: ProposedTrace, t: int) -> ProposedTrace:
    if not 0 <= t <= len(trace.events):
        raise OutOfRange(f"prefix length {t} outside [0, {len(trace.events)}]")
    return replace(trace, events=trace.events[:t])


def realized_to_dict(realized: RealizedTrace) -> dict[str, Any]:
    return {
        "trace_id": realized.trace_id,
        "outcome": realized.outcome.value,
        "events": [event_to_dict(e) for e in realized.events],
        "deviation_log": [
            {
                "event_id": d.event_id,
                "field": d.field,
                "expected": _jsonable(d.expected),
                "observed": _jsonable(d.observed),
            }
            for d in realized.deviation_log
        ],
    }


def realized_from_dict(raw: Any) -> RealizedTrace:
    if not isinstance(raw, dict):
        raise ParseError("realized trace must be a JSON object")
    return RealizedTrace(
        trace_id=raw["trace_id"],
        events=tuple(event_from_dict(e, f"events[{i}]") for i, e in enumerate(raw["events"])),
        outcome=Outcome(raw["outcome"]),
        deviation_log=tuple(
            Deviation(d["event_id"], d["field"], d["expected"], d["observed"]) for d in raw["deviation_log"]
        ),
    )


def _jsonable(value: Any) -> Any:
    if isinstance(value, Bp):
        return {"bp": value.bp}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, Mapping):
        return {k: _jsonable(v) for k, v in value.items()}
    return value
