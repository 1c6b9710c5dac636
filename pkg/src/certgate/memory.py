"""Proof memory: the certifier-visible state and the hash-chained ledger.

``update`` folds one event into a :class:`MemoryState` and returns a new
state; nothing is mutated in place. ``query`` answers proof-relevant facts,
gated by the caller's memory class. The :class:`Ledger` is append-only and
each entry commits to its predecessor.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterator, Mapping, Union

from certgate.errors import CapabilityDenied, ParseError, TimeRegression, TraceNotFound, UnknownFact
from certgate.policy import (
    REJECT_SINK,
    CounterSpec,
    MonitorSpec,
    Pattern,
    PermissibilityVerdict,
    PolicySystem,
    TemporalSpec,
    evaluate,
)
from certgate.trace import EventKind, ProposedTrace, TraceEvent, canonical_bytes, trace_from_dict

APPROVAL_VALIDITY = 100
GENESIS = "00" * 32

CounterKey = tuple[str, str, Union[str, None]]


class MemoryClass(IntEnum):
    M0_FiniteState = 0
    M1_Counter = 1
    M2_Provenance = 2
    M3_Persistent = 3


@dataclass(frozen=True)
class Approval:
    approver: str
    valid_from: int
    valid_until: int

    def covers(self, tick: int) -> bool:
        return self.valid_from <= tick <= self.valid_until


@dataclass(frozen=True)
class MemoryState:
    monitor_states: Mapping[str, str] = field(default_factory=dict)
    counters: Mapping[CounterKey, tuple[tuple[int, int], ...]] = field(default_factory=dict)
    provenance: Mapping[str, tuple[str, Union[str, None], Union[str, None]]] = field(default_factory=dict)
    approvals: Mapping[str, Approval] = field(default_factory=dict)
    # ResponseWithin obligations still open: layer_id -> ((event_id, deadline), ...)
    obligations: Mapping[str, tuple[tuple[str, int], ...]] = field(default_factory=dict)
    # first violation observed per layer: layer_id -> (event_id, reason)
    violations: Mapping[str, tuple[Union[str, None], str]] = field(default_factory=dict)
    last_updated_tick: int = 0


def update(
    state: MemoryState,
    event: TraceEvent,
    policy: PolicySystem | None = None,
    context: Mapping[str, TraceEvent] | None = None,
) -> MemoryState:
    if event.tick < state.last_updated_tick:
        raise TimeRegression(f"event {event.event_id} at tick {event.tick} < {state.last_updated_tick}")
    ctx = context or {}
    monitors = dict(state.monitor_states)
    counters = dict(state.counters)
    obligations = dict(state.obligations)
    violations = dict(state.violations)

    def flag(layer_id: str, event_id: str | None, reason: str) -> None:
        violations.setdefault(layer_id, (event_id, reason))

    for layer in policy.layers if policy else ():
        lid, spec = layer.layer_id, layer.spec
        if isinstance(spec, MonitorSpec):
            q = monitors.get(lid, spec.initial)
            nxt = spec.step(q, event, ctx)
            if nxt == REJECT_SINK and q != REJECT_SINK:
                flag(lid, event.event_id, f"no transition from state {q!r} and default is Reject")
            monitors[lid] = nxt
        elif isinstance(spec, CounterSpec):
            for upd in spec.updates:
                if upd.on.matches(event, ctx):
                    key = (upd.counter, event.principal, event.resource)
                    counters[key] = counters.get(key, ()) + ((event.tick, upd.amount(event)),)
            for c in spec.counters:
                for key in [k for k in counters if k[0] == c.name]:
                    kept = tuple(e for e in counters[key] if c.in_window(event.tick, e[0]))
                    if kept:
                        counters[key] = kept
                    else:
                        del counters[key]
        elif isinstance(spec, TemporalSpec):
            _step_temporal(lid, spec, event, ctx, monitors, obligations, flag)

    provenance = state.provenance
    if event.kind is EventKind.RETRIEVAL:
        provenance = {**provenance, event.event_id: (event.component, event.data_class, event.purpose)}
    approvals = state.approvals
    binds = event.params.get("binds")
    if event.kind is EventKind.APPROVAL and isinstance(binds, str):
        until = event.params.get("valid_until")
        if not isinstance(until, int):
            until = event.tick + APPROVAL_VALIDITY
        approvals = {**approvals, binds: Approval(event.principal, event.tick, until)}

    return MemoryState(monitors, counters, provenance, approvals, obligations, violations, event.tick)


def _step_temporal(lid, spec: TemporalSpec, event, ctx, monitors, obligations, flag) -> None:
    if spec.pattern is Pattern.PRECEDENCE:
        armed = monitors.get(lid) == "armed"
        if spec.b.matches(event, ctx) and not armed:
            flag(lid, event.event_id, "required predecessor has not occurred")
        if spec.a.matches(event, ctx):
            monitors[lid] = "armed"
        else:
            monitors.setdefault(lid, "waiting")
    elif spec.pattern is Pattern.ABSENCE_AFTER:
        triggered = monitors.get(lid) == "triggered"
        if triggered and spec.a.matches(event, ctx):
            flag(lid, event.event_id, "forbidden event after trigger")
        if spec.b.matches(event, ctx):
            monitors[lid] = "triggered"
        else:
            monitors.setdefault(lid, "open")
    else:
        pending = obligations.get(lid, ())
        for event_id, deadline in pending:
            if deadline < event.tick:
                flag(lid, event_id, f"no response within {spec.k} ticks")
        if spec.b.matches(event, ctx):
            pending = ()
        else:
            pending = tuple(p for p in pending if p[1] >= event.tick)
        if spec.a.matches(event, ctx):
            pending += ((event.event_id, event.tick + spec.k),)
        obligations[lid] = pending


def close_obligations(state: MemoryState, policy: PolicySystem) -> MemoryState:
    """End of trace: every still-open ResponseWithin obligation is a violation."""
    violations = dict(state.violations)
    for layer in policy.layers:
        spec = layer.spec
        if isinstance(spec, TemporalSpec) and spec.pattern is Pattern.RESPONSE_WITHIN:
            for event_id, _ in state.obligations.get(layer.layer_id, ()):
                violations.setdefault(layer.layer_id, (event_id, f"no response within {spec.k} ticks"))
                break
    return replace(state, violations=violations)


# ---------------------------------------------------------------------------
# fact queries


@dataclass(frozen=True)
class MonitorFact:
    layer_id: str


@dataclass(frozen=True)
class ViolationFact:
    layer_id: str


@dataclass(frozen=True)
class CounterFact:
    name: str
    principal: str
    resource: str | None
    now: int
    window: int | None = None


@dataclass(frozen=True)
class CounterKeysFact:
    name: str


@dataclass(frozen=True)
class ObligationFact:
    layer_id: str


@dataclass(frozen=True)
class ProvenanceFact:
    event_id: str


@dataclass(frozen=True)
class ApprovalFact:
    subject_hash: str


@dataclass(frozen=True)
class LedgerFact:
    trace_hash: str


_REQUIRED_CLASS = {
    MonitorFact: MemoryClass.M0_FiniteState,
    ViolationFact: MemoryClass.M0_FiniteState,
    CounterFact: MemoryClass.M1_Counter,
    CounterKeysFact: MemoryClass.M1_Counter,
    ObligationFact: MemoryClass.M1_Counter,
    ProvenanceFact: MemoryClass.M2_Provenance,
    ApprovalFact: MemoryClass.M2_Provenance,
    LedgerFact: MemoryClass.M3_Persistent,
}


def required_class(fact: Any) -> MemoryClass:
    try:
        return _REQUIRED_CLASS[type(fact)]
    except KeyError:
        raise UnknownFact(f"unrecognised fact query {fact!r}") from None


def query(state: MemoryState, fact: Any, memory_class: MemoryClass, ledger: "Ledger | None" = None) -> Any:
    need = required_class(fact)
    if memory_class < need:
        raise CapabilityDenied(f"{type(fact).__name__} needs {need.name}, caller has {memory_class.name}")
    if isinstance(fact, MonitorFact):
        return state.monitor_states.get(fact.layer_id)
    if isinstance(fact, ViolationFact):
        return state.violations.get(fact.layer_id)
    if isinstance(fact, CounterFact):
        entries = state.counters.get((fact.name, fact.principal, fact.resource), ())
        return sum(d for t, d in entries if fact.window is None or fact.now - t < fact.window)
    if isinstance(fact, CounterKeysFact):
        return sorted((k for k in state.counters if k[0] == fact.name), key=repr)
    if isinstance(fact, ObligationFact):
        return state.obligations.get(fact.layer_id, ())
    if isinstance(fact, ProvenanceFact):
        return state.provenance.get(fact.event_id)
    if isinstance(fact, ApprovalFact):
        return state.approvals.get(fact.subject_hash)
    if ledger is None:
        raise UnknownFact("ledger lookup without a ledger handle")
    return tuple(ledger.find(fact.trace_hash))


# ---------------------------------------------------------------------------
# JSON form (CLI --memory files)


def memory_to_dict(state: MemoryState) -> dict[str, Any]:
    return {
        "monitor_states": dict(state.monitor_states),
        "counters": [
            {"counter": k[0], "principal": k[1], "resource": k[2], "entries": [list(e) for e in v]}
            for k, v in sorted(state.counters.items(), key=lambda kv: repr(kv[0]))
        ],
        "provenance": {k: list(v) for k, v in state.provenance.items()},
        "approvals": {
            k: {"approver": a.approver, "valid_from": a.valid_from, "valid_until": a.valid_until}
            for k, a in state.approvals.items()
        },
        "obligations": {k: [list(p) for p in v] for k, v in state.obligations.items()},
        "violations": {k: list(v) for k, v in state.violations.items()},
        "last_updated_tick": state.last_updated_tick,
    }


def memory_from_dict(raw: Any) -> MemoryState:
    if not isinstance(raw, dict):
        raise ParseError("memory document must be a JSON object")
    try:
        return MemoryState(
            monitor_states=dict(raw.get("monitor_states", {})),
            counters={
                (c["counter"], c["principal"], c.get("resource")): tuple((int(t), int(d)) for t, d in c["entries"])
                for c in raw.get("counters", [])
            },
            provenance={k: tuple(v) for k, v in raw.get("provenance", {}).items()},
            approvals={k: Approval(**v) for k, v in raw.get("approvals", {}).items()},
            obligations={k: tuple((p[0], int(p[1])) for p in v) for k, v in raw.get("obligations", {}).items()},
            violations={k: (v[0], v[1]) for k, v in raw.get("violations", {}).items()},
            last_updated_tick=int(raw.get("last_updated_tick", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed memory document: {exc}") from None


# ---------------------------------------------------------------------------
# ledger


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    trace_hash: str
    record: Mapping[str, Any]
    policy_version: str
    policy_source: str
    policy_effective_from: int
    recorded_tick: int
    prev_hash: str
    entry_hash: str

    def body(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "trace_hash": self.trace_hash,
            "record": self.record,
            "policy_version": self.policy_version,
            "policy_source": self.policy_source,
            "policy_effective_from": self.policy_effective_from,
            "recorded_tick": self.recorded_tick,
        }

    def to_dict(self) -> dict[str, Any]:
        return {**self.body(), "prev_hash": self.prev_hash, "entry_hash": self.entry_hash}

    def line(self) -> bytes:
        return canonical_bytes(self.to_dict()) + b"\n"

    @property
    def was_certified(self) -> bool:
        return self.record.get("type") == "certification" and self.record.get("outcome") == "Certified"


def chain_hash(body: Mapping[str, Any], prev_hash: str) -> str:
    return hashlib.sha256(canonical_bytes(body) + bytes.fromhex(prev_hash)).hexdigest()


def _entry_from_dict(raw: Mapping[str, Any]) -> LedgerEntry:
    return LedgerEntry(
        seq=raw["seq"],
        trace_hash=raw["trace_hash"],
        record=raw["record"],
        policy_version=raw["policy_version"],
        policy_source=raw["policy_source"],
        policy_effective_from=raw["policy_effective_from"],
        recorded_tick=raw["recorded_tick"],
        prev_hash=raw["prev_hash"],
        entry_hash=raw["entry_hash"],
    )


class Ledger:
    """Append-only, hash-chained record of certifications and executions.

    With a ``path`` every append is written as one JSON line and fsynced
    before returning. Appends are serialized through a lock.
    """

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: list[LedgerEntry] = []
        if self._path is not None and self._path.exists():
            for i, line in enumerate(self._path.read_bytes().splitlines()):
                if not line.strip():
                    continue
                try:
                    self._entries.append(_entry_from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError(f"ledger line {i} is malformed: {exc}") from None

    @property
    def path(self) -> Path | None:
        return self._path

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        return iter(tuple(self._entries))

    def __getitem__(self, seq: int) -> LedgerEntry:
        return self._entries[seq]

    @property
    def head_hash(self) -> str:
        return self._entries[-1].entry_hash if self._entries else GENESIS

    def append(
        self,
        *,
        trace_hash: str,
        record: Mapping[str, Any],
        policy: PolicySystem | None = None,
        recorded_tick: int = 0,
    ) -> LedgerEntry:
        with self._lock:
            prev = self.head_hash
            body = {
                "seq": len(self._entries),
                "trace_hash": trace_hash,
                # round-trip through JSON so the stored record is exactly what hashes
                "record": json.loads(canonical_bytes(dict(record))),
                "policy_version": policy.version if policy else "",
                "policy_source": policy.source if policy else "",
                "policy_effective_from": policy.effective_from if policy else 0,
                "recorded_tick": recorded_tick,
            }
            entry = _entry_from_dict({**body, "prev_hash": prev, "entry_hash": chain_hash(body, prev)})
            if self._path is not None:
                with open(self._path, "ab") as fh:
                    fh.write(entry.line())
                    fh.flush()
                    os.fsync(fh.fileno())
            self._entries.append(entry)
            return entry

    def find(self, trace_hash: str) -> list[LedgerEntry]:
        return [e for e in self._entries if e.trace_hash == trace_hash]

    def trace_store(self) -> dict[str, ProposedTrace]:
        store = {}
        for e in self._entries:
            raw = e.record.get("trace")
            if raw is not None:
                store[e.trace_hash] = trace_from_dict(raw)
        return store

    def to_bytes(self) -> bytes:
        return b"".join(e.line() for e in self._entries)


def append_ledger(ledger: Ledger, body: Mapping[str, Any]) -> LedgerEntry:
    """Append ``body`` (trace_hash, record, optional policy, recorded_tick)."""
    return ledger.append(**body)


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    first_bad_seq: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(source: Ledger | bytes | str | os.PathLike) -> ChainReport:
    """Recompute every link. Works on the raw file bytes, so any edit shows."""
    if isinstance(source, Ledger):
        data = source.to_bytes()
    elif isinstance(source, bytes):
        data = source
    else:
        data = Path(source).read_bytes()
    if not data:
        return ChainReport(True)
    if not data.endswith(b"\n"):
        lines = data.split(b"\n")
        return ChainReport(False, len(lines) - 1, "file does not end with a newline")
    prev = GENESIS
    for seq, line in enumerate(data[:-1].split(b"\n")):
        entry_hash, reason = _check_line(line, seq, prev)
        if entry_hash is None:
            return ChainReport(False, seq, reason)
        prev = entry_hash
    return ChainReport(True)


@lru_cache(maxsize=4096)
def _check_line(line: bytes, seq: int, prev: str) -> tuple[str | None, str]:
    """Verify one stored line given its position and predecessor; pure, so cached."""
    try:
        raw = json.loads(line.decode("ascii"))
        entry = _entry_from_dict(raw)
    except (ValueError, KeyError, TypeError) as exc:
        return None, f"unparseable entry: {exc}"
    if canonical_bytes(raw) != line:
        return None, "entry is not in canonical form"
    if entry.seq != seq:
        return None, f"sequence number {entry.seq} out of order"
    if entry.prev_hash != prev:
        return None, "prev_hash does not link to the previous entry"
    try:
        expected = chain_hash(entry.body(), entry.prev_hash)
    except (ValueError, TypeError) as exc:
        return None, f"cannot rehash entry: {exc}"
    if entry.entry_hash != expected:
        return None, "entry_hash does not match contents"
    return entry.entry_hash, ""


# ---------------------------------------------------------------------------
# re-certification under policy change


@dataclass(frozen=True)
class Recertification:
    verdict: PermissibilityVerdict
    drift: bool
    ledger_seq: int | None = None


def recertify(
    entry: LedgerEntry,
    new_policy: PolicySystem,
    trace_store: Mapping[str, ProposedTrace],
    ledger: Ledger | None = None,
    recorded_tick: int | None = None,
) -> Recertification:
    trace = trace_store.get(entry.trace_hash)
    if trace is None:
        raise TraceNotFound(entry.trace_hash)
    verdict = evaluate(new_policy, trace)
    drift = entry.was_certified and not verdict.permitted
    seq = None
    if ledger is not None:
        recorded = ledger.append(
            trace_hash=entry.trace_hash,
            record={
                "type": "recertification",
                "of_seq": entry.seq,
                "from_version": entry.policy_version,
                "permitted": verdict.permitted,
                "failing_layers": verdict.failing(),
                "drift": drift,
            },
            policy=new_policy,
            recorded_tick=entry.recorded_tick if recorded_tick is None else recorded_tick,
        )
        seq = recorded.seq
    return Recertification(verdict, drift, seq)
