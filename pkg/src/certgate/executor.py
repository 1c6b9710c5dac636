"""Certificate-gated execution against a simulated environment.

Nothing runs without a certificate that checks. Each event is compared with
its proposal before it is realized, so a deviation stops the run before any
later irreversible step happens.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from certgate.certifier import Certificate, check_certificate_detail
from certgate.errors import NoCertificate, ParseError, StaleCertificate, TraceMismatch
from certgate.memory import Ledger
from certgate.policy import PolicySystem
from certgate.trace import (
    CONSTRAINT,
    OBSERVED,
    Constraint,
    Deviation,
    EventKind,
    Outcome,
    ProposedTrace,
    RealizedTrace,
    TraceEvent,
    _jsonable,
    canonical_hash,
    load_json,
    scalar_from_json,
)

DEFAULT_VALIDITY = 50

_TOP_LEVEL = ("tick", "kind", "principal", "component", "resource", "data_class", "purpose", "irreversible")


@dataclass
class Environment:
    """Scripted tool behaviour plus deviations to inject.

    ``realized_log`` records every event the environment actually performed,
    in order; tests use it to check that nothing irreversible slipped through.
    """

    tool_behaviors: dict[str, dict[str, Any]] = field(default_factory=dict)
    deviation_injections: list[tuple[str, str, Any]] = field(default_factory=list)
    clock: int = 0
    realized_log: list[TraceEvent] = field(default_factory=list)

    def response(self, event: TraceEvent) -> Any:
        return self.tool_behaviors.get(event.component, {}).get(event.event_id)

    def perform(self, event: TraceEvent) -> None:
        self.realized_log.append(event)
        self.clock += 1


def environment_from_dict(raw: Any) -> Environment:
    if not isinstance(raw, dict):
        raise ParseError("environment must be a JSON object")
    behaviors = {
        comp: {eid: scalar_from_json(v, f"tool_behaviors.{comp}.{eid}") for eid, v in table.items()}
        for comp, table in raw.get("tool_behaviors", {}).items()
    }
    injections = []
    for i, item in enumerate(raw.get("deviation_injections", [])):
        if not (isinstance(item, (list, tuple)) and len(item) == 3):
            raise ParseError(f"deviation_injections[{i}] must be [event_id, field, value]")
        eid, fld, value = item
        injections.append((eid, fld, value if fld in ("irreversible",) else scalar_from_json(value, f"deviation_injections[{i}]")))
    return Environment(behaviors, injections, int(raw.get("clock", 0)))


def parse_environment(data: bytes | str) -> Environment:
    return environment_from_dict(load_json(data, "environment"))


@dataclass(frozen=True)
class ExecutionResult:
    realized: RealizedTrace
    halted_before: str | None
    ledger_seq: int | None


def _inject(event: TraceEvent, env: Environment) -> tuple[TraceEvent, Any]:
    """The event as the environment actually carries it out, plus any slot value."""
    observed = env.response(event) if event.observation_slot else None
    params = dict(event.params)
    qty = dict(event.quantity_deltas)
    changes: dict[str, Any] = {}
    for eid, fld, value in env.deviation_injections:
        if eid != event.event_id:
            continue
        if fld == OBSERVED:
            observed = value
        elif fld.startswith("params."):
            params[fld[7:]] = value
        elif fld.startswith("quantity_deltas."):
            qty[fld[16:]] = value
        elif fld in _TOP_LEVEL:
            changes[fld] = EventKind(value) if fld == "kind" else value
        else:
            raise ParseError(f"cannot inject into field {fld!r}")
    if event.observation_slot:
        params[OBSERVED] = observed
    return replace(event, params=params, quantity_deltas=qty, **changes), observed


def event_deviations(real: TraceEvent, prop: TraceEvent) -> list[Deviation]:
    out = []
    for name in ("event_id", *_TOP_LEVEL, "evidence_refs", "observation_slot"):
        want, got = getattr(prop, name), getattr(real, name)
        if want != got:
            out.append(Deviation(prop.event_id, name, want, got))
    real_params = {k: v for k, v in real.params.items() if k != OBSERVED}
    for key in sorted(set(prop.params) | set(real_params)):
        if prop.params.get(key) != real_params.get(key):
            out.append(Deviation(prop.event_id, f"params.{key}", prop.params.get(key), real_params.get(key)))
    for key in sorted(set(prop.quantity_deltas) | set(real.quantity_deltas)):
        if prop.quantity_deltas.get(key) != real.quantity_deltas.get(key):
            out.append(
                Deviation(prop.event_id, f"quantity_deltas.{key}", prop.quantity_deltas.get(key), real.quantity_deltas.get(key))
            )
    if prop.observation_slot:
        constraint = Constraint.parse(prop.params[CONSTRAINT])
        value = real.params.get(OBSERVED)
        if not constraint.satisfied_by(value):
            out.append(Deviation(prop.event_id, OBSERVED, prop.params[CONSTRAINT], value))
    return out


def conform(realized: RealizedTrace, proposed: ProposedTrace) -> tuple[bool, list[Deviation]]:
    if realized.trace_id != proposed.trace_id:
        raise TraceMismatch(f"realized {realized.trace_id!r} does not reference proposed {proposed.trace_id!r}")
    devs: list[Deviation] = []
    for real, prop in zip(realized.events, proposed.events):
        devs.extend(event_deviations(real, prop))
    for extra in realized.events[len(proposed.events) :]:
        devs.append(Deviation(extra.event_id, "extra event", None, extra.event_id))
    for missing in proposed.events[len(realized.events) :]:
        devs.append(Deviation(missing.event_id, "missing event", missing.event_id, None))
    return not devs, devs


def _deviation_json(d: Deviation) -> dict[str, Any]:
    return {"event_id": d.event_id, "field": d.field, "expected": _jsonable(d.expected), "observed": _jsonable(d.observed)}


def execute(
    trace: ProposedTrace,
    cert: Certificate | None,
    policy: PolicySystem,
    env: Environment,
    ledger: Ledger | None,
    key: bytes,
) -> ExecutionResult:
    thash = canonical_hash(trace).hex()

    def record(body: Mapping[str, Any]) -> int | None:
        if ledger is None:
            return None
        return ledger.append(trace_hash=thash, record=body, policy=policy, recorded_tick=env.clock).seq

    problems = ["no certificate presented"] if cert is None else check_certificate_detail(cert, trace, policy, key)
    if problems:
        record({"type": "refusal", "trace_id": trace.trace_id, "reasons": problems})
        raise NoCertificate(f"{trace.trace_id}: " + "; ".join(problems))
    valid_until = trace.execution_conditions.get("valid_until")
    if not isinstance(valid_until, int):
        valid_until = cert.issued_tick + DEFAULT_VALIDITY
    if env.clock > valid_until:
        record({"type": "refusal", "trace_id": trace.trace_id, "reasons": [f"certificate expired at tick {valid_until}"]})
        raise StaleCertificate(f"{trace.trace_id}: clock {env.clock} is past valid_until {valid_until}")

    realized: list[TraceEvent] = []
    deviations: list[Deviation] = []
    halted_before = None
    for prop in trace.events:
        candidate, _ = _inject(prop, env)
        deviations = event_deviations(candidate, prop)
        if deviations:
            halted_before = prop.event_id
            break
        env.perform(candidate)
        realized.append(candidate)

    if not deviations:
        outcome = Outcome.COMPLETED
    elif any(e.irreversible for e in realized):
        outcome = Outcome.ROLLED_BACK
        for ev in reversed(realized):
            record({"type": "compensation", "trace_id": trace.trace_id, "event_id": ev.event_id, "irreversible": ev.irreversible})
    else:
        outcome = Outcome.HALTED

    result = RealizedTrace(trace.trace_id, tuple(realized), outcome, tuple(deviations))
    seq = record(
        {
            "type": "execution",
            "trace_id": trace.trace_id,
            "outcome": outcome.value,
            "halted_before": halted_before,
            "realized": [e.event_id for e in realized],
            "deviations": [_deviation_json(d) for d in deviations],
        }
    )
    return ExecutionResult(result, halted_before, seq)
