import random

import pytest

from certgate.certifier import CertifierConfig
from certgate.memory import MemoryClass
from certgate.trace import EventKind, ProposedTrace, Tier, TraceEvent

KEY = b"test-key"


def make_cfg(**kw) -> CertifierConfig:
    base = dict(certifier_id="checker", authority_tier=Tier.C5, memory_class=MemoryClass.M2_Provenance, mac_key=KEY)
    base.update(kw)
    return CertifierConfig(**base)


def ev(eid, tick, kind, principal="agent", component="tool", **kw) -> TraceEvent:
    return TraceEvent(event_id=eid, tick=tick, kind=EventKind(kind), principal=principal, component=component, **kw)


def make_trace(events, version="v1", tier=Tier.C1, proposer="agent", trace_id="t", **kw) -> ProposedTrace:
    return ProposedTrace(trace_id, proposer, "test", tier, version, tuple(events), **kw)


def queries(n, start=0, step=1, resource="R", principal="agent"):
    return [ev(f"q{i}", start + i * step, "Query", principal=principal, component="search", resource=resource) for i in range(n)]


@pytest.fixture
def rng():
    return random.Random(1234)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
