"""Certification-boundary measures over a template-based trace generator.

A generator is a weighted mixture of templates. Each template is a product of
finite choice dimensions with exact rational weights, so the same object can
be enumerated (every trace with its probability) or sampled. Each trace lands
in one of four cells (permissible or not, certified or not) and the measures
are read off the cell masses.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

from certgate.certifier import Certified, CertifierConfig, certify
from certgate.errors import UniverseTooLarge, ValidationError
from certgate.memory import Ledger, MemoryState, recertify
from certgate.policy import PolicySystem, evaluate
from certgate.trace import Bp, EventKind, ProposedTrace, Tier, TraceEvent, approval_subject_hash

KNOBS = ("p_over_budget", "p_over_exposure", "p_missing_approval", "p_unauthorized_source", "p_bad_compute")
MAX_UNIVERSE = 10**6
Z95 = 1.959963984540054

MemoryFactory = Callable[[], MemoryState]


def exact(p: Any) -> Fraction:
    """Knob value as an exact rational; floats go through their decimal text."""
    if isinstance(p, Fraction):
        return p
    if isinstance(p, float):
        return Fraction(str(p))
    return Fraction(p)


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class Dimension:
    name: str
    options: tuple[tuple[Any, Fraction], ...]  # (value, weight); zero weights dropped


def _dim(name: str, pairs: Iterable[tuple[Any, Fraction]]) -> Dimension:
    return Dimension(name, tuple((v, w) for v, w in pairs if w > 0))


def _trace(name: str, version: str, choices: tuple, events: list[TraceEvent], tier: Tier = Tier.C1) -> ProposedTrace:
    tag = "-".join(str(c) for c in choices)
    return ProposedTrace(f"{name}-{tag}", "agent", name, tier, version, tuple(events))


class Template:
    name = ""

    def dimensions(self, knobs: Mapping[str, Fraction], horizon: int, params: Mapping[str, Any]) -> list[Dimension]:
        raise NotImplementedError

    def build(self, choices: tuple, version: str, params: Mapping[str, Any]) -> ProposedTrace:
        raise NotImplementedError


class QueryBurst(Template):
    """Queries on one resource; long bursts are drawn with ``p_over_budget``.

    Each gap between consecutive queries is one tick, or three ticks with
    probability ``p_spread``, so some long bursts still fit a budget window.
    ``p_release`` appends a clean final Release.
    """

    name = "query_burst"

    def dimensions(self, knobs, horizon, params):
        p = knobs["p_over_budget"]
        budget = int(params.get("budget", 5))
        short = list(range(1, min(budget, horizon) + 1))
        long = list(range(budget + 1, horizon + 1))
        if not long:
            lengths = [(n, Fraction(1, len(short))) for n in short]
        else:
            lengths = [(n, (1 - p) / len(short)) for n in short] + [(n, p / len(long)) for n in long]
        spread = exact(params.get("p_spread", Fraction(1, 4)))
        release = exact(params.get("p_release", 0))
        gaps = [_dim(f"gap{i}", [(1, 1 - spread), (3, spread)]) for i in range(1, horizon)]
        return [_dim("length", lengths), *gaps, _dim("release", [(0, 1 - release), (1, release)])]

    def build(self, choices, version, params):
        length, *gaps, release = choices
        ticks = [0]
        for g in gaps[: length - 1]:
            ticks.append(ticks[-1] + g)
        events = [TraceEvent(f"q{i}", t, EventKind.QUERY, "agent", "search", resource="R") for i, t in enumerate(ticks)]
        if release:
            events.append(TraceEvent("out", ticks[-1] + 1, EventKind.RELEASE, "agent", "mail", purpose="report", irreversible=True))
        return _trace(self.name, version, choices, events)


class ExposureOrders(Template):
    """Orders of +1000 bp each on one book; three or more breach a 2000 bp limit."""

    name = "exposure_orders"

    def dimensions(self, knobs, horizon, params):
        p = knobs["p_over_exposure"]
        return [_dim("orders", [(1, (1 - p) / 2), (2, (1 - p) / 2), (3, p / 2), (4, p / 2)])]

    def build(self, choices, version, params):
        (n,) = choices
        events = [
            TraceEvent(
                f"o{i}",
                i,
                EventKind.EXECUTION_CALL,
                "agent",
                "broker",
                resource="book",
                params={"size": Bp(1000)},
                quantity_deltas={"exposure": 1000},
                irreversible=True,
            )
            for i in range(n)
        ]
        return _trace(self.name, version, choices, events, Tier.C3)


class PaymentWithApproval(Template):
    """Invoice lookup, controller approval, payment.

    The approval may be missing, bound to another trace, or expired by the
    time the payment runs.
    """

    name = "payment_with_approval"

    def dimensions(self, knobs, horizon, params):
        p = knobs["p_missing_approval"]
        return [_dim("approval", [("ok", 1 - p), ("missing", p / 2), ("wrongbind", p / 4), ("stale", p / 4)])]

    def build(self, choices, version, params):
        (mode,) = choices
        pay = TraceEvent(
            "pay", 5, EventKind.EXECUTION_CALL, "agent", "bank", resource="payments", params={"amount": 500}, irreversible=True
        )
        events = [TraceEvent("inv", 0, EventKind.QUERY, "agent", "erp", resource="invoices")]
        if mode != "missing":
            events.append(TraceEvent("ok", 1, EventKind.APPROVAL, "controller", "workflow"))
        events.append(pay)
        trace = _trace(self.name, version, choices, events, Tier.C4)
        if mode == "missing":
            return trace
        subject = approval_subject_hash(trace).hex()
        approval_params: dict[str, Any] = {"binds": subject if mode != "wrongbind" else "0" * 63 + "1"}
        if mode == "stale":
            approval_params["valid_until"] = 2
        events[1] = TraceEvent("ok", 1, EventKind.APPROVAL, "controller", "workflow", params=approval_params)
        return _trace(self.name, version, choices, events, Tier.C4)


class FilingClaim(Template):
    """Retrieve figures, compute a margin, claim it; source and arithmetic can go wrong."""

    name = "filing_claim"

    def dimensions(self, knobs, horizon, params):
        pu, pb = knobs["p_unauthorized_source"], knobs["p_bad_compute"]
        return [
            _dim("source", [("vault", 1 - pu), ("scraper", pu)]),
            _dim("compute", [("good", 1 - pb), ("bad", pb)]),
        ]

    def build(self, choices, version, params):
        source, compute = choices
        result = 400 if compute == "good" else 401
        events = [
            TraceEvent(
                "src", 0, EventKind.RETRIEVAL, "agent", source, resource="10-K", data_class="fin", purpose="filing",
                params={"revenue": 1200, "cost": 800},
            ),
            TraceEvent(
                "calc", 1, EventKind.COMPUTATION, "agent", "calc", purpose="filing",
                params={"expr": "revenue - cost", "result": result}, evidence_refs=("src",),
            ),
            TraceEvent("claim", 2, EventKind.CLAIM, "agent", "report", purpose="filing", params={"value": result}, evidence_refs=("calc",)),
        ]
        return _trace(self.name, version, choices, events, Tier.C2)


TEMPLATES: dict[str, Template] = {t.name: t for t in (QueryBurst(), ExposureOrders(), PaymentWithApproval(), FilingClaim())}


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class TemplateSpec:
    name: str
    weight: Fraction
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int
    templates: tuple[TemplateSpec, ...]
    knobs: Mapping[str, Fraction]
    horizon: int = 7
    mode: str = "exact"  # "exact" or "sample"
    n: int = 0  # sample size, or the universe cap in exact mode

    def __post_init__(self) -> None:
        if not self.templates:
            raise ValidationError("templates", "at least one template is required")
        if sum(t.weight for t in self.templates) != 1:
            raise ValidationError("templates", "weights must sum to 1")
        for t in self.templates:
            if t.name not in TEMPLATES:
                raise ValidationError("templates", f"unknown template {t.name!r}")
            if t.weight < 0:
                raise ValidationError("templates", "weights must be non-negative")
        for k, v in self.knobs.items():
            if k not in KNOBS:
                raise ValidationError(f"knobs.{k}", "unknown knob")
            if not 0 <= v <= 1:
                raise ValidationError(f"knobs.{k}", "must lie in [0, 1]")
        if self.mode not in ("exact", "sample"):
            raise ValidationError("mode", "must be exact or sample")
        if self.mode == "sample" and self.n < 1:
            raise ValidationError("n", "sample mode needs n >= 1")

    def knob_values(self) -> dict[str, Fraction]:
        return {k: exact(self.knobs.get(k, 0)) for k in KNOBS}

    def dims(self) -> list[tuple[TemplateSpec, list[Dimension]]]:
        knobs = self.knob_values()
        return [(t, TEMPLATES[t.name].dimensions(knobs, self.horizon, t.params)) for t in self.templates if t.weight > 0]

    def universe_size(self) -> int:
        return sum(math.prod(len(d.options) for d in dims) for _, dims in self.dims())

    def enumerate(self) -> Iterator[tuple[TemplateSpec, tuple, Fraction]]:
        for spec, dims in self.dims():
            for combo in itertools.product(*(d.options for d in dims)):
                yield spec, tuple(v for v, _ in combo), spec.weight * math.prod((w for _, w in combo), start=Fraction(1))

    def sample(self, n: int, seed: int | None = None) -> Iterator[tuple[TemplateSpec, tuple]]:
        rng = random.Random(self.seed if seed is None else seed)
        table = self.dims()
        tweights = [float(t.weight) for t, _ in table]
        for _ in range(n):
            spec, dims = rng.choices(table, weights=tweights)[0]
            yield spec, tuple(rng.choices([v for v, _ in d.options], weights=[float(w) for _, w in d.options])[0] for d in dims)


def generator_from_dict(raw: Mapping[str, Any]) -> GeneratorSpec:
    try:
        templates = tuple(
            TemplateSpec(t["name"], exact(t.get("weight", 1)), dict(t.get("params", {}))) for t in raw["templates"]
        )
        mode_text = str(raw.get("mode", "exact"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError("generator", f"malformed generator: {exc}") from None
    mode, _, count = mode_text.partition(":")
    return GeneratorSpec(
        seed=int(raw.get("seed", 0)),
        templates=templates,
        knobs={k: exact(v) for k, v in raw.get("knobs", {}).items()},
        horizon=int(raw.get("horizon", 7)),
        mode=mode,
        n=int(count) if count else int(raw.get("n", MAX_UNIVERSE if mode == "exact" else 0)),
    )


# ---------------------------------------------------------------------------
# cells and measures


@dataclass(frozen=True)
class Cells:
    """Mass (or count) in each of the four permissible x certified cells."""

    pc: Fraction = Fraction(0)  # permissible, certified
    pn: Fraction = Fraction(0)  # permissible, not certified
    ic: Fraction = Fraction(0)  # impermissible, certified
    inc: Fraction = Fraction(0)  # impermissible, not certified

    def __add__(self, other: "Cells") -> "Cells":
        return Cells(self.pc + other.pc, self.pn + other.pn, self.ic + other.ic, self.inc + other.inc)

    @classmethod
    def one(cls, permissible: bool, certified: bool, mass: Fraction = Fraction(1)) -> "Cells":
        key = ("p" if permissible else "i") + ("c" if certified else ("n" if permissible else "nc"))
        return cls(**{key: mass})

    @property
    def total(self) -> Fraction:
        return self.pc + self.pn + self.ic + self.inc


@dataclass(frozen=True)
class BoundaryReport:
    mode: str
    n: int
    gap: Fraction
    u: Fraction
    m: Fraction
    y: Fraction
    rho: Fraction | None
    recall: Fraction | None
    d: Fraction
    identity_residual: Fraction
    half_widths: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"mode": self.mode, "n": self.n}
        for name in ("gap", "u", "m", "y", "rho", "recall", "d", "identity_residual"):
            value = getattr(self, name)
            if value is None:
                out[name] = {"defined": False}
                continue
            entry: dict[str, Any] = {"value": float(value)}
            if self.mode == "exact":
                entry["exact"] = f"{value.numerator}/{value.denominator}"
            if name in self.half_widths:
                entry["ci95_half_width"] = self.half_widths[name]
            out[name] = entry
        return out

    def table(self) -> str:
        rows = [f"{'measure':<18}{'value':>12}{'±95%':>12}"]
        for name in ("gap", "u", "m", "y", "rho", "recall", "d", "identity_residual"):
            value = getattr(self, name)
            shown = "undefined" if value is None else f"{float(value):.6f}"
            hw = self.half_widths.get(name)
            rows.append(f"{name:<18}{shown:>12}{'' if hw is None else f'{hw:.6f}':>12}")
        rows.append(f"{'n':<18}{self.n:>12}")
        return "\n".join(rows)

    def csv_rows(self) -> list[list[str]]:
        out = [["measure", "value", "exact", "ci95_half_width"]]
        for name in ("gap", "u", "m", "y", "rho", "recall", "d", "identity_residual"):
            value = getattr(self, name)
            exact_text = "" if value is None or self.mode != "exact" else f"{value.numerator}/{value.denominator}"
            hw = self.half_widths.get(name)
            out.append([name, "" if value is None else repr(float(value)), exact_text, "" if hw is None else repr(hw)])
        return out


def wilson_half_width(successes: int, n: int, z: float = Z95) -> float:
    if n == 0:
        return float("nan")
    p = successes / n
    denom = 1 + z * z / n
    return z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom


def measures(cells: Cells, mode: str, n: int, counts: bool = False) -> BoundaryReport:
    total = cells.total
    norm = Cells(cells.pc / total, cells.pn / total, cells.ic / total, cells.inc / total)
    gap = norm.ic + norm.inc
    u, m = norm.ic, norm.pn
    y = norm.pc + norm.ic
    rho = u / y if y > 0 else None
    recall = norm.pc / (1 - gap) if gap < 1 else None
    residual = abs(y - (1 - gap - m + u))
    half: dict[str, float] = {}
    if counts:
        for name, k in (("gap", cells.ic + cells.inc), ("u", cells.ic), ("m", cells.pn), ("y", cells.pc + cells.ic), ("d", cells.ic + cells.pn)):
            half[name] = wilson_half_width(int(k), n)
        if y > 0:
            half["rho"] = wilson_half_width(int(cells.ic), int(cells.pc + cells.ic))
        if gap < 1:
            half["recall"] = wilson_half_width(int(cells.pc), int(cells.pc + cells.pn))
    return BoundaryReport(mode, n, gap, u, m, y, rho, recall, u + m, residual, half)


class Classifier:
    """Certify and judge each distinct trace once; later lookups hit the cache."""

    def __init__(
        self,
        cfg: CertifierConfig,
        policy: PolicySystem,
        memory_factory: MemoryFactory = MemoryState,
        certify_policy: PolicySystem | None = None,
    ) -> None:
        self.cfg, self.policy, self.memory_factory = cfg, policy, memory_factory
        self.certify_policy = certify_policy or policy
        self._cache: dict[tuple[str, tuple], tuple[bool, bool]] = {}
        self.traces: dict[tuple[str, tuple], ProposedTrace] = {}

    def __call__(self, spec: TemplateSpec, choices: tuple) -> tuple[bool, bool]:
        key = (spec.name + repr(sorted(spec.params.items())), choices)
        hit = self._cache.get(key)
        if hit is None:
            trace = TEMPLATES[spec.name].build(choices, self.certify_policy.version, spec.params)
            verdict = certify(trace, self.certify_policy, self.memory_factory(), self.cfg)
            hit = (evaluate(self.policy, trace).permitted, isinstance(verdict, Certified))
            self._cache[key] = hit
            self.traces[key] = trace
        return hit


def exact_cells(gen: GeneratorSpec, classify: Classifier) -> Cells:
    cap = min(gen.n or MAX_UNIVERSE, MAX_UNIVERSE)
    size = gen.universe_size()
    if size > cap:
        raise UniverseTooLarge(f"universe has {size} traces, cap is {cap}")
    cells = Cells()
    for spec, choices, mass in gen.enumerate():
        cells = cells + Cells.one(*classify(spec, choices), mass)
    return cells


def sample_cells(gen: GeneratorSpec, classify: Classifier, n: int, seed: int | None = None) -> Cells:
    tally = {(p, c): 0 for p in (True, False) for c in (True, False)}
    for spec, choices in gen.sample(n, seed):
        tally[classify(spec, choices)] += 1
    return Cells(
        Fraction(tally[True, True]), Fraction(tally[True, False]), Fraction(tally[False, True]), Fraction(tally[False, False])
    )


def exact_measures(
    gen: GeneratorSpec, cfg: CertifierConfig, policy: PolicySystem, memory_factory: MemoryFactory = MemoryState
) -> BoundaryReport:
    return measures(exact_cells(gen, Classifier(cfg, policy, memory_factory)), "exact", gen.universe_size())


def estimate_measures(
    gen: GeneratorSpec,
    cfg: CertifierConfig,
    policy: PolicySystem,
    memory_factory: MemoryFactory = MemoryState,
    n: int | None = None,
    seed: int | None = None,
) -> BoundaryReport:
    n = n or gen.n
    if n < 1:
        raise ValidationError("n", "need at least one sample")
    cells = sample_cells(gen, Classifier(cfg, policy, memory_factory), n, seed)
    return measures(cells, "sample", n, counts=True)


# ---------------------------------------------------------------------------
# drift


def drift_eval(
    gen: GeneratorSpec,
    cfg: CertifierConfig,
    old_policy: PolicySystem,
    new_policy: PolicySystem,
    memory_factory: MemoryFactory = MemoryState,
    n: int | None = None,
) -> Fraction:
    """Mass of generated traces certified under ``old_policy`` that ``new_policy`` forbids."""
    classify = Classifier(cfg, new_policy, memory_factory, certify_policy=old_policy)
    if gen.mode == "exact" and n is None:
        cells = exact_cells(gen, classify)
    else:
        cells = sample_cells(gen, classify, n or gen.n)
    return cells.ic / cells.total


def drift_from_ledger(ledger: Ledger, new_policy: PolicySystem, record: bool = False) -> tuple[Fraction, list[int]]:
    """Share of certification entries whose trace the new policy forbids, and their seqs."""
    store = ledger.trace_store()
    entries = [e for e in ledger.entries if e.record.get("type") == "certification" and e.trace_hash in store]
    if not entries:
        return Fraction(0), []
    flagged = []
    for entry in entries:
        result = recertify(entry, new_policy, store, ledger if record else None)
        if result.drift:
            flagged.append(entry.seq)
    return Fraction(len(flagged), len(entries)), flagged


def split_cells(gen: GeneratorSpec, classify: Classifier, parts: int, n: int, seed: int) -> list[Cells]:
    """Classify a sample in ``parts`` shards; summing the shards in any order gives the whole."""
    draws = list(gen.sample(n, seed))
    shards = [draws[i::parts] for i in range(parts)]
    out = []
    for shard in shards:
        cells = Cells()
        for spec, choices in shard:
            cells = cells + Cells.one(*classify(spec, choices))
        out.append(cells)
    return out
