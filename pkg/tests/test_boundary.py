import json
import random
from fractions import Fraction

import pytest

from certgate.boundary import (
    Cells,
    Classifier,
    GeneratorSpec,
    TemplateSpec,
    drift_eval,
    drift_from_ledger,
    estimate_measures,
    exact_cells,
    exact_measures,
    generator_from_dict,
    measures,
    split_cells,
    wilson_half_width,
)
from certgate.certifier import Certified, certify
from certgate.errors import UniverseTooLarge, ValidationError
from certgate.memory import Ledger, MemoryState
from certgate.policy import evaluate, layer_from_dict, strengthen
from certgate.scenarios import SCENARIO_KEY, fixture_text, load_config, load_policy
from certgate.trace import canonical_hash, trace_to_dict

QB = load_policy("query_budget.policy.json")
QB3 = load_policy("query_budget_v2.policy.json")
SOUND = load_config("sound.certifier.json")


def gen(name, **over):
    return generator_from_dict({**json.loads(fixture_text(name)), **over})


def max_in_window(ticks, window=10):
    return max(sum(1 for s in ticks if t - window < s <= t) for t in ticks)


def _ticks(choices):
    length, *gaps, _release = choices
    ticks = [0]
    for g in gaps[: length - 1]:
        ticks.append(ticks[-1] + g)
    return ticks


def test_query_universe_exact():
    g = gen("query_universe.generator.json")
    report = exact_measures(g, SOUND, QB)
    # brute force: mass of bursts with more than five queries inside a window
    gap = sum((mass for _, c, mass in g.enumerate() if max_in_window(_ticks(c)) > 5), Fraction(0))
    assert report.gap == gap == Fraction(1251, 4096)
    assert report.u == 0 and report.m == 0
    assert report.y == 1 - gap
    assert report.identity_residual == 0
    assert report.d == report.u + report.m
    assert report.rho == report.u / report.y
    assert report.recall == 1 - report.m / (1 - report.gap)


def test_point_mass_generator():
    g = GeneratorSpec(0, (TemplateSpec("filing_claim", Fraction(1)),), {})
    assert g.universe_size() == 1
    report = exact_measures(g, SOUND, load_policy("boundary.policy.json"))
    assert (report.gap, report.m, report.u, report.y) == (0, 0, 0, 1)


def test_sound_certifier_u_zero_on_mixed():
    g = gen("mixed.generator.json")
    policy = load_policy("boundary.policy.json")
    exact_report = exact_measures(g, SOUND, policy)
    assert exact_report.u == 0 and exact_report.identity_residual == 0
    assert exact_report.m == Fraction(1, 40)
    sample = estimate_measures(g, SOUND, policy, n=10_000, seed=5)
    assert sample.u == 0


def test_baseline_u_positive_with_ci():
    g = gen("guardrail.generator.json")
    base = load_config("baseline.certifier.json")
    exact_report = exact_measures(g, base, QB)
    assert exact_report.u == exact_report.gap == Fraction(3753, 8192)
    sample = estimate_measures(g, base, QB, n=10_000, seed=1)
    assert sample.u - sample.half_widths["u"] > 0
    assert abs(float(sample.u) - float(exact_report.u)) < 3 * sample.half_widths["u"]


def test_sample_identity_residual_zero():
    report = estimate_measures(gen("mixed.generator.json"), SOUND, load_policy("boundary.policy.json"), n=2000, seed=9)
    assert report.identity_residual == 0
    assert report.d == report.u + report.m


def test_aggregation_order_independent():
    g = gen("mixed.generator.json")
    classify = Classifier(SOUND, load_policy("boundary.policy.json"))
    shards = split_cells(g, classify, 4, 3000, 2)
    whole = split_cells(g, classify, 1, 3000, 2)[0]
    rng = random.Random(0)
    for _ in range(5):
        rng.shuffle(shards)
        total = Cells()
        for s in shards:
            total = total + s
        assert total == whole
    left = (shards[0] + shards[1]) + shards[2]
    right = shards[0] + (shards[1] + shards[2])
    assert left == right


def test_universe_too_large():
    g = gen("query_universe.generator.json", horizon=21)
    with pytest.raises(UniverseTooLarge):
        exact_measures(g, SOUND, QB)
    capped = gen("query_universe.generator.json", mode="exact:100")
    with pytest.raises(UniverseTooLarge):
        exact_measures(capped, SOUND, QB)


@pytest.mark.parametrize(
    "raw",
    [
        {"templates": [{"name": "query_burst", "weight": "1/2"}]},
        {"templates": [{"name": "nope", "weight": 1}]},
        {"templates": [{"name": "query_burst", "weight": 1}], "knobs": {"p_over_budget": 2}},
        {"templates": [{"name": "query_burst", "weight": 1}], "knobs": {"p_typo": 0}},
        {"templates": [{"name": "query_burst", "weight": 1}], "mode": "sample"},
        {"templates": []},
    ],
)
def test_generator_validation(raw):
    with pytest.raises(ValidationError):
        generator_from_dict(raw)


def test_undefined_ratios():
    all_bad = measures(Cells(inc=Fraction(1)), "exact", 1)
    assert all_bad.recall is None and all_bad.rho is None
    assert all_bad.to_dict()["rho"] == {"defined": False}


def test_wilson():
    assert wilson_half_width(0, 100) == pytest.approx(0.0185, abs=1e-3)
    assert wilson_half_width(50, 100) == pytest.approx(0.0962, abs=1e-4)
    assert wilson_half_width(10, 10) > 0


def test_drift_identity_and_neutral():
    g = gen("query_universe.generator.json")
    assert drift_eval(g, SOUND, QB, QB) == 0
    always = layer_from_dict(
        {"layer_id": "always", "kind": "Monitor", "tier": "C0",
         "spec": {"states": ["s"], "initial": "s", "accepting": ["s"], "transitions": [], "default": {"s": "SelfLoop"}}}
    )
    assert drift_eval(g, SOUND, QB, strengthen(QB, always, "qb-v1b")) == 0


def test_drift_budget_five_to_three():
    g = gen("query_universe.generator.json")
    d = drift_eval(g, SOUND, QB, QB3)
    expected = sum((mass for _, c, mass in g.enumerate() if 4 <= max_in_window(_ticks(c)) <= 5), Fraction(0))
    assert d == expected > 0


def test_drift_from_ledger():
    g = gen("query_universe.generator.json")
    classify = Classifier(SOUND, QB)
    ledger = Ledger()
    for spec, choices, _ in list(g.enumerate())[:40]:
        classify(spec, choices)
    for trace in classify.traces.values():
        v = certify(trace, QB, MemoryState(), SOUND)
        ledger.append(trace_hash=canonical_hash(trace).hex(), record={"type": "certification", "outcome": v.outcome, "trace": trace_to_dict(trace)}, policy=QB)
    share, flagged = drift_from_ledger(ledger, QB3)
    for entry in ledger.entries:
        trace = ledger.trace_store()[entry.trace_hash]
        expect = entry.was_certified and not evaluate(QB3, trace).permitted
        assert (entry.seq in flagged) == expect
    assert share == Fraction(len(flagged), len(ledger))


def test_report_outputs():
    report = exact_measures(gen("query_universe.generator.json"), SOUND, QB)
    doc = report.to_dict()
    assert doc["gap"]["exact"] == "1251/4096"
    assert report.csv_rows()[0] == ["measure", "value", "exact", "ci95_half_width"]
    assert "identity_residual" in report.table()
