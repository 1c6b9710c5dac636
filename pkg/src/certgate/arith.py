"""Exact replay of Computation events.

Expressions are a small arithmetic language (``+ - * /``, parentheses, integer
literals, identifiers). Identifiers resolve to params of the events a
Computation cites in ``evidence_refs``. Basis-point values enter as exact
rationals (``Bp(1000)`` is 1/10), so replay never touches floats.
"""

from __future__ import annotations

import ast
from fractions import Fraction
from typing import Mapping

from certgate.trace import CONSTRAINT, OBSERVED, Bp, EventKind, Scalar, TraceEvent

EXPR = "expr"
RESULT = "result"
CLAIM_VALUE = "value"

# params never usable as computation inputs; "observed" would let tool output
# change the verdict after certification
_RESERVED = frozenset({EXPR, RESULT, CONSTRAINT, OBSERVED})


class ComputeError(ValueError):
    pass


def as_fraction(value: Scalar) -> Fraction:
    if isinstance(value, Bp):
        return Fraction(value.bp, 10_000)
    if isinstance(value, int) and not isinstance(value, bool):
        return Fraction(value)
    raise ComputeError(f"non-numeric value {value!r}")


def evaluate_expr(expr: str, env: Mapping[str, Fraction]) -> Fraction:
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ComputeError(f"unparseable expression {expr!r}") from exc
    return _eval(tree.body, env)


def _eval(node: ast.AST, env: Mapping[str, Fraction]) -> Fraction:
    if isinstance(node, ast.Constant) and type(node.value) is int:
        return Fraction(node.value)
    if isinstance(node, ast.Name):
        if node.id not in env:
            raise ComputeError(f"unbound identifier {node.id!r}")
        return env[node.id]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        left, right = _eval(node.left, env), _eval(node.right, env)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if right == 0:
                raise ComputeError("division by zero")
            return left / right
    raise ComputeError(f"unsupported syntax {ast.dump(node)}")


def inputs_for(event: TraceEvent, by_id: Mapping[str, TraceEvent]) -> dict[str, Fraction]:
    env: dict[str, Fraction] = {}
    for ref in event.evidence_refs:
        src = by_id.get(ref)
        if src is None:
            continue
        for key, value in src.params.items():
            if key in _RESERVED or key in env:
                continue
            try:
                env[key] = as_fraction(value)
            except ComputeError:
                continue
    return env


def replay(event: TraceEvent, by_id: Mapping[str, TraceEvent]) -> Fraction:
    expr = event.params.get(EXPR)
    if not isinstance(expr, str):
        raise ComputeError(f"{event.event_id}: Computation without an expression")
    return evaluate_expr(expr, inputs_for(event, by_id))


def compute_status(event: TraceEvent, by_id: Mapping[str, TraceEvent]) -> bool | None:
    """Whether a Computation or Claim event replays to what it states.

    ``None`` for events that make no arithmetic statement.
    """
    if event.kind is EventKind.COMPUTATION:
        if RESULT not in event.params:
            return False
        try:
            return replay(event, by_id) == as_fraction(event.params[RESULT])
        except ComputeError:
            return False
    if event.kind is EventKind.CLAIM and CLAIM_VALUE in event.params:
        sources = [by_id[r] for r in event.evidence_refs if r in by_id and by_id[r].kind is EventKind.COMPUTATION]
        if not sources:
            return None
        try:
            claimed = as_fraction(event.params[CLAIM_VALUE])
            return all(replay(src, by_id) == claimed for src in sources)
        except ComputeError:
            return False
    return None
