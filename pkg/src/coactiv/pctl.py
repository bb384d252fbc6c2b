"""Probabilistic reachability on induced chains.

Supported properties have the form ``P<cmp><p> [ F <expr> ]`` or
``P=? [ F <expr> ]`` where ``<expr>`` is a boolean expression over state
variables and ``"label"`` references.

The solver first splits states into those that reach the target with
probability 0 and 1 by graph analysis.  The remaining values solve
``x = A x + b``.  Exact mode handles the strongly connected components of
that system in reverse topological order, each with fraction-free Bareiss
elimination on an integer-scaled matrix, so acyclic chains never build a
matrix at all.  Iterative mode runs Gauss-Seidel sweeps in floating point.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import networkx as nx

from .dtmc import InducedDtmc
from .errors import ModelSyntaxError, PropertySyntaxError, ThresholdRangeError
from .model_lang.expr import (
    TokenStream,
    compile_expr,
    fold,
    format_number,
    parse_expression,
    parse_number_literal,
    to_text,
    tokenize,
)

COMPARISONS = ("=", "<=", "<", ">=", ">", "?")
EXACT_STATE_LIMIT = 50_000
SELECTIONS = ("all_reachable", "positive_prob", "target_only", "until_target")


@dataclass(frozen=True)
class ReachabilityProperty:
    comparison: str  # one of COMPARISONS, "?" for a query
    threshold: Fraction | None
    target: object  # Expr

    def __post_init__(self):
        if (self.comparison == "?") != (self.threshold is None):
            raise PropertySyntaxError("a threshold is required exactly when the property is not a query")

    @property
    def is_query(self) -> bool:
        return self.comparison == "?"

    def text(self) -> str:
        bound = "=?" if self.is_query else f"{self.comparison}{format_number(self.threshold)}"
        return f"P{bound} [ F {to_text(self.target)} ]"

    def holds(self, value) -> bool | None:
        if self.is_query:
            return None
        t = self.threshold if isinstance(value, Fraction) else float(self.threshold)
        return {
            "=": value == t, "<=": value <= t, "<": value < t, ">=": value >= t, ">": value > t,
        }[self.comparison]


def parse_property(text: str) -> ReachabilityProperty:
    try:
        ts = TokenStream(tokenize(text))
        head = ts.expect_kind("IDENT", "'P'")
        if head.text != "P":
            raise ModelSyntaxError(f"expected 'P', found {head.text!r}", head.line, head.column)
        cmp_tok = ts.next()
        if cmp_tok.text not in COMPARISONS[:-1]:
            raise ModelSyntaxError(f"expected a comparison, found {cmp_tok.text!r}", cmp_tok.line, cmp_tok.column)
        if cmp_tok.text == "=" and ts.accept("?"):
            comparison, threshold = "?", None
        else:
            num = ts.expect_kind("NUM", "a probability bound")
            comparison, threshold = cmp_tok.text, Fraction(parse_number_literal(num.text))
            if ts.accept("/"):
                den = ts.expect_kind("NUM", "a denominator")
                threshold /= Fraction(parse_number_literal(den.text))
        ts.expect("[")
        f = ts.expect_kind("IDENT", "'F'")
        if f.text != "F":
            raise ModelSyntaxError(f"only eventually ('F') is supported, found {f.text!r}", f.line, f.column)
        target = fold(parse_expression(ts))
        ts.expect("]")
        if ts.peek().kind != "EOF":
            raise ts.error(f"unexpected {ts.peek().text!r} after property")
    except ModelSyntaxError as exc:
        raise PropertySyntaxError(f"cannot parse property {text!r}: {exc}") from None
    if threshold is not None and not 0 <= threshold <= 1:
        raise ThresholdRangeError(f"probability bound {format_number(threshold)} is outside [0, 1]")
    return ReachabilityProperty(comparison, threshold, target)


@dataclass(frozen=True)
class CheckResult:
    property_text: str
    mode: str
    values: tuple  # per state; Fraction in exact mode, float in iterative mode
    target: frozenset
    prob0: frozenset
    prob1: frozenset
    satisfied: bool | None

    @property
    def initial_value(self):
        return self.values[0]

    def summary(self, digests: dict | None = None) -> dict:
        v = self.initial_value
        return {
            "property": self.property_text,
            "mode": self.mode,
            "satisfied": self.satisfied,
            "initial_value": format_number(v) if isinstance(v, Fraction) else repr(v),
            "initial_value_float": float(v),
            "n_states": len(self.values),
            "n_target": len(self.target),
            "digests": dict(digests or {}),
        }


def target_states(d: InducedDtmc, prop: ReachabilityProperty) -> frozenset:
    try:
        pred = compile_expr(prop.target, d.variables)
        return frozenset(i for i, (s, ls) in enumerate(zip(d.states, d.labels)) if pred(s, ls))
    except ModelSyntaxError as exc:
        raise PropertySyntaxError(f"target of {prop.text()!r}: {exc}") from None


def _predecessors(d: InducedDtmc) -> list:
    pred = [[] for _ in d.states]
    for i, row in enumerate(d.rows):
        for j, prob in row:
            if prob > 0:
                pred[j].append(i)
    return pred


def _backward(pred, seeds, blocked=frozenset()) -> set:
    seen = set(seeds)
    queue = deque(seeds)
    while queue:
        j = queue.popleft()
        for i in pred[j]:
            if i not in seen and i not in blocked:
                seen.add(i)
                queue.append(i)
    return seen


def precompute(d: InducedDtmc, target: frozenset) -> tuple:
    """Graph-based ``(prob0, prob1)`` state sets."""
    pred = _predecessors(d)
    can_reach = _backward(pred, target)
    prob0 = frozenset(range(d.n_states)) - can_reach
    # states that can avoid the target forever with positive probability
    escape = _backward(pred, prob0, blocked=target)
    prob1 = frozenset(range(d.n_states)) - escape
    return prob0, prob1


def _bareiss_solve(matrix: list, rhs: list) -> list:
    """Solve ``matrix @ x = rhs`` over the rationals with fraction-free elimination.

    Each equation is first scaled to integers.  Raises ``ZeroDivisionError``
    on a singular system.
    """
    n = len(matrix)
    aug = []
    for row, b in zip(matrix, rhs):
        lcm = math.lcm(*(Fraction(v).denominator for v in (*row, b)))
        aug.append([int(Fraction(v) * lcm) for v in (*row, b)])
    prev = 1
    for k in range(n):
        pivot = next((r for r in range(k, n) if aug[r][k] != 0), None)
        if pivot is None:
            raise ZeroDivisionError("singular reachability system")
        aug[k], aug[pivot] = aug[pivot], aug[k]
        pk = aug[k][k]
        for i in range(k + 1, n):
            aik = aug[i][k]
            row_i, row_k = aug[i], aug[k]
            for j in range(k + 1, n + 1):
                row_i[j] = (row_i[j] * pk - aik * row_k[j]) // prev
            row_i[k] = 0
        prev = pk
    x = [Fraction(0)] * n
    for i in range(n - 1, -1, -1):
        acc = Fraction(aug[i][n])
        for j in range(i + 1, n):
            acc -= aug[i][j] * x[j]
        x[i] = acc / aug[i][i]
    return x


def _components_bottom_up(d: InducedDtmc, maybe: set) -> list:
    """Strongly connected components of the undecided states, successors first."""
    g = nx.DiGraph()
    g.add_nodes_from(sorted(maybe))
    g.add_edges_from((i, j) for i in sorted(maybe) for j, _ in d.rows[i] if j in maybe)
    cond = nx.condensation(g)
    order = list(nx.topological_sort(cond))
    return [sorted(cond.nodes[c]["members"]) for c in reversed(order)]


def _solve_exact(d: InducedDtmc, prob1: frozenset, maybe: set) -> dict:
    x = {}
    for comp in _components_bottom_up(d, maybe):
        local = {s: k for k, s in enumerate(comp)}
        matrix = [[Fraction(0)] * len(comp) for _ in comp]
        rhs = [Fraction(0)] * len(comp)
        for k, s in enumerate(comp):
            matrix[k][k] += 1
            for j, prob in d.rows[s]:
                if j in local:
                    matrix[k][local[j]] -= prob
                elif j in prob1:
                    rhs[k] += prob
                elif j in x:
                    rhs[k] += prob * x[j]
        if len(comp) == 1:
            values = [rhs[0] / matrix[0][0]]
        else:
            values = _bareiss_solve(matrix, rhs)
        x.update(zip(comp, values))
    return x


def _solve_iterative(d: InducedDtmc, prob1: frozenset, maybe: set, eps: float, max_sweeps: int) -> dict:
    order = [s for comp in _components_bottom_up(d, maybe) for s in comp]
    rows = {s: [(j, float(p)) for j, p in d.rows[s]] for s in order}
    x = {s: 0.0 for s in order}
    for _ in range(max_sweeps):
        delta = 0.0
        for s in order:
            acc = 0.0
            for j, p in rows[s]:
                if j in x:
                    acc += p * x[j]
                elif j in prob1:
                    acc += p
            delta = max(delta, abs(acc - x[s]))
            x[s] = acc
        if delta < eps:
            return x
    raise ArithmeticError(f"Gauss-Seidel did not reach tolerance {eps} within {max_sweeps} sweeps")


def check_reachability(d: InducedDtmc, prop: ReachabilityProperty, mode: str = "auto",
                       eps: float = 1e-9, max_sweeps: int = 1_000_000) -> CheckResult:
    """Probability of eventually reaching the target, from every state of ``d``.

    ``mode`` is ``"exact"``, ``"iterative"`` or ``"auto"`` (exact up to
    50,000 states).
    """
    if mode == "auto":
        mode = "exact" if d.n_states <= EXACT_STATE_LIMIT else "iterative"
    if mode not in ("exact", "iterative"):
        raise ValueError(f"unknown mode {mode!r}")
    target = target_states(d, prop)
    prob0, prob1 = precompute(d, target)
    maybe = set(range(d.n_states)) - prob0 - prob1
    if mode == "exact":
        solved = _solve_exact(d, prob1, maybe)
        one, zero = Fraction(1), Fraction(0)
    else:
        solved = _solve_iterative(d, prob1, maybe, eps, max_sweeps)
        one, zero = 1.0, 0.0
    values = tuple(one if i in prob1 else zero if i in prob0 else solved[i] for i in range(d.n_states))
    return CheckResult(prop.text(), mode, values, target, prob0, prob1, prop.holds(values[0]))


def relevant_indices(d: InducedDtmc, r: CheckResult, selection: str = "all_reachable") -> list:
    """State indices selected for a dataset, in index order.

    ``until_target`` keeps the states reachable from the initial state along
    paths that have not yet entered the target, plus the target states where
    those paths end.
    """
    if selection == "all_reachable":
        return list(range(d.n_states))
    if selection == "positive_prob":
        return [i for i, v in enumerate(r.values) if v > 0]
    if selection == "target_only":
        return sorted(r.target)
    if selection == "until_target":
        seen = {d.initial}
        queue = deque([d.initial])
        while queue:
            i = queue.popleft()
            if i in r.target:
                continue
            for j, _ in d.rows[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return sorted(seen)
    raise ValueError(f"unknown selection {selection!r}; expected one of {SELECTIONS}")


def relevant_states(d: InducedDtmc, r: CheckResult, selection: str = "all_reachable") -> list:
    return [d.states[i] for i in relevant_indices(d, r, selection)]


def export_result(r: CheckResult, digests: dict | None = None) -> tuple:
    """``(values text, summary JSON)``; values are ``idx value`` lines."""
    lines = [f"{i} {format_number(v) if isinstance(v, Fraction) else repr(v)}" for i, v in enumerate(r.values)]
    return "\n".join(lines) + "\n", json.dumps(r.summary(digests), sort_keys=True, indent=2) + "\n"
