"""Factored MDPs and their semantics.

A model is immutable once parsed.  The query functions (enabled actions,
successor distributions, labels, rewards) evaluate compiled closures that
are created lazily and cached on the model instance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping, Sequence

from ..errors import (
    ActionNotEnabledError,
    BoundsError,
    EvaluationError,
    OverlappingGuardsError,
)
from .expr import Expr, Number, compile_expr

State = tuple


@dataclass(frozen=True)
class Variable:
    name: str
    low: int
    high: int
    init: int


@dataclass(frozen=True)
class Assignment:
    variable: str
    value: Expr


@dataclass(frozen=True)
class Update:
    probability: Fraction
    assignments: tuple


@dataclass(frozen=True)
class Command:
    action: str
    guard: Expr
    updates: tuple
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class RewardDef:
    action: str | None  # None matches every action
    guard: Expr
    value: Expr


@dataclass(frozen=True)
class Distribution:
    entries: tuple  # ((successor state, Fraction), ...) in first-occurrence order

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def as_dict(self) -> dict:
        return dict(self.entries)


@dataclass(frozen=True)
class FactoredMdp:
    name: str
    variables: tuple
    constants: Mapping[str, Number]
    commands: tuple
    labels: Mapping[str, Expr]
    rewards: tuple
    reward_name: str | None = None

    @property
    def variable_names(self) -> tuple:
        return tuple(v.name for v in self.variables)

    @property
    def dimension(self) -> int:
        return len(self.variables)

    @property
    def initial_state(self) -> State:
        return tuple(v.init for v in self.variables)

    @property
    def bounds(self) -> tuple:
        return tuple((v.low, v.high) for v in self.variables)

    @property
    def actions(self) -> tuple:
        """Action alphabet in first-declaration order."""
        seen = {}
        for cmd in self.commands:
            seen.setdefault(cmd.action, None)
        return tuple(seen)

    @cached_property
    def _compiled(self):
        names = self.variable_names
        position = {n: i for i, n in enumerate(names)}
        commands = []
        for cmd in self.commands:
            updates = []
            for upd in cmd.updates:
                assigns = tuple((position[a.variable], compile_expr(a.value, names)) for a in upd.assignments)
                updates.append((upd.probability, assigns))
            commands.append((cmd.action, compile_expr(cmd.guard, names), tuple(updates), cmd))
        labels = tuple((name, compile_expr(e, names)) for name, e in self.labels.items())
        rewards = tuple(
            (r.action, compile_expr(r.guard, names), compile_expr(r.value, names)) for r in self.rewards
        )
        return commands, labels, rewards


def check_state(m: FactoredMdp, s: Sequence[int]) -> State:
    s = tuple(s)
    if len(s) != m.dimension:
        raise BoundsError(f"state has {len(s)} components, model declares {m.dimension} variables")
    for value, var in zip(s, m.variables):
        if not var.low <= value <= var.high:
            raise BoundsError(f"{var.name}={value} outside [{var.low}..{var.high}]")
    return s


def enabled_actions(m: FactoredMdp, s: Sequence[int]) -> tuple:
    """Actions with at least one satisfied guard, in declaration order."""
    s = check_state(m, s)
    enabled = {}
    for action, guard, _, _ in m._compiled[0]:
        if action not in enabled and guard(s):
            enabled[action] = None
    return tuple(a for a in m.actions if a in enabled)


def _active_command(m: FactoredMdp, s: State, action: str):
    active = [entry for entry in m._compiled[0] if entry[0] == action and entry[1](s)]
    if not active:
        raise ActionNotEnabledError(f"action {action!r} is not enabled in state {s}")
    if len(active) > 1:
        lines = [entry[3].line for entry in active]
        raise OverlappingGuardsError(
            f"{len(active)} commands for action {action!r} are enabled in state {s} (lines {lines})"
        )
    return active[0]


def successor_distribution(m: FactoredMdp, s: Sequence[int], action: str) -> Distribution:
    s = check_state(m, s)
    _, _, updates, cmd = _active_command(m, s, action)
    merged: dict = {}
    for prob, assigns in updates:
        nxt = list(s)
        for pos, fn in assigns:
            value = fn(s)
            if value != int(value):
                raise EvaluationError(f"non-integer value {value} assigned to {m.variables[pos].name}")
            nxt[pos] = int(value)
        nxt = tuple(nxt)
        for value, var in zip(nxt, m.variables):
            if not var.low <= value <= var.high:
                raise BoundsError(
                    f"command [{action}] (line {cmd.line}) moves {s} to {nxt}: "
                    f"{var.name}={value} outside [{var.low}..{var.high}]"
                )
        merged[nxt] = merged.get(nxt, Fraction(0)) + prob
    return Distribution(tuple(merged.items()))


def state_labels(m: FactoredMdp, s: Sequence[int]) -> frozenset:
    s = check_state(m, s)
    return frozenset(name for name, fn in m._compiled[1] if fn(s))


def reward(m: FactoredMdp, s: Sequence[int], action: str) -> Number:
    """Sum of the values of all reward items matching ``(s, action)``."""
    s = check_state(m, s)
    total = 0
    for act, guard, value in m._compiled[2]:
        if (act is None or act == action) and guard(s):
            total += value(s)
    if isinstance(total, Fraction) and total.denominator == 1:
        return total.numerator
    return total


def all_states(m: FactoredMdp):
    """Every in-bounds valuation, in lexicographic order."""
    from itertools import product

    return product(*(range(v.low, v.high + 1) for v in m.variables))
