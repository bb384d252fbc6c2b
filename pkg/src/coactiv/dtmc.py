"""Discrete-time Markov chains induced by a policy on a factored MDP.

Only the action the policy picks is expanded in each reachable state, so the
result has no remaining nondeterminism.  States are indexed in breadth-first
discovery order with successors visited in distribution order, which makes
indices, exports and digests reproducible.
"""
from __future__ import annotations

import hashlib
import logging
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

from .errors import ChainFormatError, DimensionError, StateLimitError
from .model_lang import FactoredMdp, enabled_actions, state_labels, successor_distribution
from .model_lang.expr import format_number
from .policy import MlpPolicy, choose_action

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InducedDtmc:
    variables: tuple
    states: tuple  # state vectors, index = discovery order
    rows: tuple  # per state: ((successor index, Fraction), ...)
    labels: tuple  # per state: frozenset of label names
    chosen_action: tuple  # per state: action name, or None for absorbing dead ends
    initial: int = 0
    fallbacks: int = 0  # states where the policy's argmax action was disabled

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return sum(len(r) for r in self.rows)

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}

    @property
    def absorbing(self) -> tuple:
        return tuple(i for i, a in enumerate(self.chosen_action) if a is None)


def build_induced_dtmc(m: FactoredMdp, p: MlpPolicy, max_states: int = 1_000_000) -> InducedDtmc:
    """Breadth-first closure of the initial state under the policy's choices."""
    missing = [a for a in m.actions if a not in p.action_names]
    if missing:
        raise DimensionError(f"policy has no outputs for model actions {missing}")
    if p.input_dim != m.dimension:
        raise DimensionError(f"policy expects {p.input_dim} features, model has {m.dimension} variables")
    start = m.initial_state
    index = {start: 0}
    states = [start]
    rows, labels, chosen = [], [], []
    fallbacks = 0
    frontier = deque([start])
    while frontier:
        s = frontier.popleft()
        i = index[s]
        labels.append(state_labels(m, s))
        acts = enabled_actions(m, s)
        if not acts:
            rows.append(((i, Fraction(1)),))
            chosen.append(None)
            continue
        action, fell_back = choose_action(p, s, acts)
        fallbacks += fell_back
        row = []
        for t, prob in successor_distribution(m, s, action):
            j = index.get(t)
            if j is None:
                if len(states) >= max_states:
                    raise StateLimitError(max_states, len(frontier) + 1)
                j = index[t] = len(states)
                states.append(t)
                frontier.append(t)
            row.append((j, Fraction(prob)))
        rows.append(tuple(row))
        chosen.append(action)
    if fallbacks:
        log.info("policy argmax was disabled in %d of %d states; best enabled action used", fallbacks, len(states))
    return InducedDtmc(
        variables=m.variable_names,
        states=tuple(states),
        rows=tuple(rows),
        labels=tuple(labels),
        chosen_action=tuple(chosen),
        initial=0,
        fallbacks=fallbacks,
    )


# --------------------------------------------------------------------------- export

class DtmcExport(NamedTuple):
    transitions: str
    labels: str
    states: str
    actions: str


def export_dtmc(d: InducedDtmc) -> DtmcExport:
    """Text artifacts: transitions ``src dst prob``, labels ``idx l1 l2 ...``,
    state map ``idx f1 ... fd`` and chosen actions ``idx action``."""
    trans = [f"{i} {j} {format_number(prob)}" for i, row in enumerate(d.rows) for j, prob in row]
    labs = [" ".join([str(i), *sorted(ls)]) for i, ls in enumerate(d.labels)]
    sts = ["# " + " ".join(d.variables)] + [" ".join(map(str, (i, *s))) for i, s in enumerate(d.states)]
    acts = [f"# initial {d.initial} fallbacks {d.fallbacks}"] + [
        f"{i} {a if a is not None else '-'}" for i, a in enumerate(d.chosen_action)
    ]
    return DtmcExport(*("\n".join(lines) + "\n" for lines in (trans, labs, sts, acts)))


def import_dtmc(export: DtmcExport) -> InducedDtmc:
    try:
        state_lines = export.states.splitlines()
        if not state_lines or not state_lines[0].startswith("#"):
            raise ChainFormatError("state map must start with a '# <variables>' header")
        variables = tuple(state_lines[0][1:].split())
        states = []
        for n, line in enumerate(state_lines[1:], start=2):
            parts = line.split()
            if int(parts[0]) != len(states) or len(parts) != len(variables) + 1:
                raise ChainFormatError(f"state map line {n} is malformed: {line!r}")
            states.append(tuple(int(v) for v in parts[1:]))
        rows = [[] for _ in states]
        for n, line in enumerate(export.transitions.splitlines(), start=1):
            src, dst, prob = line.split()
            rows[int(src)].append((int(dst), Fraction(prob)))
        labels = [frozenset() for _ in states]
        for line in export.labels.splitlines():
            parts = line.split()
            labels[int(parts[0])] = frozenset(parts[1:])
        action_lines = export.actions.splitlines()
        head = action_lines[0].split()
        initial, fallbacks = int(head[2]), int(head[4])
        chosen = [None] * len(states)
        for line in action_lines[1:]:
            idx, action = line.split()
            chosen[int(idx)] = None if action == "-" else action
    except (ValueError, IndexError) as exc:
        raise ChainFormatError(f"malformed chain export: {exc}") from None
    return InducedDtmc(variables, tuple(states), tuple(tuple(r) for r in rows), tuple(labels),
                       tuple(chosen), initial, fallbacks)


def write_dtmc(d: InducedDtmc, stem) -> dict:
    """Write the four export files next to ``stem``; returns ``{kind: path}``."""
    stem = Path(stem)
    paths = {}
    for kind, text in export_dtmc(d)._asdict().items():
        suffix = {"transitions": ".tra", "labels": ".lab", "states": ".sta", "actions": ".act"}[kind]
        path = stem.with_suffix(suffix)
        path.write_text(text, encoding="utf-8")
        paths[kind] = path
    return paths


def read_dtmc(stem) -> InducedDtmc:
    stem = Path(stem)
    texts = [stem.with_suffix(s).read_text(encoding="utf-8") for s in (".tra", ".lab", ".sta", ".act")]
    return import_dtmc(DtmcExport(*texts))


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dtmc_digests(d: InducedDtmc) -> dict:
    """Per-artifact digests plus ``chain``, the digest over all of them."""
    export = export_dtmc(d)
    parts = {kind: _sha(text) for kind, text in export._asdict().items()}
    parts["chain"] = _sha("".join(f"{k}:{v}\n" for k, v in sorted(parts.items())))
    return parts


def dtmc_digest(d: InducedDtmc) -> str:
    return dtmc_digests(d)["chain"]
