"""Random instance generators and independent oracles shared by the tests.

The oracles deliberately avoid the code paths they check: guards and updates
are evaluated by the tree-walking interpreter instead of compiled closures,
forward passes are written out with explicit loops, and linear systems are
solved by sympy.
"""
from collections import deque
from fractions import Fraction
from itertools import product

import numpy as np
import sympy

from coactiv.coactivation import CoactivationGraph, NeuronId
from coactiv.dtmc import InducedDtmc
from coactiv.model_lang.expr import evaluate
from coactiv.policy import make_policy


# --------------------------------------------------------------------------- models

def random_probabilities(rng, k):
    """``k`` positive rationals summing to 1, as model-text literals."""
    weights = rng.integers(1, 6, size=k)
    total = int(weights.sum())
    return [Fraction(int(w), total) for w in weights]


def _literal(p: Fraction) -> str:
    return str(p.numerator) if p.denominator == 1 else f"{p.numerator}/{p.denominator}"


def random_model_text(rng, max_vars=4, max_bound=3, n_actions=3, with_rewards=False, with_constants=False):
    """A random well-formed model over ``v0..v{n-1}``.

    Commands for one action are split on the value of ``v0`` so that guards
    never overlap.  Assignments stay in bounds by clamping with min/max.
    """
    n = int(rng.integers(1, max_vars + 1))
    highs = [int(rng.integers(1, max_bound + 1)) for _ in range(n)]
    lines = ["mdp", ""]
    if with_constants:
        lines.append(f"const int K = {int(rng.integers(0, 3))};")
        lines.append("const rational HALF = 1/2;")
        lines.append("")
    lines.append("module random")
    for i, hi in enumerate(highs):
        lines.append(f"  v{i} : [0..{hi}] init {int(rng.integers(0, hi + 1))};")
    for a in range(n_actions):
        values = [v for v in range(highs[0] + 1) if rng.random() < 0.7] or [int(rng.integers(0, highs[0] + 1))]
        for v in values:
            probs = random_probabilities(rng, int(rng.integers(1, 4)))
            updates = []
            for p in probs:
                assigns = []
                for i in rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False):
                    i = int(i)
                    kind = rng.integers(0, 3)
                    if kind == 0:
                        expr = str(int(rng.integers(0, highs[i] + 1)))
                    elif kind == 1:
                        expr = f"min(v{i}+1, {highs[i]})"
                    else:
                        expr = f"max(v{i}-1, 0)"
                    assigns.append(f"(v{i}'={expr})")
                updates.append(f"{_literal(p)} : " + " & ".join(assigns))
            extra = ""
            if n > 1 and rng.random() < 0.3:
                extra = f" & v{n - 1}<={int(rng.integers(0, highs[-1] + 1))}"
            lines.append(f"  [a{a}] v0={v}{extra} -> " + " + ".join(updates) + ";")
    lines.append("endmodule")
    lines.append("")
    lines.append(f'label "goal" = v{n - 1}={highs[-1]};')
    lines.append(f'label "low" = v0=0 | v{n - 1}<1;')
    if with_rewards:
        lines.append("")
        lines.append('rewards "cost"')
        lines.append("  [a0] v0>0 : 2*v0 + 1;")
        lines.append("  [] true : 1/3;")
        if with_constants:
            lines.append("  [a1] v0>=K : HALF;")
        lines.append("endrewards")
    return "\n".join(lines) + "\n"


def oracle_enabled(m, s):
    env = dict(zip(m.variable_names, s))
    out = []
    for cmd in m.commands:
        if cmd.action not in out and evaluate(cmd.guard, env):
            out.append(cmd.action)
    return [a for a in m.actions if a in out]


def oracle_successors(m, s, action):
    env = dict(zip(m.variable_names, s))
    (cmd,) = [c for c in m.commands if c.action == action and evaluate(c.guard, env)]
    dist = {}
    for upd in cmd.updates:
        nxt = dict(env)
        for a in upd.assignments:
            nxt[a.variable] = evaluate(a.value, env)
        t = tuple(int(nxt[v]) for v in m.variable_names)
        dist[t] = dist.get(t, Fraction(0)) + upd.probability
    return list(dist.items())


def oracle_labels(m, s):
    env = dict(zip(m.variable_names, s))
    return frozenset(name for name, e in m.labels.items() if evaluate(e, env))


# --------------------------------------------------------------------------- policies

def oracle_forward(p, s):
    """Straight-line forward pass with explicit loops."""
    x = [float(v) for v in s]
    if p.normalization is not None:
        offsets, scales = p.normalization
        x = [(v - float(o)) / float(c) for v, o, c in zip(x, offsets, scales)]
    layers = [list(x)]
    for layer in p.layers:
        out = []
        for row, b in zip(layer.weights.tolist(), layer.bias.tolist()):
            acc = b
            for w, v in zip(row, x):
                acc += w * v
            out.append(max(acc, 0.0) if layer.activation == "relu" else acc)
        x = out
        layers.append(out)
    return layers


def oracle_choice(p, s, allowed):
    q = oracle_forward(p, s)[-1]
    best = None
    for i, name in enumerate(p.action_names):
        if name in allowed and (best is None or q[i] > q[best]):
            best = i
    return p.action_names[best]


def oracle_induced_chain(m, p):
    """Apply the policy in every in-bounds state, then keep the part reachable from s0."""
    ranges = [range(v.low, v.high + 1) for v in m.variables]
    step = {}
    for s in product(*ranges):
        acts = oracle_enabled(m, s)
        if acts:
            a = oracle_choice(p, s, acts)
            step[s] = (a, oracle_successors(m, s, a))
        else:
            step[s] = (None, [(s, Fraction(1))])
    order = [m.initial_state]
    index = {m.initial_state: 0}
    queue = deque(order)
    while queue:
        s = queue.popleft()
        for t, _ in step[s][1]:
            if t not in index:
                index[t] = len(order)
                order.append(t)
                queue.append(t)
    rows = tuple(tuple((index[t], pr) for t, pr in step[s][1]) for s in order)
    fallbacks = 0
    for s in order:
        if step[s][0] is not None:
            q = oracle_forward(p, s)[-1]
            fallbacks += step[s][0] != p.action_names[q.index(max(q))]
    return InducedDtmc(
        m.variable_names, tuple(order), rows, tuple(oracle_labels(m, s) for s in order),
        tuple(step[s][0] for s in order), 0, fallbacks,
    )


# --------------------------------------------------------------------------- chains

def random_chain(rng, max_states=10, target_rate=0.25):
    """A random chain over states ``(i,)`` with label ``goal`` on a random subset."""
    n = int(rng.integers(1, max_states + 1))
    rows = []
    for i in range(n):
        k = int(rng.integers(1, min(n, 3) + 1))
        succ = sorted(int(j) for j in rng.choice(n, size=k, replace=False))
        rows.append(tuple(zip(succ, random_probabilities(rng, k))))
    goal = [rng.random() < target_rate for _ in range(n)]
    labels = tuple(frozenset({"goal"}) if g else frozenset() for g in goal)
    return InducedDtmc(("s",), tuple((i,) for i in range(n)), tuple(rows), labels, ("a",) * n, 0, 0)


def chain_from_rows(rows, targets=()):
    n = len(rows)
    labels = tuple(frozenset({"goal"}) if i in targets else frozenset() for i in range(n))
    rows = tuple(tuple((j, Fraction(p)) for j, p in r) for r in rows)
    return InducedDtmc(("s",), tuple((i,) for i in range(n)), rows, labels, ("a",) * n, 0, 0)


def _can_reach(d, target):
    n = d.n_states
    adj = np.zeros((n, n), dtype=bool)
    for i, row in enumerate(d.rows):
        for j, _ in row:
            adj[i, j] = True
    reach = adj | np.eye(n, dtype=bool)
    for _ in range(n):
        reach = reach | ((reach.astype(int) @ reach.astype(int)) > 0)
    return [bool(reach[i, sorted(target)].any()) if target else False for i in range(n)]


def oracle_reachability(d, target):
    """Least solution of ``x = A x + b`` by a sympy rational solve."""
    n = d.n_states
    reach = _can_reach(d, target)
    unknown = [i for i in range(n) if i not in target and reach[i]]
    values = [sympy.Integer(1) if i in target else sympy.Integer(0) for i in range(n)]
    if unknown:
        pos = {s: k for k, s in enumerate(unknown)}
        a = sympy.zeros(len(unknown), len(unknown))
        b = sympy.zeros(len(unknown), 1)
        for s in unknown:
            a[pos[s], pos[s]] += 1
            for j, pr in d.rows[s]:
                pr = sympy.Rational(pr.numerator, pr.denominator)
                if j in pos:
                    a[pos[s], pos[j]] -= pr
                elif j in target:
                    b[pos[s]] += pr
        x = a.LUsolve(b)
        for s in unknown:
            values[s] = x[pos[s]]
    return [Fraction(int(v.p), int(v.q)) for v in values]


def monte_carlo_reach(d, target, runs, rng, max_steps=100_000):
    """Fraction of ``runs`` walkers from state 0 that hit the target.

    Walkers move in bulk by multinomial splitting and stop once no walker can
    still reach the target.
    """
    n = d.n_states
    reach = _can_reach(d, target)
    probs = [(np.array([j for j, _ in row]), np.array([float(p) for _, p in row])) for row in d.rows]
    counts = np.zeros(n, dtype=np.int64)
    counts[0] = runs
    hits = 0
    for _ in range(max_steps):
        for t in target:
            hits += counts[t]
            counts[t] = 0
        live = [i for i in range(n) if counts[i] and reach[i]]
        if not live:
            break
        nxt = np.zeros(n, dtype=np.int64)
        for i in range(n):
            if counts[i]:
                succ, p = probs[i]
                nxt[succ] += rng.multinomial(counts[i], p / p.sum())
        counts = nxt
    return hits / runs


# --------------------------------------------------------------------------- graphs

def graph_from_matrix(w, layers=None):
    """Graph over nodes ``L0:i`` (or given layers) from a symmetric weight matrix."""
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    layers = layers if layers is not None else [0] * n
    counters = {}
    nodes = []
    for k in layers:
        nodes.append(NeuronId(k, counters.get(k, 0)))
        counters[k] = counters.get(k, 0) + 1
    i, j = np.triu_indices(n, 1)
    keep = w[i, j] != 0
    return CoactivationGraph(tuple(nodes), i[keep], j[keep], w[i, j][keep], {})


def random_weighted_graph(rng, max_nodes=30, density=0.4, signed=True):
    n = int(rng.integers(2, max_nodes + 1))
    w = rng.uniform(-1 if signed else 0.01, 1, size=(n, n))
    w[rng.random((n, n)) > density] = 0
    w = np.triu(w, 1)
    w = w + w.T
    return w


def dense_pagerank(w, d, tol=1e-15, max_iter=1_000_000):
    """Power iteration on the column-stochastic matrix of the non-isolated nodes."""
    a = np.abs(np.asarray(w, dtype=float))
    deg = a.sum(axis=0)
    active = deg > 0
    sub = a[np.ix_(active, active)]
    m = sub / sub.sum(axis=0, keepdims=True)
    n = int(active.sum())
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = (1 - d) / n + d * m @ x
        if np.abs(nxt - x).max() < tol:
            x = nxt
            break
        x = nxt
    out = np.zeros(a.shape[0])
    out[active] = x
    return out


def set_partitions(n):
    """All partitions of ``range(n)`` as restricted growth strings."""
    def grow(prefix, top):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for c in range(top + 2):
            yield from grow(prefix + [c], max(top, c))

    if n == 0:
        yield ()
        return
    yield from grow([0], 0)


def oracle_modularity(w, assignment):
    """Sum over communities of ``L_c / m - (D_c / 2m)^2``."""
    a = np.abs(np.asarray(w, dtype=float))
    two_m = a.sum()
    q = 0.0
    for c in set(assignment):
        members = [i for i, x in enumerate(assignment) if x == c]
        internal = a[np.ix_(members, members)].sum() / 2
        degree = a[members].sum()
        q += internal / (two_m / 2) - (degree / two_m) ** 2
    return q


# --------------------------------------------------------------------------- hand-built gate

GATE_MODEL = """
mdp

module gate
  f0 : [0..1] init 0;
  pos : [0..3] init 0;

  [flip] pos=0 -> 1/2:(f0'=0) & (pos'=1) + 1/2:(f0'=1) & (pos'=1);
  [left] pos=1 & f0=0 -> 1:(pos'=2);
  [left] pos=1 & f0=1 -> 1:(pos'=3);
  [right] pos=1 & f0=1 -> 1:(pos'=2);
  [right] pos=1 & f0=0 -> 1:(pos'=3);
endmodule

label "goal" = pos=2;
"""


def gate_policy():
    """Reads the coin: ``Q_left = relu(1 - f0)``, ``Q_right = relu(f0)``, ``Q_flip = 0``."""
    hidden = (np.array([[-1.0, 0.0], [1.0, 0.0]]), np.array([1.0, 0.0]), "relu")
    out = (np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.zeros(3), "linear")
    return make_policy([hidden, out], ("flip", "left", "right"))


GRID_MODEL = """
mdp
module grid
  x : [0..3] init 0;
  y : [0..3] init 0;
  [east] x<3 -> 3/4:(x'=x+1) + 1/4:(y'=min(y+1, 3));
  [north] y<3 -> 3/4:(y'=y+1) + 1/4:(x'=min(x+1, 3));
endmodule
label "corner" = x=3 & y=3;
"""
