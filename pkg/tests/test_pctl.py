from fractions import Fraction

import numpy as np
import pytest

from coactiv.errors import PropertySyntaxError, ThresholdRangeError
from coactiv.pctl import (
    check_reachability,
    export_result,
    parse_property,
    precompute,
    relevant_indices,
    relevant_states,
)
from helpers import chain_from_rows, oracle_reachability, random_chain

GOAL = parse_property('P=? [ F "goal" ]')


def test_parse_examples():
    p = parse_property("P>=0.99 [ F jobs_done = 1 ]")
    assert p.comparison == ">=" and p.threshold == Fraction(99, 100)
    assert p.text() == "P>=99/100 [ F jobs_done = 1 ]"
    q = parse_property('P=? [ F "done" & x>2 ]')
    assert q.is_query and q.threshold is None
    r = parse_property("P<1/4 [ F x=0 ]")
    assert r.threshold == Fraction(1, 4)
    assert parse_property(p.text()) == p


@pytest.mark.parametrize("text", ["Q>=0.5 [ F x=1 ]", "P>=0.5 [ G x=1 ]", "P>=0.5 F x=1", "P>=0.5 [ F x=1 ] extra",
                                  "P? [ F x=1 ]", "P>= [ F x=1 ]"])
def test_parse_errors(text):
    with pytest.raises(PropertySyntaxError):
        parse_property(text)


def test_threshold_range():
    with pytest.raises(ThresholdRangeError):
        parse_property("P>=1.5 [ F x=1 ]")


def test_holds():
    p = parse_property("P>=1/2 [ F x=1 ]")
    assert p.holds(Fraction(1, 2)) and not p.holds(Fraction(49, 100)) and p.holds(0.6)
    assert parse_property("P=? [ F x=1 ]").holds(Fraction(1)) is None


def test_fair_coin_half():
    d = chain_from_rows([[(1, "1/2"), (2, "1/2")], [(1, 1)], [(2, 1)]], targets={1})
    r = check_reachability(d, GOAL, "exact")
    assert r.values == (Fraction(1, 2), Fraction(1), Fraction(0))
    assert r.prob0 == {2} and r.prob1 == {1}


def test_geometric_retry_two_thirds():
    # retry with 1/4, win 1/2, lose 1/4: win probability (1/2) / (3/4) = 2/3
    d = chain_from_rows([[(0, "1/4"), (1, "1/2"), (2, "1/4")], [(1, 1)], [(2, 1)]], targets={1})
    assert check_reachability(d, GOAL, "exact").initial_value == Fraction(2, 3)
    it = check_reachability(d, GOAL, "iterative", eps=1e-12)
    assert abs(it.initial_value - 2 / 3) < 1e-10


def test_initial_state_in_target():
    d = chain_from_rows([[(1, 1)], [(1, 1)]], targets={0})
    r = check_reachability(d, parse_property('P>=1 [ F "goal" ]'))
    assert r.initial_value == 1 and r.satisfied is True


def test_unreachable_target():
    d = chain_from_rows([[(0, 1)], [(1, 1)]], targets={1})
    r = check_reachability(d, parse_property('P>0 [ F "goal" ]'))
    assert r.initial_value == 0 and r.satisfied is False


def test_precompute_sets():
    # 0 -> {1, 2}, 1 -> target 3, 2 -> sink 4, cycle 5 <-> 6 unreachable from target
    rows = [[(1, "1/2"), (2, "1/2")], [(3, 1)], [(4, 1)], [(3, 1)], [(4, 1)], [(6, 1)], [(5, 1)]]
    d = chain_from_rows(rows, targets={3})
    prob0, prob1 = precompute(d, frozenset({3}))
    assert prob0 == {2, 4, 5, 6}
    assert prob1 == {1, 3}


@pytest.mark.parametrize("seed", range(60))
def test_exact_matches_rational_oracle(seed):
    d = random_chain(np.random.default_rng(seed))
    r = check_reachability(d, GOAL, "exact")
    assert list(r.values) == oracle_reachability(d, r.target)
    assert all(isinstance(v, Fraction) for v in r.values)


@pytest.mark.parametrize("seed", range(30))
def test_iterative_close_to_exact(seed):
    d = random_chain(np.random.default_rng(seed), max_states=15)
    eps = 1e-10
    exact = check_reachability(d, GOAL, "exact").values
    approx = check_reachability(d, GOAL, "iterative", eps=eps).values
    assert max(abs(float(a) - float(b)) for a, b in zip(exact, approx)) <= 1e-6


def test_auto_mode_is_exact_on_small_chains():
    d = random_chain(np.random.default_rng(0))
    assert check_reachability(d, GOAL).mode == "exact"
    with pytest.raises(ValueError):
        check_reachability(d, GOAL, "fast")


def test_values_are_probabilities():
    for seed in range(20):
        r = check_reachability(random_chain(np.random.default_rng(seed)), GOAL, "exact")
        assert all(0 <= v <= 1 for v in r.values)
        assert all(r.values[i] == 1 for i in r.target)


def test_relevant_state_selections():
    rows = [[(1, "1/2"), (2, "1/2")], [(3, 1)], [(2, 1)], [(4, 1)], [(4, 1)]]
    d = chain_from_rows(rows, targets={1})
    r = check_reachability(d, GOAL)
    assert relevant_indices(d, r, "all_reachable") == [0, 1, 2, 3, 4]
    assert relevant_indices(d, r, "positive_prob") == [0, 1]
    assert relevant_indices(d, r, "target_only") == [1]
    # paths stop at the first target state, so 3 and 4 are never visited
    assert relevant_indices(d, r, "until_target") == [0, 1, 2]
    assert relevant_states(d, r, "target_only") == [(1,)]
    with pytest.raises(ValueError):
        relevant_indices(d, r, "everything")


def test_export_result():
    d = chain_from_rows([[(1, "1/2"), (2, "1/2")], [(1, 1)], [(2, 1)]], targets={1})
    r = check_reachability(d, parse_property('P>=0.4 [ F "goal" ]'))
    values, summary = export_result(r, {"chain": "abc"})
    assert values == "0 1/2\n1 1\n2 0\n"
    assert '"initial_value": "1/2"' in summary
    assert '"satisfied": true' in summary
    assert '"chain": "abc"' in summary
