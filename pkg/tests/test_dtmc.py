from fractions import Fraction

import numpy as np
import pytest

from coactiv.dtmc import (
    build_induced_dtmc,
    dtmc_digest,
    dtmc_digests,
    export_dtmc,
    import_dtmc,
    read_dtmc,
    write_dtmc,
)
from coactiv.errors import ChainFormatError, DimensionError, StateLimitError
from coactiv.model_lang import parse_model
from coactiv.policy import bounds_normalization, init_policy, make_policy
from helpers import oracle_induced_chain, random_model_text

LINE = parse_model("""
mdp
module line
  x : [0..3] init 0;
  [right] x<3 -> 1:(x'=x+1);
  [left] x>0 -> 1:(x'=x-1);
endmodule
label "end" = x=3;
""")

COIN = parse_model("""
mdp
module coin
  x : [0..2] init 0;
  [flip] x=0 -> 1/3:(x'=1) + 2/3:(x'=2);
endmodule
""")


def constant_policy(q, names, dim=1):
    return make_policy([(np.zeros((len(q), dim)), np.array(q, float), "linear")], names)


def random_setup(seed):
    rng = np.random.default_rng(seed)
    m = parse_model(random_model_text(rng))
    p = init_policy(m.dimension, (4,), m.actions, rng, bounds_normalization(m.bounds))
    return m, p


def test_policy_always_right():
    d = build_induced_dtmc(LINE, constant_policy([1.0, 0.0], ("right", "left")))
    assert d.states == ((0,), (1,), (2,), (3,))
    assert d.chosen_action == ("right", "right", "right", "left")
    assert d.rows[0] == ((1, Fraction(1)),)
    # at x=3 right is disabled, so the best enabled action is taken
    assert d.fallbacks == 1
    assert d.labels[3] == {"end"}


def test_dead_end_becomes_self_loop():
    d = build_induced_dtmc(COIN, constant_policy([0.0], ("flip",)))
    assert d.states == ((0,), (1,), (2,))
    assert d.rows == (((1, Fraction(1, 3)), (2, Fraction(2, 3))), ((1, Fraction(1)),), ((2, Fraction(1)),))
    assert d.absorbing == (1, 2)
    assert d.chosen_action[1] is None
    assert d.n_transitions == 4


def test_dimension_checks():
    with pytest.raises(DimensionError):
        build_induced_dtmc(LINE, constant_policy([1.0], ("right",)))
    with pytest.raises(DimensionError):
        build_induced_dtmc(LINE, constant_policy([1.0, 0.0], ("right", "left"), dim=2))


def test_state_limit():
    with pytest.raises(StateLimitError) as info:
        build_induced_dtmc(LINE, constant_policy([1.0, 0.0], ("right", "left")), max_states=2)
    assert info.value.limit == 2


@pytest.mark.parametrize("seed", range(20))
def test_matches_enumeration_oracle(seed):
    m, p = random_setup(seed)
    d = build_induced_dtmc(m, p)
    assert export_dtmc(d) == export_dtmc(oracle_induced_chain(m, p))


@pytest.mark.parametrize("seed", range(5))
def test_rows_are_distributions(seed):
    m, p = random_setup(seed)
    d = build_induced_dtmc(m, p)
    for row in d.rows:
        assert sum(pr for _, pr in row) == 1
        assert all(pr > 0 for _, pr in row)
        assert len({j for j, _ in row}) == len(row)


@pytest.mark.parametrize("seed", range(5))
def test_export_round_trip(seed, tmp_path):
    m, p = random_setup(seed)
    d = build_induced_dtmc(m, p)
    assert import_dtmc(export_dtmc(d)) == d
    paths = write_dtmc(d, tmp_path / "chain")
    assert sorted(path.suffix for path in paths.values()) == [".act", ".lab", ".sta", ".tra"]
    assert read_dtmc(tmp_path / "chain") == d


def test_export_format():
    d = build_induced_dtmc(COIN, constant_policy([0.0], ("flip",)))
    e = export_dtmc(d)
    assert e.transitions == "0 1 1/3\n0 2 2/3\n1 1 1\n2 2 1\n"
    assert e.states == "# x\n0 0\n1 1\n2 2\n"
    assert e.actions == "# initial 0 fallbacks 0\n0 flip\n1 -\n2 -\n"
    assert e.labels == "0\n1\n2\n"


def test_malformed_import():
    e = export_dtmc(build_induced_dtmc(COIN, constant_policy([0.0], ("flip",))))
    with pytest.raises(ChainFormatError):
        import_dtmc(e._replace(states="0 0\n"))
    with pytest.raises(ChainFormatError):
        import_dtmc(e._replace(transitions="0 1\n"))


def test_digests_are_reproducible_and_sensitive():
    m, p = random_setup(3)
    a, b = build_induced_dtmc(m, p), build_induced_dtmc(m, p)
    assert dtmc_digests(a) == dtmc_digests(b)
    assert set(dtmc_digests(a)) == {"transitions", "labels", "states", "actions", "chain"}
    right = build_induced_dtmc(LINE, constant_policy([1.0, 0.0], ("right", "left")))
    left = build_induced_dtmc(LINE, constant_policy([0.0, 1.0], ("right", "left")))
    assert dtmc_digest(right) != dtmc_digest(left)
