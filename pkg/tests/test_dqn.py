import numpy as np
import pytest

from coactiv.dqn import (
    ModelEnv,
    ReplayBuffer,
    TrainConfig,
    evaluate,
    gradient_check,
    load_train_config,
    td_targets,
    train,
)
from coactiv.errors import ConfigError, DeadEndError
from coactiv.model_lang import parse_model
from coactiv.policy import bounds_normalization, forward, init_policy, policy_digest, select_action

BANDIT = parse_model("""
mdp
module bandit
  x : [0..1] init 0;
  [good] x=0 -> 1:(x'=1);
  [bad] x=0 -> 1:(x'=1);
endmodule
label "done" = x=1;
rewards "r"
  [good] true : 1;
endrewards
""")

WALK = parse_model("""
mdp
module walk
  x : [0..3] init 0;
  [step] x<3 -> 1/2:(x'=x+1) + 1/2:(x'=x);
endmodule
label "done" = x=3;
rewards "r"
  [step] true : 1;
endrewards
""")

DEAD = parse_model("""
mdp
module dead
  x : [0..2] init 0;
  [go] x=0 -> 1:(x'=1);
endmodule
label "done" = x=2;
""")


def test_gradient_check_small_network():
    rng = np.random.default_rng(0)
    p = init_policy(3, (5, 4), ("a", "b"), rng, bounds_normalization([(0, 4)] * 3))
    states = rng.integers(0, 5, size=(6, 3))
    actions = rng.integers(0, 2, size=6)
    targets = rng.normal(size=6)
    check = gradient_check(p, (states, actions, targets))
    assert check.n_params == 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2
    assert check.kinks == 0
    assert check.max_rel_error < 1e-5


def test_gradient_check_accepts_action_names():
    rng = np.random.default_rng(1)
    p = init_policy(2, (3,), ("a", "b"), rng)
    check = gradient_check(p, ([[0.3, 0.7], [0.1, 0.2]], ["b", "a"], [1.0, -1.0]))
    assert check.max_rel_error < 1e-5


def test_td_targets():
    q_next = np.array([[1.0, 5.0], [2.0, 3.0], [4.0, 0.0]])
    mask = np.array([[True, False], [True, True], [False, False]])
    rewards = np.array([1.0, 2.0, 3.0])
    terminal = np.array([False, True, False])
    y = td_targets(q_next, mask, rewards, terminal, 0.5)
    # masked action ignored, terminal bootstraps nothing, no enabled successor bootstraps nothing
    assert np.allclose(y, [1.5, 2.0, 3.0])


def test_replay_buffer_wraps_at_capacity():
    buf = ReplayBuffer(3, 1, 2)
    for i in range(5):
        buf.push([i], i % 2, float(i), [i + 1], [True, True], False)
    assert buf.size == 3
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]
    batch = buf.sample(3, np.random.default_rng(0))
    assert sorted(batch[2].tolist()) == [2.0, 3.0, 4.0]


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=10, replay_capacity=5)
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"no_such_option": "1"})
    cfg = TrainConfig.from_mapping({"hidden": "8, 4", "gamma": "0.5", "max_epochs": "10", "grad_clip": "none"})
    assert cfg.hidden == (8, 4) and cfg.gamma == 0.5 and cfg.max_epochs == 10 and cfg.grad_clip is None


def test_load_train_config(tmp_path):
    path = tmp_path / "train.ini"
    path.write_text("[train]\nhidden = 16 16\nseed = 3\nlearning_rate = 0.01\n")
    cfg = load_train_config(path)
    assert cfg.hidden == (16, 16) and cfg.seed == 3 and cfg.learning_rate == 0.01
    (tmp_path / "bad.ini").write_text("[other]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_train_config(tmp_path / "bad.ini")
    with pytest.raises(ConfigError):
        load_train_config(tmp_path / "missing.ini")


def test_bandit_with_zero_discount_learns_immediate_rewards():
    cfg = TrainConfig(hidden=(8,), batch_size=8, replay_capacity=64, gamma=0.0, learning_rate=0.05,
                      max_epochs=400, eps_start=1.0, eps_min=1.0, target_update=10, seed=0)
    p = train(BANDIT, cfg).policy
    q, _ = forward(p, [0])
    assert q[p.action_index("good")] == pytest.approx(1.0, abs=0.05)
    assert q[p.action_index("bad")] == pytest.approx(0.0, abs=0.05)
    assert select_action(p, [0], ["good", "bad"]) == "good"


def test_training_is_deterministic():
    cfg = TrainConfig(hidden=(6,), batch_size=4, replay_capacity=32, max_epochs=20, target_update=5, seed=7)
    a, b = train(WALK, cfg), train(WALK, cfg)
    assert policy_digest(a.policy) == policy_digest(b.policy)
    assert a.log_lines() == b.log_lines()
    c = train(WALK, TrainConfig(**{**cfg.to_dict(), "seed": 8}))
    assert policy_digest(c.policy) != policy_digest(a.policy)


def test_training_log_records():
    cfg = TrainConfig(hidden=(4,), batch_size=2, replay_capacity=8, max_epochs=5, seed=0)
    run = train(WALK, cfg)
    assert [r["episode"] for r in run.log] == list(range(5))
    assert all(r["length"] >= 3 for r in run.log)
    assert run.steps == sum(r["length"] for r in run.log)
    assert run.log[0]["epsilon"] <= 1.0


def test_stop_criterion_ends_training_early():
    calls = []

    def stop(policy, episode):
        calls.append(episode)
        return episode >= 9

    cfg = TrainConfig(hidden=(4,), batch_size=2, replay_capacity=8, max_epochs=100, check_interval=5, seed=0)
    run = train(WALK, cfg, stop)
    assert run.stopped_early and calls == [4, 9] and len(run.log) == 10


def test_evaluate_counts_steps_to_terminal():
    p = init_policy(1, (2,), ("step",), np.random.default_rng(0), bounds_normalization(WALK.bounds))
    mean, stats = evaluate(p, WALK, episodes=200, seed=0)
    # every step earns 1 and the expected time to absorb is 3 / (1/2) = 6
    assert all(s.terminal_reason == "terminal" for s in stats)
    assert mean == pytest.approx(6.0, abs=0.6)
    assert all(s.episode_return == s.length for s in stats)
    again, _ = evaluate(p, WALK, episodes=200, seed=0)
    assert again == mean


def test_evaluate_step_cap():
    p = init_policy(1, (2,), ("step",), np.random.default_rng(0))
    _, stats = evaluate(p, WALK, episodes=5, seed=1, max_steps=1)
    assert all(s.length == 1 for s in stats)
    assert any(s.terminal_reason == "step_cap" for s in stats)


def test_dead_end_is_reported():
    env = ModelEnv(DEAD)
    with pytest.raises(DeadEndError):
        env.check_live((1,))
    cfg = TrainConfig(hidden=(2,), batch_size=1, replay_capacity=4, max_epochs=2)
    with pytest.raises(DeadEndError):
        train(DEAD, cfg)
