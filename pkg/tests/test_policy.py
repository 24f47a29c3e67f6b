import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpseek import core, policy
from helpseek.policy import (
    ANSWER,
    SEARCH,
    PolicyTable,
    action_prob,
    entropy,
    kl_to_init,
    load_checkpoint,
    sample_trajectory,
    save_checkpoint,
    softmax_rows,
)
from helpseek.seeding import stream
from helpseek.world import QuestionSpec, QuestionType, WorldConfig, load_preset

W = WorldConfig(types=(QuestionType(0, 1, 0.5), QuestionType(1, 2, 0.0)), rho=0.85, budget=3)
logit_pairs = arrays(float, 2, elements=st.floats(-30, 30))


def table_with(state, row, world=W):
    pol = PolicyTable.uniform(world)
    pol.logits[state] = row
    return pol


def test_shape_and_uniform():
    pol = PolicyTable.uniform(W)
    assert pol.shape == (2, 4, 3, 2)
    assert pol.budget == 3
    assert np.allclose(action_prob(pol, (0, 0, 0)), [0.5, 0.5])


def test_rejects_bad_tables():
    with pytest.raises(ValueError):
        PolicyTable(np.zeros((2, 3)))
    bad = np.zeros((1, 2, 2, 2))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        PolicyTable(bad)


def test_out_of_range_state():
    pol = PolicyTable.uniform(W)
    for state in [(2, 0, 0), (0, 4, 0), (0, 0, 3), (-1, 0, 0), pol.n_states]:
        with pytest.raises(IndexError):
            action_prob(pol, state)


def test_state_index_roundtrip():
    pol = PolicyTable.uniform(W)
    seen = set()
    for t in range(2):
        for s in range(4):
            for r in range(3):
                idx = pol.state_index((t, s, r))
                assert pol.searches_of(idx) == s
                seen.add(idx)
    assert seen == set(range(pol.n_states))


def test_near_deterministic_state():
    pol = table_with((0, 0, 0), [10.0, -10.0])
    assert action_prob(pol, (0, 0, 0))[ANSWER] >= 0.9999
    assert entropy(pol, (0, 0, 0)) < 1e-3


def test_uniform_entropy():
    assert entropy(PolicyTable.uniform(W), (1, 2, 1)) == pytest.approx(math.log(2), abs=1e-12)


@given(logit_pairs)
def test_softmax_normalized_and_entropy_nonnegative(row):
    pol = table_with((0, 1, 0), row)
    p = action_prob(pol, (0, 1, 0))
    assert abs(p.sum() - 1.0) <= 1e-12
    assert entropy(pol, (0, 1, 0)) >= 0.0


@given(logit_pairs, st.floats(-50, 50))
def test_shift_invariance(row, shift):
    a = action_prob(table_with((0, 0, 0), row), (0, 0, 0))
    b = action_prob(table_with((0, 0, 0), row + shift), (0, 0, 0))
    assert np.allclose(a, b, atol=1e-12)


def test_kl_known_value():
    init = PolicyTable(np.zeros((1, 1, 1, 2)))
    pol = PolicyTable(np.log(np.array([0.9, 0.1])).reshape(1, 1, 1, 2))
    expected = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
    assert kl_to_init(pol, init) == pytest.approx(expected, abs=1e-12)
    assert kl_to_init(pol, init) == pytest.approx(0.3680642, abs=1e-7)


def test_kl_identity_and_shape_check():
    world = load_preset("default")
    a = PolicyTable(stream(0).normal(size=policy.policy_shape(world)))
    assert kl_to_init(a, a.copy()) == 0.0
    with pytest.raises(ValueError):
        kl_to_init(a, PolicyTable.uniform(W))


@given(arrays(float, (1, 2, 2, 2), elements=st.floats(-20, 20)), arrays(float, (1, 2, 2, 2), elements=st.floats(-20, 20)))
def test_kl_nonnegative(a, b):
    assert kl_to_init(PolicyTable(a), PolicyTable(b)) >= 0.0


def test_kl_weights():
    init = PolicyTable(np.zeros((1, 1, 2, 2)))
    logits = np.zeros((1, 1, 2, 2))
    logits[0, 0, 1] = np.log([0.9, 0.1])
    pol = PolicyTable(logits)
    # all weight on the unchanged state
    assert kl_to_init(pol, init, weights=[1.0, 0.0]) == 0.0
    assert kl_to_init(pol, init, weights=[0.0, 2.0]) == pytest.approx(0.3680642, abs=1e-7)


def forced(world, search_until):
    """Search while fewer than ``search_until`` searches are done, then answer."""
    logits = np.zeros(policy.policy_shape(world))
    logits[..., SEARCH] = -60.0
    logits[:, :search_until, :, SEARCH] = 60.0
    return PolicyTable(logits)


def test_forced_answer_gives_zero_searches():
    q = QuestionSpec("q", 0, "Paris")
    r = sample_trajectory(forced(W, 0), q, W, stream(0))
    assert r.search_count == 0 and r.actions == [ANSWER]
    assert not r.trajectory.truncated


def test_forced_search_stops_at_budget():
    q = QuestionSpec("q", 1, "Paris")
    r = sample_trajectory(forced(W, W.budget + 1), q, W, stream(0))
    assert r.search_count == W.budget
    assert r.actions == [SEARCH] * W.budget + [ANSWER]
    # the mask makes the last answer certain
    assert r.logps[-1] == 0.0
    assert not any(s.kind is core.StepType.WARNING for s in r.trajectory.steps)


def test_recorded_logps_match_policy():
    pol = PolicyTable(stream(3).normal(size=policy.policy_shape(W)))
    q = QuestionSpec("q", 1, "Paris")
    for seed in range(20):
        r = sample_trajectory(pol, q, W, stream(seed))
        for idx, a, lp in zip(r.states, r.actions, r.logps):
            p = policy.masked_action_prob(pol, idx)
            assert lp == pytest.approx(math.log(p[a]), abs=1e-12)
        assert len(r.actions) == r.search_count + 1


def test_states_follow_environment():
    pol = forced(W, 2)
    q = QuestionSpec("q", 1, "Paris")
    r = sample_trajectory(pol, q, W.with_(rho=1.0), stream(0))
    assert [pol.searches_of(s) for s in r.states] == [0, 1, 2]
    assert r.states[-1] == pol.state_index((1, 2, 2))
    assert r.correct == 1 and core.r_acc(r.trajectory.answer, "Paris") == 1


def test_sampling_is_reproducible():
    pol = PolicyTable(stream(3).normal(size=policy.policy_shape(W)))
    q = QuestionSpec("q", 0, "Paris")
    a = sample_trajectory(pol, q, W, stream(5, "x"))
    b = sample_trajectory(pol, q, W, stream(5, "x"))
    assert a.trajectory == b.trajectory and a.logps == b.logps


def test_oracle_mode_uses_help_tags():
    world = WorldConfig(types=(QuestionType(0, 1, 0.0),), oracle_mode=True)
    r = sample_trajectory(forced(world, 1), QuestionSpec("q", 0, "Paris"), world, stream(0))
    assert r.trajectory.steps[1] == core.search(policy.HELP_QUERY)
    assert r.trajectory.steps[2].documents == ("Paris",)


def test_softmax_rows_stable():
    p = softmax_rows(np.array([[1000.0, 0.0], [-1000.0, -1000.0]]))
    assert np.allclose(p, [[1.0, 0.0], [0.5, 0.5]])


def test_checkpoint_roundtrip(tmp_path):
    pol = PolicyTable(stream(1).normal(size=policy.policy_shape(W)))
    path = tmp_path / "c.json"
    save_checkpoint(path, pol, {"seed": 4})
    loaded, meta = load_checkpoint(path)
    assert np.array_equal(loaded.logits, pol.logits)
    assert meta == {"seed": 4}
