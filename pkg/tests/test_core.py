import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpseek import core
from helpseek.core import (
    RewardConfig,
    Variant,
    group_rewards,
    n_eff,
    r_acc,
    r_help_exp,
    r_help_otc,
    r_help_otc_strict,
    total_reward,
)


@pytest.mark.parametrize(
    "pred, gold, expected",
    [("Paris", "Paris", 1), ("paris ", "Paris", 1), ("London", "Paris", 0),
     ("  new   YORK", "New York", 1), ("   ", "Paris", 0), (None, "Paris", 0)],
)
def test_r_acc(pred, gold, expected):
    assert r_acc(pred, gold) == expected


@pytest.mark.parametrize(
    "group, expected",
    [([(1, 2), (1, 0), (0, 1)], 0), ([(0, 3), (0, 0)], 0), ([(1, 1), (1, 3)], 1), ([(0, 0), (1, 4)], 4)],
)
def test_n_eff(group, expected):
    assert n_eff(group) == expected


def test_n_eff_empty():
    with pytest.raises(ValueError):
        n_eff([])


def test_r_help_exp():
    assert r_help_exp(2, 2, 0.5) == 1.0
    assert r_help_exp(3, 1, 0.5) == pytest.approx(0.25, abs=1e-12)
    assert r_help_exp(1, 0, 0.8) == pytest.approx(0.8, abs=1e-12)
    # clamped, never above one
    assert r_help_exp(0, 2, 0.5) == 1.0
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            r_help_exp(1, 0, bad)


def test_r_help_otc():
    assert r_help_otc(0, 0, 5) == 1.0
    assert r_help_otc(5, 0, 5) == pytest.approx(0.5, abs=1e-12)
    assert r_help_otc(2, 2, 5) == pytest.approx(1.0, abs=1e-12)
    assert r_help_otc(2, 1, 5) == pytest.approx(0.8660254037844387, abs=1e-12)


def test_r_help_otc_strict():
    assert r_help_otc_strict(3, 0, 5) == 0.0
    assert r_help_otc_strict(0, 0, 5) == 1.0
    assert r_help_otc_strict(1, 2, 5) == pytest.approx(0.8660254037844386, abs=1e-12)


def test_sin_branch_zero_search_incorrect():
    # m=0 with n>0 only happens for incorrect trajectories
    assert r_help_otc(0, 2, 5) == 0.0
    g = group_rewards([(0, 0), (1, 2)], RewardConfig(Variant.OTC, c=5))
    assert g.total[0] == 0.0


@pytest.mark.parametrize("acc, h, expected", [(1, 0.5, 0.5), (0, 1.0, 0.0), (1, 1.0, 1.0)])
def test_total_reward(acc, h, expected):
    assert total_reward(acc, h) == expected


def test_reward_config():
    cfg = RewardConfig.for_budget("OTC", 5)
    assert cfg.variant is Variant.OTC and cfg.c == 5
    with pytest.raises(ValueError):
        RewardConfig(Variant.EXP, lambda_decay=0.0)
    with pytest.raises(ValueError):
        RewardConfig(Variant.OTC, c=0)
    with pytest.raises(ValueError):
        RewardConfig("BOGUS")


@pytest.mark.parametrize("lam", [0.5, 0.8])
@pytest.mark.parametrize("m", range(1, 6))
def test_severity_ordering(lam, m):
    strict = r_help_otc_strict(m, 0, 5)
    assert strict <= r_help_exp(m, 0, lam)
    assert strict <= r_help_otc(m, 0, 5)


@given(st.integers(0, 5), st.integers(0, 5), st.integers(1, 10), st.floats(0.01, 1.0))
def test_r_help_in_unit_interval(m, n, c, lam):
    for v in (r_help_exp(m, n, lam), r_help_otc(m, n, c), r_help_otc_strict(m, n, c)):
        assert -1e-12 <= v <= 1.0 + 1e-12
    assert r_help_exp(m, m, lam) == 1.0


@given(st.integers(1, 10))
def test_otc_monotone_in_m(c):
    values = [r_help_otc(m, 0, c) for m in range(c + 1)]
    assert all(a >= b for a, b in zip(values, values[1:]))


@given(
    st.lists(st.tuples(st.integers(0, 1), st.integers(0, 5)), min_size=1, max_size=16),
    st.sampled_from(list(Variant)),
)
def test_incorrect_trajectories_score_zero(group, variant):
    g = group_rewards(group, RewardConfig(variant, 0.8, 5))
    for acc, total in zip(g.acc, g.total):
        assert 0.0 <= total <= 1.0
        if acc == 0:
            assert total == 0.0
    correct = [m for a, m in group if a]
    assert g.n == (min(correct) if correct else 0)


def test_trajectory_counts_and_truncation():
    t = core.Trajectory("q", [
        core.think("t"), core.search("a"), core.documents(["d"]),
        core.search("b"), core.warning(" SEARCH LIMIT REACHED "),
        core.answer("x"),
    ])
    t.validate()
    assert t.search_count == 1
    assert not t.truncated and t.answer == "x"
    assert core.Trajectory("q", [core.think("t")]).truncated
    assert core.Trajectory("q").answer is None


@pytest.mark.parametrize(
    "steps",
    [
        [core.documents(["d"])],
        [core.warning("w")],
        [core.think("t"), core.documents(["d"])],
        [core.answer("x"), core.think("t")],
        [core.search("q"), core.documents([])],
    ],
)
def test_invalid_step_orders(steps):
    with pytest.raises(core.TrajectoryError):
        core.validate_steps(steps)


def test_documents_are_env_emitted():
    assert core.documents(["d"]).env_emitted
    assert not core.search("q").env_emitted
