import json

import numpy as np
import pytest

from helpseek import core, protocol, world
from helpseek.seeding import stream
from helpseek.world import (
    BudgetExceeded,
    EnvState,
    EpisodeHelper,
    QuestionSpec,
    QuestionType,
    WorldConfig,
    answer_outcome,
    helper_oracle,
    helper_search,
    load_preset,
    resolved_hops,
    sample_question,
)


def one_type(hops=1, p=0.5, rho=0.85, **kw):
    return WorldConfig(types=(QuestionType(0, hops, p),), rho=rho, **kw)


def test_presets_load():
    for name in world.PRESETS:
        w = load_preset(name)
        assert w.name == name
        assert WorldConfig.from_dict(w.to_dict()) == w
    with pytest.raises(ValueError):
        load_preset("nope")


def test_default_preset_has_both_populations():
    w = load_preset("default")
    ps = [t.p_param for t in w.types]
    assert max(ps) >= 0.5 and min(ps) <= 0.1
    assert [t.name for t in w.types] == ["KNOWN-1HOP", "UNKNOWN-1HOP", "KNOWN-2HOP", "UNKNOWN-2HOP"]
    assert w.rho == 0.85 and w.budget == 5


def test_load_world_from_file(tmp_path):
    path = tmp_path / "w.json"
    path.write_text(json.dumps(load_preset("twohop").to_dict()))
    assert world.load_world(path) == load_preset("twohop")


@pytest.mark.parametrize(
    "kwargs",
    [dict(types=()), dict(rho=0.0), dict(rho=1.5), dict(budget=0), dict(docs_per_search=0)],
)
def test_world_config_validation(kwargs):
    base = dict(types=(QuestionType(0, 1, 0.5),))
    base.update(kwargs)
    with pytest.raises(ValueError):
        WorldConfig(**base)


def test_type_ids_must_be_positional():
    with pytest.raises(ValueError):
        WorldConfig(types=(QuestionType(1, 1, 0.5),))
    with pytest.raises(ValueError):
        QuestionType(0, 0, 0.5)
    with pytest.raises(ValueError):
        QuestionType(0, 1, 1.5)


def test_world_hash_tracks_content():
    w = load_preset("default")
    assert w.hash() == load_preset("default").hash()
    assert w.hash() != w.with_(rho=0.9).hash()


def test_mixture_frequencies():
    w = load_preset("default")
    rng = stream(0, "mix")
    counts = np.bincount([sample_question(w, rng).type_id for _ in range(10_000)], minlength=4)
    assert np.all(np.abs(counts / 10_000 - 0.25) <= 0.02)


def test_single_type_world():
    w = one_type()
    rng = stream(1)
    assert {sample_question(w, rng).type_id for _ in range(50)} == {0}


def test_question_sequence_replays():
    w = load_preset("default")
    a = world.question_set(w, 20, stream(5, "q"))
    b = world.question_set(w, 20, stream(5, "q"))
    assert a == b
    assert a[0].gold_answer == world.gold_answer(a[0].question_id)


def test_gold_answers_vary():
    golds = {world.gold_answer(f"q{i}") for i in range(200)}
    assert len(golds) > 190


def test_deterministic_retriever():
    w = one_type(hops=1, rho=1.0)
    q = QuestionSpec("q", 0, "Paris")
    docs, state = helper_search(EnvState(0), "x", q, w, stream(0))
    assert state.resolved == 1 and state.searches == 1
    assert resolved_hops(docs, "q") == {1}
    assert len(docs) == w.docs_per_search


def _resolution_rate(hops, rho, searches, trials=10_000):
    w = one_type(hops=hops, rho=rho)
    q = QuestionSpec("q", 0, "x")
    rng = stream(11, hops, rho)
    full = 0
    for _ in range(trials):
        state = EnvState(0)
        for _ in range(searches):
            _, state = helper_search(state, "x", q, w, rng)
        full += state.resolved == hops
    return full / trials


def test_resolution_frequency_single_hop():
    assert abs(_resolution_rate(1, 0.5, 1) - 0.5) <= 0.02


def test_resolution_frequency_two_hops():
    assert abs(_resolution_rate(2, 0.8, 2) - 0.64) <= 0.02


def test_resolved_capped_and_budget():
    w = one_type(hops=1, rho=1.0, budget=3)
    q = QuestionSpec("q", 0, "x")
    state = EnvState(0)
    for _ in range(3):
        _, state = helper_search(state, "x", q, w, stream(0))
    assert state.resolved == 1 and state.searches == 3
    with pytest.raises(BudgetExceeded):
        helper_search(state, "x", q, w, stream(0))


def test_failed_search_returns_distractors():
    w = one_type(hops=1, rho=1e-9)
    q = QuestionSpec("q", 0, "x")
    docs, state = helper_search(EnvState(0), "x", q, w, stream(0))
    assert state.resolved == 0 and resolved_hops(docs, "q") == set()
    # distractors are keyed by (question, searches), not by the rng
    again, _ = helper_search(EnvState(0), "x", q, w, stream(99))
    assert docs == again


def test_resolved_hops_ignores_other_questions():
    assert resolved_hops(["fact:q1:hop2 fact:q10:hop1", "fact:q1:hop"], "q1") == {2}


def test_answer_outcome_cases():
    q = QuestionSpec("q", 0, "x")
    assert answer_outcome(EnvState(0, 1, 1), q, one_type(p=0.0), stream(0)) == 1
    assert answer_outcome(EnvState(0), q, one_type(p=1.0), stream(0)) == 1
    rng = stream(3)
    w = one_type(p=0.3)
    freq = np.mean([answer_outcome(EnvState(0), q, w, rng) for _ in range(10_000)])
    assert abs(freq - 0.3) <= 0.02


def test_correct_answer_text_normalizes_to_gold():
    q = QuestionSpec("q", 0, "New Harbor")
    rng = stream(0)
    for _ in range(30):
        assert core.r_acc(world.answer_text(q, 1, rng), q.gold_answer) == 1
        assert core.r_acc(world.answer_text(q, 0, rng), q.gold_answer) == 0


def test_oracle_helper_returns_gold():
    q = QuestionSpec("q", 0, "Paris")
    assert helper_oracle("anything", q) == "Paris"
    w = one_type(hops=2, p=0.0, oracle_mode=True)
    helper = EpisodeHelper(w, q, stream(0))
    assert helper("I need help") == ["Paris"]
    assert helper.state.resolved == 2
    text, correct = helper.answer()
    assert correct == 1 and core.r_acc(text, "Paris") == 1


def test_oracle_help_then_answer_reward():
    rc = core.RewardConfig(core.Variant.OTC, c=5)
    # help once and copy the gold answer; group best used no help
    g = core.group_rewards([(1, 1), (1, 0)], rc)
    assert g.total[0] == pytest.approx(core.r_help_otc(1, 0, 5), abs=1e-12)


def test_zero_help_oracle_episode_matches_parametric():
    q = QuestionSpec("q", 0, "x")
    plain, oracle = one_type(p=0.4), one_type(p=0.4, oracle_mode=True)
    a = [EpisodeHelper(plain, q, stream(0, i)).answer() for i in range(200)]
    b = [EpisodeHelper(oracle, q, stream(0, i)).answer() for i in range(200)]
    assert a == b


def test_episode_is_reproducible():
    w = load_preset("default")
    q = sample_question(w, stream(1), "qq")

    def episode():
        h = EpisodeHelper(w, q, stream(7, "ep"))
        docs = [h("a"), h("b")]
        return docs, h.state, h.answer()

    assert episode() == episode()


class Fixed:
    """Generator that asks for help ``j`` times and then answers."""

    def __init__(self, j):
        self.j, self.i = j, 0

    def __call__(self, question, trajectory, helper):
        self.i += 1
        if self.i <= self.j:
            return "<think>t</think><help>I need help</help>"
        text, _ = helper.answer()
        return f"<think>t</think><answer>{text}</answer>"


def _strategy_group(p, variant):
    """All deterministic strategies (j help calls, j = 0..L) scored as one group."""
    w = one_type(hops=1, p=p, oracle_mode=True)
    q = QuestionSpec("q", 0, world.gold_answer("q"))
    config = protocol.InferenceConfig(budget=w.budget, oracle_mode=True)
    pairs = []
    for j in range(w.budget + 1):
        helper = EpisodeHelper(w, q, stream(0, j))
        t = protocol.run_inference(q, Fixed(j), helper, config, "q")
        pairs.append((core.r_acc(t.answer, q.gold_answer), t.search_count))
    return pairs, core.group_rewards(pairs, core.RewardConfig(variant, 0.8, w.budget))


@pytest.mark.parametrize("variant", list(core.Variant))
def test_enumeration_unknown_question_needs_exactly_one_call(variant):
    pairs, g = _strategy_group(0.0, variant)
    assert [m for _, m in pairs] == list(range(6))
    best = max(g.total)
    assert [j for j, r in enumerate(g.total) if r == best] == [1]
    assert best == pytest.approx(core.r_help(1, g.n, core.RewardConfig(variant, 0.8, 5)), abs=1e-12)


def test_enumeration_known_question_under_strict_needs_no_call():
    _, g = _strategy_group(1.0, core.Variant.OTC_STRICT)
    assert g.total == (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
