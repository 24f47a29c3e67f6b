"""Warm-start corpus construction and count-based behavior cloning.

Candidates are built with a forced action sequence (``l`` think/search
pairs, then think/answer), so search counts are independent of what the
policy could answer parametrically.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from . import core, protocol
from .policy import ANSWER, HELP_QUERY, SEARCH, THINK_TEXT, PolicyTable, policy_shape
from .seeding import stream
from .world import EpisodeHelper, QuestionSpec, WorldConfig, question_set, resolved_hops


@dataclass(frozen=True)
class WarmStartConfig:
    l_max: int = 2
    num_samples: int = 5
    num_questions: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.l_max < 0:
            raise ValueError("l_max must be non-negative")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.num_questions < 1:
            raise ValueError("num_questions must be >= 1")


def build_trajectory(
    question: QuestionSpec, world: WorldConfig, l_target: int, rng: np.random.Generator, l_max: int = 2
) -> core.Trajectory:
    """Candidate with exactly ``l_target`` searches followed by an answer."""
    if not 0 <= l_target <= min(l_max, world.budget):
        raise ValueError(f"l_target={l_target} outside [0, {min(l_max, world.budget)}]")
    helper = EpisodeHelper(world, question, rng)
    steps = []
    for hop in range(l_target):
        query = HELP_QUERY if world.oracle_mode else f"hop {helper.state.resolved + 1} of {question.question_id}"
        steps += [core.think(THINK_TEXT), core.search(query), core.documents(helper(query))]
    text, _ = helper.answer()
    steps += [core.think(THINK_TEXT), core.answer(text)]
    return core.Trajectory(question.question_id, steps)


def select_trajectory(
    candidates: Sequence[core.Trajectory], gold: str, rng: np.random.Generator
) -> tuple[core.Trajectory, bool]:
    """Random correct candidate if any, else the shortest answer (first on ties).

    A selected correct candidate has its answer replaced by ``gold`` verbatim.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    correct = [i for i, c in enumerate(candidates) if core.r_acc(c.answer, gold)]
    if correct:
        chosen = candidates[correct[int(rng.integers(len(correct)))]]
        steps = chosen.steps[:-1] + [core.answer(gold)]
        return core.Trajectory(chosen.question_id, steps), True
    lengths = [len(c.answer or "") for c in candidates]
    return candidates[int(np.argmin(lengths))], False


def generate_corpus(world: WorldConfig, config: WarmStartConfig) -> list[dict[str, Any]]:
    if config.l_max > world.budget:
        raise ValueError(f"l_max={config.l_max} exceeds the search budget {world.budget}")
    grammar = protocol.grammar_for(world.oracle_mode)
    questions = question_set(world, config.num_questions, stream(config.seed, "warmstart-questions"), prefix="ws")
    rows = []
    for q in questions:
        rng = stream(config.seed, "warmstart", q.question_id)
        l_target = int(rng.integers(config.l_max + 1))
        candidates = [build_trajectory(q, world, l_target, rng, config.l_max) for _ in range(config.num_samples)]
        chosen, correct = select_trajectory(candidates, q.gold_answer, rng)
        rows.append({
            "question_id": q.question_id,
            "type_id": q.type_id,
            "l_target": l_target,
            "text": protocol.serialize(chosen, grammar),
            "correct": int(correct),
        })
    return rows


def action_visits(
    rows: Iterable[dict[str, Any]], world: WorldConfig
) -> Counter[tuple[tuple[int, int, int], int]]:
    """Count (state, action) pairs along each corpus trajectory."""
    grammar = protocol.grammar_for(world.oracle_mode)
    counts: Counter = Counter()
    for row in rows:
        t = int(row["type_id"])
        if not 0 <= t < len(world.types):
            raise ValueError(f"corpus type_id {t} not in world with {len(world.types)} types")
        hops = world.types[t].hops
        trajectory = protocol.parse(row["text"], grammar, row["question_id"])
        s, seen = 0, set()
        for step in trajectory.steps:
            r = min(len(seen), hops)
            if step.kind is core.StepType.SEARCH:
                counts[((t, s, r), SEARCH)] += 1
            elif step.kind is core.StepType.DOCUMENTS:
                s += 1
                if world.oracle_mode:
                    seen = set(range(1, hops + 1))
                else:
                    seen |= resolved_hops(step.documents, row["question_id"])
            elif step.kind is core.StepType.ANSWER:
                counts[((t, s, r), ANSWER)] += 1
            if s > world.budget:
                raise ValueError(f"{row['question_id']}: {s} searches exceed the world budget {world.budget}")
    return counts


def behavior_clone(rows: Sequence[dict[str, Any]], world: WorldConfig, alpha: float = 1.0) -> PolicyTable:
    """Laplace-smoothed count policy: P(a|s) = (n_a + alpha) / (n + 2 alpha)."""
    if not rows:
        raise ValueError("empty warm-start corpus")
    policy = PolicyTable(np.zeros(policy_shape(world)))
    counts = np.zeros(policy_shape(world))
    for ((t, s, r), a), n in action_visits(rows, world).items():
        counts[t, s, r, a] += n
    policy.logits = np.log(counts + alpha)
    return policy


def l_histogram(rows: Sequence[dict[str, Any]], l_max: int) -> list[float]:
    n = len(rows)
    return [sum(r["l_target"] == l for r in rows) / n for l in range(l_max + 1)]
