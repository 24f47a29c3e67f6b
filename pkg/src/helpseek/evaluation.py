"""Search-enabled and search-disabled (abstention) evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from . import core, protocol
from .policy import SEARCH, PolicyGenerator, PolicyTable, Rollout, sample_trajectory
from .seeding import stream
from .world import EnvState, EpisodeHelper, QuestionSpec, WorldConfig, answer_outcome

BUCKETS = ("0", "1", "2+")


def tool_productivity(records: Sequence[tuple[int, int]]) -> float:
    """Mean of correct / (1 + searches) over (correct, searches) records."""
    if not records:
        raise ValueError("tool productivity of an empty record set")
    return sum(c / (1 + m) for c, m in records) / len(records)


def bucket_of(m: int) -> str:
    return BUCKETS[min(m, 2)]


@dataclass
class SearchModeReport:
    accuracy: float
    mean_tool_calls: float
    tool_productivity: float
    bucket_fraction: dict[str, float]
    bucket_accuracy: dict[str, float | None]
    num_questions: int
    samples_per_question: int
    per_type: dict[int, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["per_type"] = {str(k): v for k, v in self.per_type.items()}
        return d

    def bucket_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bucket", "fraction", "accuracy"])
        for b in BUCKETS:
            acc = self.bucket_accuracy[b]
            writer.writerow([b, repr(self.bucket_fraction[b]), "" if acc is None else repr(acc)])
        return buf.getvalue()


def search_rollouts(
    policy: PolicyTable, world: WorldConfig, questions: Sequence[QuestionSpec], samples_per_q: int, seed: int
) -> list[Rollout]:
    return [
        sample_trajectory(policy, q, world, stream(seed, "eval-search", q.question_id, j))
        for q in questions
        for j in range(samples_per_q)
    ]


def summarize_search(rollouts: Sequence[Rollout], world: WorldConfig, samples_per_q: int) -> SearchModeReport:
    if not rollouts:
        raise ValueError("no rollouts to summarize")
    records = [(core.r_acc(r.trajectory.answer, r.question.gold_answer), r.search_count) for r in rollouts]
    n = len(records)
    fraction, accuracy = {}, {}
    for b in BUCKETS:
        hits = [c for c, m in records if bucket_of(m) == b]
        fraction[b] = len(hits) / n
        accuracy[b] = sum(hits) / len(hits) if hits else None
    per_type = {}
    for t in world.types:
        rows = [(c, m, r) for (c, m), r in zip(records, rollouts) if r.question.type_id == t.type_id]
        if rows:
            per_type[t.type_id] = {
                "accuracy": sum(c for c, _, _ in rows) / len(rows),
                "mean_tool_calls": sum(m for _, m, _ in rows) / len(rows),
                "first_search_rate": sum(r.actions[0] == SEARCH for _, _, r in rows) / len(rows),
            }
    return SearchModeReport(
        accuracy=sum(c for c, _ in records) / n,
        mean_tool_calls=sum(m for _, m in records) / n,
        tool_productivity=tool_productivity(records),
        bucket_fraction=fraction,
        bucket_accuracy=accuracy,
        num_questions=n // samples_per_q,
        samples_per_question=samples_per_q,
        per_type=per_type,
    )


def eval_search_mode(
    policy: PolicyTable,
    world: WorldConfig,
    questions: Sequence[QuestionSpec],
    samples_per_q: int = 4,
    seed: int = 0,
) -> SearchModeReport:
    if not questions:
        raise ValueError("empty question set")
    rollouts = search_rollouts(policy, world, questions, samples_per_q, seed)
    return summarize_search(rollouts, world, samples_per_q)


@dataclass
class AnswerabilityProfile:
    """Parametric (no-search) correctness draws per question."""

    draws: dict[str, tuple[int, ...]]
    threshold: float = 0.1

    def mean(self, question_id: str) -> float:
        d = self.draws[question_id]
        return sum(d) / len(d)

    def always_correct(self, question_id: str) -> bool:
        return all(self.draws[question_id])

    def always_incorrect(self, question_id: str) -> bool:
        return not any(self.draws[question_id])

    def answerable(self, question_id: str) -> bool:
        return self.mean(question_id) > self.threshold


def answerability_profile(
    world: WorldConfig,
    questions: Sequence[QuestionSpec],
    k_samples: int = 10,
    rng: np.random.Generator | None = None,
    threshold: float = 0.1,
) -> AnswerabilityProfile:
    if k_samples < 1:
        raise ValueError("k_samples must be >= 1")
    if rng is None:
        rng = stream(world.seed, "answerability")
    draws = {}
    for q in questions:
        state = EnvState(q.type_id)
        draws[q.question_id] = tuple(answer_outcome(state, q, world, rng) for _ in range(k_samples))
    return AnswerabilityProfile(draws, threshold)


@dataclass
class AbstentionReport:
    overall_accuracy: float
    precision: float | None
    abstain_rate: float
    abs0_pct: float | None
    abs1_pct: float | None
    delta: float | None
    num_records: int
    num_always_incorrect: int
    num_always_correct: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class AbstentionRecord:
    question: QuestionSpec
    trajectory: core.Trajectory
    abstained: bool
    correct: int


def abstention_rollout(
    policy: PolicyTable, question: QuestionSpec, world: WorldConfig, rng: np.random.Generator
) -> AbstentionRecord:
    """One search-disabled episode: a first SEARCH action is an abstention."""
    rollout = Rollout(core.Trajectory(question.question_id), question)
    helper = EpisodeHelper(world, question, rng)
    generator = PolicyGenerator(policy, world, rng, rollout)
    text = generator(question, rollout.trajectory, helper)
    steps, _ = protocol.parse_steps(text, generator.grammar)
    trajectory = core.Trajectory(question.question_id, steps)
    abstained = rollout.actions[0] == SEARCH
    correct = 0 if abstained else core.r_acc(trajectory.answer, question.gold_answer)
    return AbstentionRecord(question, trajectory, abstained, correct)


def _pct(flags: list[bool]) -> float | None:
    return 100.0 * sum(flags) / len(flags) if flags else None


def summarize_abstention(records: Sequence[AbstentionRecord], profile: AnswerabilityProfile) -> AbstentionReport:
    n = len(records)
    answered = [r for r in records if not r.abstained]
    inc = [r.abstained for r in records if profile.always_incorrect(r.question.question_id)]
    cor = [r.abstained for r in records if profile.always_correct(r.question.question_id)]
    abs0, abs1 = _pct(inc), _pct(cor)
    return AbstentionReport(
        overall_accuracy=sum(r.correct for r in records) / n,
        precision=sum(r.correct for r in answered) / len(answered) if answered else None,
        abstain_rate=(n - len(answered)) / n,
        abs0_pct=abs0,
        abs1_pct=abs1,
        delta=abs0 - abs1 if abs0 is not None and abs1 is not None else None,
        num_records=n,
        num_always_incorrect=len(inc),
        num_always_correct=len(cor),
    )


def eval_abstention_mode(
    policy: PolicyTable,
    world: WorldConfig,
    questions: Sequence[QuestionSpec],
    profile: AnswerabilityProfile,
    samples_per_q: int = 4,
    seed: int = 0,
) -> AbstentionReport:
    """Search access removed; every sample counts as its own record."""
    if not questions:
        raise ValueError("empty question set")
    missing = [q.question_id for q in questions if q.question_id not in profile.draws]
    if missing:
        raise ValueError(f"profile lacks {len(missing)} questions, e.g. {missing[0]}")
    records = abstention_records(policy, world, questions, samples_per_q, seed)
    return summarize_abstention(records, profile)


def abstention_records(
    policy: PolicyTable, world: WorldConfig, questions: Sequence[QuestionSpec], samples_per_q: int, seed: int
) -> list[AbstentionRecord]:
    return [
        abstention_rollout(policy, q, world, stream(seed, "eval-abstain", q.question_id, j))
        for q in questions
        for j in range(samples_per_q)
    ]
