"""Shared trajectory types and the search-penalty rewards.

A trajectory's total reward is ``r_acc * r_help``: exact-match correctness
times a multiplicative penalty on the number of searches ``m`` relative to
``n``, the search count of the most efficient correct trajectory in the
same GRPO group.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence


class StepType(enum.Enum):
    THINK = "think"
    SEARCH = "search"
    DOCUMENTS = "documents"
    WARNING = "warning"
    ANSWER = "answer"


@dataclass(frozen=True)
class Step:
    """One trajectory step.

    ``text`` holds the content of THINK/SEARCH/WARNING/ANSWER steps;
    ``documents`` holds the retrieved passages of a DOCUMENTS step.
    """

    kind: StepType
    text: str = ""
    documents: tuple[str, ...] = ()

    @property
    def env_emitted(self) -> bool:
        # retrieved text is masked out of the policy-gradient loss
        return self.kind in (StepType.DOCUMENTS, StepType.WARNING)


def think(text: str) -> Step:
    return Step(StepType.THINK, text)


def search(query: str) -> Step:
    return Step(StepType.SEARCH, query)


def documents(docs: Sequence[str]) -> Step:
    return Step(StepType.DOCUMENTS, documents=tuple(docs))


def warning(text: str) -> Step:
    return Step(StepType.WARNING, text)


def answer(text: str) -> Step:
    return Step(StepType.ANSWER, text)


class TrajectoryError(ValueError):
    """A step sequence violates the trajectory invariants."""


def validate_steps(steps: Sequence[Step]) -> None:
    for i, step in enumerate(steps):
        if step.kind in (StepType.DOCUMENTS, StepType.WARNING):
            if i == 0 or steps[i - 1].kind is not StepType.SEARCH:
                raise TrajectoryError(
                    f"step {i}: {step.kind.value} must immediately follow a search step"
                )
            if step.kind is StepType.DOCUMENTS and not step.documents:
                raise TrajectoryError(f"step {i}: empty documents step")
        if step.kind is StepType.ANSWER and i != len(steps) - 1:
            raise TrajectoryError(f"step {i}: answer must be the final step")


@dataclass
class Trajectory:
    question_id: str
    steps: list[Step] = field(default_factory=list)

    @property
    def truncated(self) -> bool:
        """True when the trajectory never produced its final answer."""
        return not self.steps or self.steps[-1].kind is not StepType.ANSWER

    @property
    def search_count(self) -> int:
        # searches that were actually served; a search answered by a warning
        # (or never served, as in abstention mode) does not count
        return sum(
            1
            for a, b in zip(self.steps, self.steps[1:])
            if a.kind is StepType.SEARCH and b.kind is StepType.DOCUMENTS
        )

    @property
    def answer(self) -> str | None:
        if self.truncated:
            return None
        return self.steps[-1].text

    def validate(self) -> None:
        validate_steps(self.steps)


class Variant(str, enum.Enum):
    EXP = "EXP"
    OTC = "OTC"
    OTC_STRICT = "OTC_STRICT"


@dataclass(frozen=True)
class RewardConfig:
    variant: Variant = Variant.OTC_STRICT
    lambda_decay: float = 0.8
    c: int = 5

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0.0 < self.lambda_decay <= 1.0:
            raise ValueError(f"lambda_decay must lie in (0, 1], got {self.lambda_decay}")
        if self.c < 1:
            raise ValueError(f"c must be a positive integer, got {self.c}")

    @classmethod
    def for_budget(cls, variant: Variant | str, budget: int, lambda_decay: float = 0.8):
        """Config with ``c`` tied to the maximum search budget."""
        return cls(Variant(variant), lambda_decay, budget)


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().split())


def r_acc(answer_text: str | None, gold: str) -> int:
    """Exact match after lowercasing and whitespace normalization."""
    if answer_text is None:
        return 0
    pred = normalize_answer(answer_text)
    if not pred:
        return 0
    return int(pred == normalize_answer(gold))


def n_eff(group: Sequence[tuple[int, int]]) -> int:
    """Search count of the most efficient correct entry; 0 if none is correct."""
    if not group:
        raise ValueError("n_eff of an empty group")
    correct = [m for acc, m in group if acc == 1]
    return min(correct) if correct else 0


def r_help_exp(m: int, n: int, lambda_decay: float) -> float:
    if not 0.0 < lambda_decay <= 1.0:
        raise ValueError(f"lambda_decay must lie in (0, 1], got {lambda_decay}")
    if m <= n:
        return 1.0
    return lambda_decay ** (m - n)


def r_help_otc(m: int, n: int, c: int) -> float:
    if m == 0 and n == 0:
        return 1.0
    if n == 0:
        return math.cos(m * math.pi / (2 * m + c))
    return math.sin(m * math.pi / (m + n))


def r_help_otc_strict(m: int, n: int, c: int) -> float:
    if m == 0 and n == 0:
        return 1.0
    if n == 0:
        return 0.0
    return math.sin(m * math.pi / (m + n))


def r_help(m: int, n: int, config: RewardConfig) -> float:
    if config.variant is Variant.EXP:
        return r_help_exp(m, n, config.lambda_decay)
    if config.variant is Variant.OTC:
        return r_help_otc(m, n, config.c)
    return r_help_otc_strict(m, n, config.c)


def total_reward(acc: int, help_value: float) -> float:
    return acc * help_value


@dataclass(frozen=True)
class GroupRewards:
    acc: tuple[int, ...]
    m: tuple[int, ...]
    help: tuple[float, ...]
    total: tuple[float, ...]
    n: int


def group_rewards(group: Sequence[tuple[int, int]], config: RewardConfig) -> GroupRewards:
    """Score a GRPO group of (r_acc, search_count) pairs.

    ``n`` is computed over the whole group, including the trajectory being
    scored.
    """
    n = n_eff(group)
    helps = tuple(r_help(m, n, config) for _, m in group)
    return GroupRewards(
        acc=tuple(a for a, _ in group),
        m=tuple(m for _, m in group),
        help=helps,
        total=tuple(total_reward(a, h) for (a, _), h in zip(group, helps)),
        n=n,
    )
