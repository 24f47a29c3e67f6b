"""Synthetic QA world: typed questions, a noisy retriever and an oracle helper.

Each question type has a hop count ``k`` and a parametric success
probability ``p_param``. A search resolves one more hop with probability
``rho``; a fully resolved question is always answered correctly, otherwise
the answer is right with probability ``p_param``.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import core
from .seeding import config_hash

PRESETS = ("default", "oracle", "singlehop", "twohop")

_SYLLABLES = (
    "ar", "bel", "cor", "dan", "el", "fin", "gar", "hol", "ir", "jun", "kal", "lor",
    "mar", "nor", "os", "pel", "quin", "ros", "sal", "tor", "ul", "ven", "wyn", "zer",
)


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class QuestionType:
    type_id: int
    hops: int
    p_param: float
    name: str = ""
    weight: float = 1.0

    def __post_init__(self):
        if self.hops < 1:
            raise ValueError(f"type {self.type_id}: hops must be >= 1")
        if not 0.0 <= self.p_param <= 1.0:
            raise ValueError(f"type {self.type_id}: p_param must lie in [0, 1]")
        if self.weight < 0:
            raise ValueError(f"type {self.type_id}: negative mixture weight")


@dataclass(frozen=True)
class QuestionSpec:
    question_id: str
    type_id: int
    gold_answer: str


@dataclass(frozen=True)
class WorldConfig:
    types: tuple[QuestionType, ...]
    rho: float = 0.85
    budget: int = 5
    docs_per_search: int = 3
    oracle_mode: bool = False
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        if not self.types:
            raise ValueError("world needs at least one question type")
        for i, t in enumerate(self.types):
            if t.type_id != i:
                raise ValueError(f"type ids must be 0..n-1 in order; position {i} has {t.type_id}")
        if sum(t.weight for t in self.types) <= 0:
            raise ValueError("mixture weights sum to zero")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.budget < 1:
            raise ValueError("search budget must be >= 1")
        if self.docs_per_search < 1:
            raise ValueError("docs_per_search must be >= 1")

    @property
    def k_max(self) -> int:
        return max(t.hops for t in self.types)

    @property
    def weights(self) -> np.ndarray:
        w = np.array([t.weight for t in self.types], dtype=float)
        return w / w.sum()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["types"] = [asdict(t) for t in self.types]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WorldConfig":
        d = dict(d)
        d["types"] = tuple(QuestionType(**t) for t in d["types"])
        return cls(**d)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def with_(self, **changes) -> "WorldConfig":
        return replace(self, **changes)


def load_world(path: str | Path) -> WorldConfig:
    with open(path, encoding="utf-8") as f:
        return WorldConfig.from_dict(json.load(f))


def load_preset(name: str) -> WorldConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("helpseek.presets").joinpath(f"{name}.json").read_text("utf-8")
    return WorldConfig.from_dict(json.loads(text))


def _digest(*parts: Any) -> bytes:
    return hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=16).digest()


def _entity(raw: bytes, n_syllables: int) -> str:
    word = "".join(_SYLLABLES[b % len(_SYLLABLES)] for b in raw[:n_syllables])
    return word.capitalize()


def gold_answer(question_id: str) -> str:
    raw = _digest("gold", question_id)
    return f"{_entity(raw, 2 + raw[15] % 2)} {_entity(raw[4:], 2)}"


def sample_question(config: WorldConfig, rng: np.random.Generator, question_id: str | None = None) -> QuestionSpec:
    type_id = int(rng.choice(len(config.types), p=config.weights))
    if question_id is None:
        question_id = f"q{int(rng.integers(2**62)):016x}"
    return QuestionSpec(question_id, type_id, gold_answer(question_id))


def question_set(config: WorldConfig, n: int, rng: np.random.Generator, prefix: str = "q") -> list[QuestionSpec]:
    return [sample_question(config, rng, f"{prefix}-{i:06d}") for i in range(n)]


@dataclass
class EnvState:
    type_id: int
    searches: int = 0
    resolved: int = 0

    def observation(self) -> tuple[int, int, int]:
        return (self.type_id, self.searches, self.resolved)


def fact_token(question_id: str, hop: int) -> str:
    return f"fact:{question_id}:hop{hop}"


def resolved_hops(docs: list[str] | tuple[str, ...], question_id: str) -> set[int]:
    """Hop indices whose fact tokens appear in a set of passages."""
    pattern = re.compile(re.escape(f"fact:{question_id}:hop") + r"(\d+)")
    return {int(m.group(1)) for d in docs for m in pattern.finditer(d)}


def distractor(question_id: str, searches: int, slot: int) -> str:
    raw = _digest("distractor", question_id, searches, slot)
    return f"{_entity(raw, 3)} is mentioned alongside {_entity(raw[6:], 2)} in passage {raw[12:].hex()}."


def helper_search(
    state: EnvState,
    query: str,
    question: QuestionSpec,
    config: WorldConfig,
    rng: np.random.Generator,
) -> tuple[list[str], EnvState]:
    """Noisy retriever: resolves one more hop with probability ``rho``."""
    if state.searches >= config.budget:
        raise BudgetExceeded(f"search budget {config.budget} already spent")
    hops = config.types[question.type_id].hops
    docs = [distractor(question.question_id, state.searches, j) for j in range(config.docs_per_search)]
    resolved = state.resolved
    if rng.random() < config.rho:
        resolved = min(resolved + 1, hops)
        docs[0] = f"Evidence for hop {resolved}: {fact_token(question.question_id, resolved)}."
    return docs, EnvState(state.type_id, state.searches + 1, resolved)


def helper_oracle(query: str, question: QuestionSpec) -> str:
    return question.gold_answer


def answer_outcome(state: EnvState, question: QuestionSpec, config: WorldConfig, rng: np.random.Generator) -> int:
    qtype = config.types[question.type_id]
    if state.resolved >= qtype.hops:
        return 1
    return int(rng.random() < qtype.p_param)


def answer_text(question: QuestionSpec, correct: int, rng: np.random.Generator) -> str:
    """Surface form of a generated answer; correct ones may differ in case/spacing."""
    gold = question.gold_answer
    if correct:
        variant = int(rng.integers(3))
        if variant == 1:
            return gold.lower()
        if variant == 2:
            return " " + "  ".join(gold.split()) + " "
        return gold
    raw = rng.bytes(8)
    wrong = " ".join(_entity(raw[i * 3:], 1 + raw[7] % 3) for i in range(1 + raw[6] % 2))
    if core.normalize_answer(wrong) == core.normalize_answer(gold):
        wrong += " Jr"
    return wrong


@dataclass
class EpisodeHelper:
    """Helper handle for one episode; owns the environment state.

    Not thread-safe: each concurrent episode gets its own instance.
    """

    config: WorldConfig
    question: QuestionSpec
    rng: np.random.Generator
    state: EnvState = field(init=False)

    def __post_init__(self):
        self.state = EnvState(self.question.type_id)

    def __call__(self, query: str) -> list[str]:
        if self.config.oracle_mode:
            if self.state.searches >= self.config.budget:
                raise BudgetExceeded(f"search budget {self.config.budget} already spent")
            hops = self.config.types[self.question.type_id].hops
            self.state = EnvState(self.state.type_id, self.state.searches + 1, hops)
            return [helper_oracle(query, self.question)]
        docs, self.state = helper_search(self.state, query, self.question, self.config, self.rng)
        return docs

    def answer(self) -> tuple[str, int]:
        correct = answer_outcome(self.state, self.question, self.config, self.rng)
        return answer_text(self.question, correct, self.rng), correct
