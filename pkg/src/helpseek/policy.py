"""Tabular softmax policy over (question type, searches used, resolved hops)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import protocol
from .core import Trajectory
from .world import EpisodeHelper, QuestionSpec, WorldConfig

ANSWER, SEARCH = 0, 1
ACTIONS = ("ANSWER", "SEARCH")
THINK_TEXT = "Decide whether the answer is known or needs a search."
HELP_QUERY = "I need help"


@dataclass
class PolicyTable:
    """Logits indexed by ``[type_id, searches, resolved_hops, action]``."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        if self.logits.ndim != 4 or self.logits.shape[-1] != 2:
            raise ValueError(f"logits must have shape (types, budget+1, k_max+1, 2), got {self.logits.shape}")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("policy logits must be finite")

    @classmethod
    def uniform(cls, world: WorldConfig) -> "PolicyTable":
        return cls(np.zeros(policy_shape(world)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.logits.shape

    @property
    def n_states(self) -> int:
        return int(np.prod(self.logits.shape[:3]))

    @property
    def budget(self) -> int:
        return self.logits.shape[1] - 1

    def flat(self) -> np.ndarray:
        """View of the logits as an (n_states, 2) matrix."""
        return self.logits.reshape(self.n_states, 2)

    def state_index(self, state: int | Sequence[int]) -> int:
        if isinstance(state, (int, np.integer)):
            if not 0 <= state < self.n_states:
                raise IndexError(f"state index {state} out of range [0, {self.n_states})")
            return int(state)
        t, s, r = state
        n_types, n_s, n_r, _ = self.logits.shape
        if not (0 <= t < n_types and 0 <= s < n_s and 0 <= r < n_r):
            raise IndexError(f"state {tuple(state)} outside table of shape {self.logits.shape[:3]}")
        return (t * n_s + s) * n_r + r

    def searches_of(self, index: int) -> int:
        _, n_s, n_r, _ = self.logits.shape
        return (index // n_r) % n_s

    def copy(self) -> "PolicyTable":
        return PolicyTable(self.logits.copy())


def policy_shape(world: WorldConfig) -> tuple[int, int, int, int]:
    return (len(world.types), world.budget + 1, world.k_max + 1, 2)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def action_prob(policy: PolicyTable, state) -> np.ndarray:
    """Distribution over (ANSWER, SEARCH) at ``state``."""
    return softmax_rows(policy.flat()[policy.state_index(state)])


def search_prob(policy: PolicyTable, index: int) -> float:
    """Masked SEARCH probability: zero once the budget is spent."""
    if policy.searches_of(index) >= policy.budget:
        return 0.0
    row = policy.flat()[index]
    return 1.0 / (1.0 + math.exp(row[ANSWER] - row[SEARCH]))


def masked_action_prob(policy: PolicyTable, state) -> np.ndarray:
    """Like :func:`action_prob`, but SEARCH is masked once the budget is spent."""
    p = search_prob(policy, policy.state_index(state))
    return np.array([1.0 - p, p])


def _entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def entropy(policy: PolicyTable, state) -> float:
    return float(_entropy(action_prob(policy, state)))


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def kl_rows(policy: PolicyTable, init_policy: PolicyTable) -> np.ndarray:
    lp = log_softmax_rows(policy.flat())
    lq = log_softmax_rows(init_policy.flat())
    return (np.exp(lp) * (lp - lq)).sum(axis=1)


def kl_to_init(policy: PolicyTable, init_policy: PolicyTable, weights: np.ndarray | None = None) -> float:
    """Visitation-weighted mean of per-state KL(policy || init)."""
    if policy.shape != init_policy.shape:
        raise ValueError(f"policy shapes differ: {policy.shape} vs {init_policy.shape}")
    kl = kl_rows(policy, init_policy)
    if weights is None:
        weights = np.ones_like(kl)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if total <= 0:
        return 0.0
    return float(max((weights * kl).sum() / total, 0.0))


@dataclass
class Rollout:
    trajectory: Trajectory
    question: QuestionSpec
    states: list[int] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    logps: list[float] = field(default_factory=list)
    correct: int = 0
    answer: str | None = None

    @property
    def search_count(self) -> int:
        return self.trajectory.search_count


class PolicyGenerator:
    """Adapts a policy table to the protocol's generator contract."""

    def __init__(self, policy: PolicyTable, world: WorldConfig, rng: np.random.Generator, rollout: Rollout):
        self.policy = policy
        self.world = world
        self.rng = rng
        self.rollout = rollout
        self.grammar = protocol.grammar_for(world.oracle_mode)

    def choose(self, helper: EpisodeHelper) -> int:
        idx = self.policy.state_index(helper.state.observation())
        p = search_prob(self.policy, idx)
        action = SEARCH if self.rng.random() < p else ANSWER
        self.rollout.states.append(idx)
        self.rollout.actions.append(action)
        self.rollout.logps.append(math.log(p if action == SEARCH else 1.0 - p))
        return action

    def __call__(self, question: QuestionSpec, trajectory: Trajectory, helper: EpisodeHelper) -> str:
        g = self.grammar
        action = self.choose(helper)
        head = f"<{g.think}>{THINK_TEXT}</{g.think}>"
        if action == SEARCH:
            query = HELP_QUERY if self.world.oracle_mode else f"hop {helper.state.resolved + 1} of {question.question_id}"
            return f"{head}<{g.search}>{query}</{g.search}>"
        text, correct = helper.answer()
        self.rollout.correct = correct
        self.rollout.answer = text
        return f"{head}<{g.answer}>{escape(text)}</{g.answer}>"


def sample_trajectory(
    policy: PolicyTable, question: QuestionSpec, world: WorldConfig, rng: np.random.Generator
) -> Rollout:
    """Roll the policy out through the inference loop, recording log-probs."""
    rollout = Rollout(protocol.Trajectory(question.question_id), question)
    helper = EpisodeHelper(world, question, rng)
    generator = PolicyGenerator(policy, world, rng, rollout)
    config = protocol.InferenceConfig(budget=world.budget, oracle_mode=world.oracle_mode, top_k=world.docs_per_search)
    rollout.trajectory = protocol.run_inference(question, generator, helper, config, question.question_id)
    return rollout


def save_checkpoint(path: str | Path, policy: PolicyTable, meta: dict[str, Any]) -> None:
    record = dict(meta)
    record["shape"] = list(policy.shape)
    record["logits"] = [float(x) for x in policy.logits.ravel()]
    Path(path).write_text(json.dumps(record, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[PolicyTable, dict[str, Any]]:
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    shape = tuple(record.pop("shape"))
    logits = np.array(record.pop("logits"), dtype=float).reshape(shape)
    return PolicyTable(logits), record
