"""GRPO trainer for the tabular policy.

Each step samples ``batch_questions`` questions, rolls out ``group_size``
trajectories per question, scores them with the search-penalty reward and
takes one clipped-surrogate ascent step on group-relative advantages.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import core
from .evaluation import SearchModeReport, eval_search_mode
from .policy import PolicyTable, Rollout, kl_rows, sample_trajectory, softmax_rows
from .seeding import stream
from .world import QuestionSpec, WorldConfig, question_set, sample_question

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 16
    batch_questions: int = 64
    learning_rate: float = 0.05
    clip_epsilon: float = 0.2
    entropy_coeff: float = 0.001
    beta_kl: float = 0.0
    grad_clip_norm: float = 1.0
    steps: int = 200
    eval_every: int = 25
    std_normalize: bool = True
    seed: int = 0
    val_questions: int = 256
    val_samples: int = 1
    adam_betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be positive")
        for name in ("learning_rate", "entropy_coeff", "beta_kl", "grad_clip_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.steps < 0 or self.eval_every < 1 or self.batch_questions < 1:
            raise ValueError("steps >= 0, eval_every >= 1 and batch_questions >= 1 required")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, dump: dict[str, Any]):
        super().__init__(message)
        self.dump = dump


def compute_advantages(rewards: Sequence[float], std_normalize: bool = True) -> np.ndarray:
    """Group-relative advantages.

    Groups whose spread is negligible relative to their magnitude get zero
    advantages, which keeps the normalization exactly scale-invariant.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise ValueError("a GRPO group needs at least two rewards")
    centered = r - r.mean()
    if not std_normalize:
        return centered
    std = r.std()
    if std <= 1e-8 * max(1.0, float(np.abs(r).max())):
        return np.zeros_like(r)
    return centered / std


def clipped_surrogate(ratio: np.ndarray, advantage: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-token PPO-clip objective and d(objective)/d(log-prob)."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    unclipped = ratio * advantage
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * advantage
    value = np.minimum(unclipped, clipped)
    # the gradient flows only where the unclipped branch is active; NaNs propagate
    active = ~(clipped < unclipped)
    return value, np.where(active, ratio * advantage, 0.0)


@dataclass
class GroupBatch:
    question: QuestionSpec
    rollouts: list[Rollout]
    rewards: core.GroupRewards
    advantages: np.ndarray


def score_group(
    question: QuestionSpec, rollouts: list[Rollout], reward_config: core.RewardConfig, std_normalize: bool
) -> GroupBatch:
    pairs = [(core.r_acc(r.trajectory.answer, question.gold_answer), r.search_count) for r in rollouts]
    rewards = core.group_rewards(pairs, reward_config)
    return GroupBatch(question, rollouts, rewards, compute_advantages(rewards.total, std_normalize))


class Adam:
    def __init__(self, shape: tuple[int, ...], lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Update for gradient ascent on ``grad``."""
        b1, b2 = self.betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _tokens(batch: Sequence[GroupBatch], policy: PolicyTable):
    states, actions, old_logps, advs = [], [], [], []
    for group in batch:
        for rollout, adv in zip(group.rollouts, group.advantages):
            for s, a, lp in zip(rollout.states, rollout.actions, rollout.logps):
                if policy.searches_of(s) >= policy.budget:
                    continue  # forced ANSWER carries no gradient
                states.append(s)
                actions.append(a)
                old_logps.append(lp)
                advs.append(adv)
    return np.array(states, dtype=int), np.array(actions, dtype=int), np.array(old_logps), np.array(advs)


def policy_gradient(
    policy: PolicyTable,
    batch: Sequence[GroupBatch],
    config: TrainConfig,
    init_policy: PolicyTable | None = None,
) -> tuple[np.ndarray, dict[str, float | None]]:
    """Gradient of the token-mean objective w.r.t. the flat logits."""
    flat = policy.flat()
    grad = np.zeros_like(flat)
    states, actions, old_logps, advs = _tokens(batch, policy)
    stats: dict[str, float | None] = {"entropy": 0.0, "kl": None, "surrogate": 0.0}
    if states.size == 0:
        return grad.reshape(policy.shape), stats
    probs = softmax_rows(flat)
    p = probs[states]
    logp = np.log(p[np.arange(states.size), actions])
    value, coeff = clipped_surrogate(np.exp(logp - old_logps), advs, config.clip_epsilon)
    onehot = np.zeros_like(p)
    onehot[np.arange(states.size), actions] = 1.0
    n_tok = states.size
    np.add.at(grad, states, coeff[:, None] * (onehot - p) / n_tok)

    with np.errstate(divide="ignore", invalid="ignore"):
        logp_all = np.where(p > 0, np.log(p), 0.0)
    h = -(p * logp_all).sum(axis=1)
    stats["entropy"] = float(h.mean())
    stats["surrogate"] = float(value.mean())
    if config.entropy_coeff > 0:
        dh = -p * (logp_all + h[:, None])
        np.add.at(grad, states, config.entropy_coeff * dh / n_tok)

    if config.beta_kl > 0:
        if init_policy is None:
            raise ValueError("beta_kl > 0 needs the initial policy")
        weights = np.bincount(states, minlength=policy.n_states).astype(float)
        weights /= weights.sum()
        kl = kl_rows(policy, init_policy)
        stats["kl"] = float((weights * kl).sum())
        q = softmax_rows(init_policy.flat())
        with np.errstate(divide="ignore"):
            dkl = probs * (np.log(probs) - np.log(q) - kl[:, None])
        grad -= config.beta_kl * weights[:, None] * dkl
    return grad.reshape(policy.shape), stats


@dataclass
class StepDiagnostics:
    mean_reward: float
    mean_tc: float
    accuracy: float
    entropy: float
    kl: float | None
    grad_norm: float
    help_rate: float


def batch_metrics(batch: Sequence[GroupBatch]) -> dict[str, float]:
    rewards = [x for g in batch for x in g.rewards.total]
    ms = [m for g in batch for m in g.rewards.m]
    acc = [a for g in batch for a in g.rewards.acc]
    n = len(rewards)
    return {
        "mean_reward": sum(rewards) / n,
        "mean_tc": sum(ms) / n,
        "accuracy": sum(acc) / n,
        "help_rate": sum(m > 0 for m in ms) / n,
    }


def policy_gradient_step(
    policy: PolicyTable,
    batch: Sequence[GroupBatch],
    config: TrainConfig,
    optimizer: Adam | None = None,
    init_policy: PolicyTable | None = None,
) -> tuple[PolicyTable, StepDiagnostics]:
    """One clipped, norm-limited ascent step; returns a new policy."""
    grad, stats = policy_gradient(policy, batch, config, init_policy)
    norm = float(np.sqrt((grad * grad).sum()))
    metrics = batch_metrics(batch)
    if not np.isfinite(norm):
        raise TrainingAborted(
            "non-finite policy gradient",
            {"grad": grad.tolist(), "logits": policy.logits.tolist(), **metrics, **stats},
        )
    if config.grad_clip_norm > 0 and norm > config.grad_clip_norm:
        grad = grad * (config.grad_clip_norm / norm)
    if optimizer is None:
        update = config.learning_rate * grad
    else:
        update = optimizer.step(grad)
    new = PolicyTable(policy.logits + update)
    diag = StepDiagnostics(
        mean_reward=metrics["mean_reward"],
        mean_tc=metrics["mean_tc"],
        accuracy=metrics["accuracy"],
        entropy=stats["entropy"],
        kl=stats["kl"],
        grad_norm=norm,
        help_rate=metrics["help_rate"],
    )
    return new, diag


def rollout_batch(
    policy: PolicyTable,
    world: WorldConfig,
    reward_config: core.RewardConfig,
    config: TrainConfig,
    step: int,
) -> list[GroupBatch]:
    qrng = stream(config.seed, "train-questions", step)
    batch = []
    for i in range(config.batch_questions):
        q = sample_question(world, qrng, f"train-{step:05d}-{i:03d}")
        rollouts = [
            sample_trajectory(policy, q, world, stream(config.seed, "rollout", step, i, g))
            for g in range(config.group_size)
        ]
        batch.append(score_group(q, rollouts, reward_config, config.std_normalize))
    return batch


@dataclass
class EvalPoint:
    step: int
    accuracy: float
    mean_tool_calls: float
    tool_productivity: float


@dataclass
class TrainResult:
    policy: PolicyTable
    final_policy: PolicyTable
    best_step: int
    log: list[dict[str, Any]] = field(default_factory=list)
    evals: list[EvalPoint] = field(default_factory=list)


def validation_set(world: WorldConfig, config: TrainConfig) -> list[QuestionSpec]:
    return question_set(world, config.val_questions, stream(config.seed, "val-questions"), prefix="val")


def train(
    world: WorldConfig,
    policy_init: PolicyTable,
    reward_config: core.RewardConfig,
    config: TrainConfig,
    checkpoint_sink: Callable[[int, PolicyTable, SearchModeReport], None] | None = None,
    log_sink: Callable[[dict[str, Any]], None] | None = None,
) -> TrainResult:
    """Run GRPO; the returned policy is the checkpoint with the best validation TP."""
    val = validation_set(world, config)
    policy = policy_init.copy()
    optimizer = Adam(policy.shape, config.learning_rate, config.adam_betas)
    init = policy_init.copy() if config.beta_kl > 0 else None

    def evaluate(step: int, pol: PolicyTable) -> float:
        report = eval_search_mode(pol, world, val, config.val_samples, seed=config.seed)
        point = EvalPoint(step, report.accuracy, report.mean_tool_calls, report.tool_productivity)
        result.evals.append(point)
        if checkpoint_sink is not None:
            checkpoint_sink(step, pol, report)
        return report.tool_productivity

    result = TrainResult(policy, policy, 0)
    best_tp = evaluate(0, policy)
    for step in range(1, config.steps + 1):
        batch = rollout_batch(policy, world, reward_config, config, step)
        policy, diag = policy_gradient_step(policy, batch, config, optimizer, init)
        record: dict[str, Any] = {"step": step, **asdict(diag)}
        if step % config.eval_every == 0 or step == config.steps:
            tp = evaluate(step, policy)
            record["val_tp"] = tp
            if tp > best_tp:
                best_tp, result.policy, result.best_step = tp, policy, step
        result.log.append(record)
        if log_sink is not None:
            log_sink(record)
        if step % 25 == 0:
            log.info("step %d reward %.3f tc %.2f help %.2f", step, diag.mean_reward, diag.mean_tc, diag.help_rate)
    result.final_policy = policy
    return result


def log_line(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True)
