"""Tagged trajectory text and the multi-turn search inference loop."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Iterable, Protocol, Sequence
from xml.sax.saxutils import escape, unescape

from .core import Step, StepType, Trajectory, TrajectoryError, validate_steps
from . import core

WARNING_TEXT = " SEARCH LIMIT REACHED "
WARNING_STRING = "<warning> SEARCH LIMIT REACHED </warning>"


@dataclass(frozen=True)
class TagGrammar:
    think: str = "think"
    search: str = "search"
    document: str = "document"
    warning: str = "warning"
    answer: str = "answer"

    def __post_init__(self):
        by_kind = {
            StepType.THINK: self.think,
            StepType.SEARCH: self.search,
            StepType.DOCUMENTS: self.document,
            StepType.WARNING: self.warning,
            StepType.ANSWER: self.answer,
        }
        if len(set(by_kind.values())) != len(by_kind):
            raise ValueError("tag names must be distinct")
        object.__setattr__(self, "_by_kind", by_kind)
        object.__setattr__(self, "_by_tag", {v: k for k, v in by_kind.items()})

    def tag_for(self, kind: StepType) -> str:
        return self._by_kind[kind]

    def kind_for(self, tag: str) -> StepType | None:
        return self._by_tag.get(tag)


SEARCH_GRAMMAR = TagGrammar()
# with an oracle helper, search requests become help requests
ORACLE_GRAMMAR = TagGrammar(search="help", document="helper_answer")


def grammar_for(oracle_mode: bool) -> TagGrammar:
    return ORACLE_GRAMMAR if oracle_mode else SEARCH_GRAMMAR


class ParseError(ValueError):
    """Malformed trajectory text; ``offset`` is a UTF-8 byte offset."""

    def __init__(self, message: str, text: str, pos: int):
        self.offset = len(text[:pos].encode("utf-8"))
        super().__init__(f"{message} at byte {self.offset}")


_TAG = re.compile(r"<(/?)([A-Za-z_][A-Za-z0-9_]*)>")


def _scan(text: str, grammar: TagGrammar) -> tuple[list[tuple[StepType, str, int]], bool]:
    """Split text into (kind, raw content, position) blocks.

    Returns the blocks and whether the text ended inside an unclosed tag.
    """
    blocks = []
    pos = 0
    while pos < len(text):
        m = _TAG.search(text, pos)
        if m is None:
            if text[pos:].strip():
                raise ParseError("text outside of tags", text, pos)
            break
        if text[pos:m.start()].strip():
            raise ParseError("text outside of tags", text, pos)
        closing, name = m.group(1), m.group(2)
        kind = grammar.kind_for(name)
        if kind is None:
            raise ParseError(f"unknown tag <{closing}{name}>", text, m.start())
        if closing:
            raise ParseError(f"unbalanced closing tag </{name}>", text, m.start())
        body_start = m.end()
        nxt = _TAG.search(text, body_start)
        if nxt is None:
            if "<" in text[body_start:]:
                raise ParseError("stray '<' in tag content", text, text.index("<", body_start))
            return blocks, True
        if nxt.group(1) != "/" or nxt.group(2) != name:
            raise ParseError(f"tag <{nxt.group(1)}{nxt.group(2)}> inside <{name}>", text, nxt.start())
        body = text[body_start:nxt.start()]
        if "<" in body:
            raise ParseError("stray '<' in tag content", text, body_start + body.index("<"))
        blocks.append((kind, unescape(body), m.start()))
        pos = nxt.end()
    return blocks, False


def parse_steps(text: str, grammar: TagGrammar = SEARCH_GRAMMAR) -> tuple[list[Step], bool]:
    """Parse text into steps; the flag is True when a trailing tag is unclosed."""
    blocks, dangling = _scan(text, grammar)
    steps: list[Step] = []
    for kind, content, pos in blocks:
        if kind is StepType.DOCUMENTS and steps and steps[-1].kind is StepType.DOCUMENTS:
            steps[-1] = core.documents(steps[-1].documents + (content,))
            continue
        if steps and steps[-1].kind is StepType.ANSWER:
            raise ParseError("step after the final answer", text, pos)
        if kind is StepType.DOCUMENTS:
            step = core.documents([content])
        else:
            step = Step(kind, content)
        try:
            validate_steps(steps + [step])
        except TrajectoryError as exc:
            raise ParseError(str(exc), text, pos) from None
        steps.append(step)
    return steps, dangling


def parse(text: str, grammar: TagGrammar = SEARCH_GRAMMAR, question_id: str = "") -> Trajectory:
    """Parse trajectory text.

    Text that stops inside an open tag, or never closes an answer tag, yields
    a truncated trajectory; the unfinished trailing step is dropped.
    """
    steps, _ = parse_steps(text, grammar)
    return Trajectory(question_id, steps)


def serialize(trajectory: Trajectory, grammar: TagGrammar = SEARCH_GRAMMAR) -> str:
    validate_steps(trajectory.steps)
    parts = []
    for step in trajectory.steps:
        tag = grammar.tag_for(step.kind)
        if step.kind is StepType.DOCUMENTS:
            parts.extend(f"<{tag}>{escape(d)}</{tag}>" for d in step.documents)
        else:
            parts.append(f"<{tag}>{escape(step.text)}</{tag}>")
    return "".join(parts)


class Generator(Protocol):
    def __call__(self, question: Any, trajectory: Trajectory, helper: "Helper") -> str:
        """Return the next action text, ending at the first closing search/answer tag."""


class Helper(Protocol):
    def __call__(self, query: str) -> Sequence[str]:
        """Serve one search (or help) request; must be safe for the caller's threading."""


@dataclass(frozen=True)
class InferenceConfig:
    budget: int = 5
    oracle_mode: bool = False
    top_k: int = 3

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError(f"search budget must be non-negative, got {self.budget}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be positive, got {self.top_k}")

    @property
    def max_actions(self) -> int:
        return self.budget + 2

    @property
    def grammar(self) -> TagGrammar:
        return grammar_for(self.oracle_mode)


def _parse_action(text: str, grammar: TagGrammar) -> list[Step] | None:
    """Steps of one generated action, or None when it is malformed."""
    try:
        steps, dangling = parse_steps(text, grammar)
    except ParseError:
        return None
    if dangling:
        return None
    if any(s.kind in (StepType.DOCUMENTS, StepType.WARNING) for s in steps):
        return None
    terminal = [i for i, s in enumerate(steps) if s.kind in (StepType.SEARCH, StepType.ANSWER)]
    if len(terminal) > 1 or (terminal and terminal[0] != len(steps) - 1):
        return None
    return steps


def run_inference(
    question: Any,
    generator: Generator,
    helper: Helper,
    config: InferenceConfig,
    question_id: str | None = None,
) -> Trajectory:
    """Drive ``generator`` through at most ``budget + 2`` actions.

    Searches issued after ``budget`` actions are answered with the limit
    warning instead of documents. A malformed action ends the trajectory
    unanswered, without any course-correction message.
    """
    if question_id is None:
        question_id = str(getattr(question, "question_id", question))
    trajectory = Trajectory(question_id)
    grammar = config.grammar
    actions = 0
    while actions < config.max_actions:
        text = generator(question, trajectory, helper)
        steps = _parse_action(text, grammar)
        if steps is None:
            break
        trajectory.steps.extend(steps)
        last = steps[-1].kind if steps else None
        if last is StepType.SEARCH:
            if actions < config.budget:
                docs = list(helper(steps[-1].text))[: config.top_k]
                trajectory.steps.append(core.documents(docs))
            else:
                trajectory.steps.append(core.warning(WARNING_TEXT))
        else:
            # answer or end of sequence
            break
        actions += 1
    return trajectory


def trajectory_record(
    trajectory: Trajectory, grammar: TagGrammar = SEARCH_GRAMMAR, **reward_fields: Any
) -> dict[str, Any]:
    record = {
        "question_id": trajectory.question_id,
        "text": serialize(trajectory, grammar),
        "truncated": trajectory.truncated,
        "search_count": trajectory.search_count,
    }
    record.update(reward_fields)
    return record


def write_jsonl(path, records: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def load_trajectories(path, grammar: TagGrammar = SEARCH_GRAMMAR) -> list[Trajectory]:
    return [parse(r["text"], grammar, r["question_id"]) for r in read_jsonl(path)]

