"""Experiment configs and the canned experiments behind ``helpseek reproduce``."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema

from . import core, evaluation, grpo, warmstart
from .policy import PolicyTable
from .seeding import config_hash, stream
from .world import PRESETS, WorldConfig, load_preset, load_world, question_set

ENV_SEED = "HELPSEEK_SEED"
ENV_OUT = "HELPSEEK_OUT"
COLLAPSE_THRESHOLD = 0.95


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    num_questions: int = 2048
    samples_per_q: int = 4
    profile_samples: int = 10


_INT = {"type": "integer", "minimum": 0}
_NUM = {"type": "number", "minimum": 0}
_TRAIN_SCHEMA = {
    **{k: _INT for k in ("group_size", "batch_questions", "steps", "eval_every", "val_questions", "val_samples")},
    **{k: _NUM for k in ("learning_rate", "clip_epsilon", "entropy_coeff", "beta_kl", "grad_clip_norm")},
    "std_normalize": {"type": "boolean"},
    "adam_betas": {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                   "minItems": 2, "maxItems": 2},
}
_WS_KEYS = [f.name for f in fields(warmstart.WarmStartConfig) if f.name != "seed"]

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"type": "string", "minLength": 1},
        "variant": {"enum": [v.value for v in core.Variant]},
        "lambda_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "c": {"type": "integer", "minimum": 1},
        "warm_start": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string", "minLength": 1},
        "warmstart": {"type": "object", "additionalProperties": False,
                      "properties": {k: {"type": "integer", "minimum": 0} for k in _WS_KEYS}},
        "train": {"type": "object", "additionalProperties": False,
                  "properties": _TRAIN_SCHEMA},
        "eval": {"type": "object", "additionalProperties": False,
                 "properties": {f.name: {"type": "integer", "minimum": 1} for f in fields(EvalConfig)}},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "default"
    variant: str = core.Variant.OTC_STRICT.value
    lambda_decay: float = 0.8
    c: int | None = None
    warm_start: bool = True
    seed: int = 0
    out_dir: str = "runs/default"
    warmstart: warmstart.WarmStartConfig = field(default_factory=warmstart.WarmStartConfig)
    train: grpo.TrainConfig = field(default_factory=grpo.TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        # the experiment seed drives every sub-config
        object.__setattr__(self, "warmstart", replace(self.warmstart, seed=self.seed))
        object.__setattr__(self, "train", replace(self.train, seed=self.seed))

    def world(self) -> WorldConfig:
        if self.preset in PRESETS:
            return load_preset(self.preset)
        path = Path(self.preset)
        if not path.is_file():
            raise ConfigError(f"preset {self.preset!r} is neither a built-in ({', '.join(PRESETS)}) nor a file")
        try:
            return load_world(path)
        except (OSError, ValueError, TypeError, KeyError) as e:
            raise ConfigError(f"cannot load world from {path}: {e}") from e

    def reward(self, world: WorldConfig) -> core.RewardConfig:
        if self.c is not None and self.c != world.budget:
            raise ConfigError(f"reward c={self.c} must equal the world search budget L={world.budget}")
        return core.RewardConfig(core.Variant(self.variant), self.lambda_decay, world.budget)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["train"]["adam_betas"] = list(self.train.adam_betas)
        return d

    def hash(self) -> str:
        """Content hash; the output directory does not change results, so it is left out."""
        d = self.to_dict()
        d.pop("out_dir")
        return config_hash(d)


def parse_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    try:
        jsonschema.validate(dict(raw), CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(map(str, e.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}") from e
    d = dict(raw)
    try:
        ws = warmstart.WarmStartConfig(**d.pop("warmstart", {}))
        train = grpo.TrainConfig(**d.pop("train", {}))
        ev = EvalConfig(**d.pop("eval", {}))
        return ExperimentConfig(warmstart=ws, train=train, eval=ev, **d)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> ExperimentConfig:
    """Config file, then environment (seed and out_dir only), then explicit overrides."""
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    environ = os.environ if environ is None else environ
    if environ.get(ENV_SEED):
        try:
            raw["seed"] = int(environ[ENV_SEED])
        except ValueError as e:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {environ[ENV_SEED]!r}") from e
    if environ.get(ENV_OUT):
        raw["out_dir"] = environ[ENV_OUT]
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return parse_config(raw)


def initial_policy(world: WorldConfig, cfg: ExperimentConfig) -> tuple[PolicyTable, list[dict[str, Any]]]:
    """Cloned warm-start policy (with its corpus), or uniform logits when warm-start is off."""
    if not cfg.warm_start:
        return PolicyTable.uniform(world), []
    rows = warmstart.generate_corpus(world, cfg.warmstart)
    return warmstart.behavior_clone(rows, world), rows


def eval_questions(world: WorldConfig, cfg: ExperimentConfig):
    return question_set(world, cfg.eval.num_questions, stream(cfg.seed, "eval-questions"), prefix="test")


def abstention_report(policy: PolicyTable, world: WorldConfig, cfg: ExperimentConfig) -> evaluation.AbstentionReport:
    questions = eval_questions(world, cfg)
    profile = evaluation.answerability_profile(
        world, questions, cfg.eval.profile_samples, stream(cfg.seed, "answerability")
    )
    return evaluation.eval_abstention_mode(policy, world, questions, profile, cfg.eval.samples_per_q, cfg.seed)


def search_report(policy: PolicyTable, world: WorldConfig, cfg: ExperimentConfig) -> evaluation.SearchModeReport:
    return evaluation.eval_search_mode(policy, world, eval_questions(world, cfg), cfg.eval.samples_per_q, cfg.seed)


def is_collapsed(report: evaluation.SearchModeReport, threshold: float = COLLAPSE_THRESHOLD) -> bool:
    """One search-count bucket holds (almost) all of the mass."""
    return max(report.bucket_fraction.values()) >= threshold


def first_step_reaching(log: Sequence[dict[str, Any]], key: str, threshold: float) -> int | None:
    for rec in log:
        if rec[key] >= threshold:
            return rec["step"]
    return None


@dataclass
class RunSummary:
    label: str
    preset: str
    variant: str
    warm_start: bool
    seed: int
    best_step: int
    val: evaluation.SearchModeReport
    collapsed: bool
    help_curve: list[float]
    abstention: evaluation.AbstentionReport | None = None

    def row(self) -> dict[str, Any]:
        a = self.abstention
        return {
            "run": self.label,
            "preset": self.preset,
            "variant": self.variant,
            "warm_start": self.warm_start,
            "seed": self.seed,
            "best_step": self.best_step,
            "acc": self.val.accuracy,
            "tc": self.val.mean_tool_calls,
            "tp": self.val.tool_productivity,
            "tc0": self.val.bucket_fraction["0"],
            "tc1": self.val.bucket_fraction["1"],
            "tc2+": self.val.bucket_fraction["2+"],
            "collapsed": self.collapsed,
            "abs0": a.abs0_pct if a else None,
            "abs1": a.abs1_pct if a else None,
            "delta": a.delta if a else None,
        }


def run(cfg: ExperimentConfig, label: str | None = None, with_abstention: bool = False) -> tuple[RunSummary, grpo.TrainResult]:
    """Warm-start (optionally), train, and evaluate the final policy on the validation set."""
    world = cfg.world()
    init, _ = initial_policy(world, cfg)
    result = grpo.train(world, init, cfg.reward(world), cfg.train)
    val = evaluation.eval_search_mode(
        result.final_policy, world, grpo.validation_set(world, cfg.train), cfg.eval.samples_per_q, cfg.seed
    )
    summary = RunSummary(
        label=label or f"{world.name}-{cfg.variant}-{'ws' if cfg.warm_start else 'nows'}-s{cfg.seed}",
        preset=world.name,
        variant=cfg.variant,
        warm_start=cfg.warm_start,
        seed=cfg.seed,
        best_step=result.best_step,
        val=val,
        collapsed=is_collapsed(val),
        help_curve=[rec["help_rate"] for rec in result.log],
        abstention=abstention_report(result.policy, world, cfg) if with_abstention else None,
    )
    return summary, result


# ---- canned experiments -------------------------------------------------

def selective(seed: int = 0) -> dict[str, Any]:
    """Default world, warm-start, OTC-Strict: does search track parametric knowledge?"""
    cfg = ExperimentConfig(preset="default", seed=seed)
    summary, result = run(cfg, with_abstention=True)
    world = cfg.world()
    report = search_report(result.policy, world, cfg)
    first_search = {world.types[t].name: v["first_search_rate"] for t, v in report.per_type.items()}
    return {"runs": [summary], "first_search_rate": first_search, "search": report}


def oracle_collapse(seeds: Sequence[int] = (0, 1, 2), steps: int = 50) -> dict[str, Any]:
    runs, reached = [], {}
    for variant in core.Variant:
        for seed in seeds:
            cfg = ExperimentConfig(
                preset="oracle", variant=variant.value, seed=seed,
                warmstart=warmstart.WarmStartConfig(l_max=1), train=grpo.TrainConfig(steps=steps),
            )
            summary, result = run(cfg)
            runs.append(summary)
            reached[summary.label] = first_step_reaching(result.log, "help_rate", COLLAPSE_THRESHOLD)
    return {"runs": runs, "step_reaching_095": reached}


def warmstart_ablation(seeds: Sequence[int] = (0, 1, 2), preset: str = "twohop") -> dict[str, Any]:
    runs = []
    for warm in (False, True):
        for seed in seeds:
            cfg = ExperimentConfig(preset=preset, warm_start=warm, seed=seed)
            runs.append(run(cfg)[0])
    return {"runs": runs}


def severity_sweep(seeds: Sequence[int] = (0,), preset: str = "default") -> dict[str, Any]:
    runs = []
    for variant in core.Variant:
        for seed in seeds:
            cfg = ExperimentConfig(preset=preset, variant=variant.value, seed=seed)
            runs.append(run(cfg, with_abstention=True)[0])
    return {"runs": runs}


EXPERIMENTS = {
    "selective": selective,
    "oracle-collapse": oracle_collapse,
    "warmstart-ablation": warmstart_ablation,
    "severity-sweep": severity_sweep,
}


def table_csv(runs: Sequence[RunSummary]) -> str:
    rows = [r.row() for r in runs]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return buf.getvalue()


def table_markdown(runs: Sequence[RunSummary]) -> str:
    cols = ["run", "acc", "tc", "tp", "tc0", "tc1", "tc2+", "collapsed", "abs0", "abs1", "delta"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in runs:
        row = r.row()
        cells = []
        for c in cols:
            v = row[c]
            if isinstance(v, float):
                v = f"{100 * v:.2f}" if c in ("acc", "tp", "tc0", "tc1", "tc2+") else f"{v:.2f}"
            cells.append("-" if v is None else str(v))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def help_curve_csv(runs: Sequence[RunSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["run", "step", "help_rate"])
    for r in runs:
        for step, h in enumerate(r.help_curve, start=1):
            writer.writerow([r.label, step, repr(h)])
    return buf.getvalue()
