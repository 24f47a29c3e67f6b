"""Command-line runner: ``helpseek {warmstart,train,eval,reproduce}``.

Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any

from . import experiments, grpo, warmstart
from .experiments import ConfigError, ExperimentConfig
from .policy import PolicyTable, load_checkpoint, save_checkpoint
from .seeding import canonical_json

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("helpseek")


def _stamp(cfg: ExperimentConfig, world_hash: str, **extra: Any) -> dict[str, Any]:
    return {"config_hash": cfg.hash(), "seed": cfg.seed, "world_hash": world_hash, **extra}


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _csv_with_stamp(stamp: dict[str, Any], body: str) -> str:
    return f"# config_hash={stamp['config_hash']} seed={stamp['seed']}\n{body}"


def _load_checked(path: Path, world_hash: str) -> tuple[PolicyTable, dict[str, Any]]:
    if not path.is_file():
        raise ConfigError(f"checkpoint {path} not found; run `helpseek warmstart` first or pass --checkpoint")
    policy, meta = load_checkpoint(path)
    if meta.get("world_hash") != world_hash:
        raise ConfigError(
            f"world hash mismatch: checkpoint {path} was built for {meta.get('world_hash')}, "
            f"config world is {world_hash}"
        )
    return policy, meta


def cmd_warmstart(cfg: ExperimentConfig) -> int:
    world = cfg.world()
    out = Path(cfg.out_dir)
    stamp = _stamp(cfg, world.hash())
    policy, rows = experiments.initial_policy(world, cfg)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.warm_start:
        with open(out / "corpus.jsonl", "w", encoding="utf-8") as f:
            for row in rows:
                f.write(canonical_json({**row, "config_hash": stamp["config_hash"], "seed": cfg.seed}) + "\n")
        hist = warmstart.l_histogram(rows, cfg.warmstart.l_max)
        print(f"corpus: {len(rows)} rows, accuracy {sum(r['correct'] for r in rows) / len(rows):.3f}")
        print("l-distribution: " + "  ".join(f"l={i}: {h:.3f}" for i, h in enumerate(hist)))
    else:
        print("warm-start disabled: writing uniform logits")
    save_checkpoint(out / "init_checkpoint.json", policy, {**stamp, "kind": "init", "warm_start": cfg.warm_start})
    print(f"wrote {out / 'init_checkpoint.json'}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, checkpoint: str | None) -> int:
    world = cfg.world()
    reward = cfg.reward(world)
    out = Path(cfg.out_dir)
    stamp = _stamp(cfg, world.hash())
    init, init_meta = _load_checked(Path(checkpoint) if checkpoint else out / "init_checkpoint.json", stamp["world_hash"])
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    init_hash = init_meta.get("config_hash")

    def sink(step: int, policy: PolicyTable, report) -> None:
        meta = {**stamp, "kind": "eval", "step": step, "val_tp": report.tool_productivity, "init_hash": init_hash}
        save_checkpoint(ckpt_dir / f"step_{step:05d}.json", policy, meta)

    with open(out / "train_log.jsonl", "w", encoding="utf-8") as logf:
        logf.write(canonical_json({"header": True, **stamp, "config": cfg.to_dict() | {"out_dir": None}}) + "\n")

        def log_sink(record: dict[str, Any]) -> None:
            logf.write(grpo.log_line(record) + "\n")
            logf.flush()

        try:
            result = grpo.train(world, init, reward, cfg.train, checkpoint_sink=sink, log_sink=log_sink)
        except grpo.TrainingAborted as e:
            _write_json(out / "failure_manifest.json", {**stamp, "status": "aborted", "error": str(e), "dump": e.dump})
            log.error("training aborted: %s (see %s)", e, out / "failure_manifest.json")
            return EXIT_RUNTIME

    save_checkpoint(ckpt_dir / "final.json", result.final_policy, {**stamp, "kind": "final", "step": cfg.train.steps})
    best_tp = max(p.tool_productivity for p in result.evals if p.step == result.best_step)
    save_checkpoint(ckpt_dir / "best.json", result.policy, {**stamp, "kind": "best", "step": result.best_step, "val_tp": best_tp})
    _write_json(out / "manifest.json", {
        **stamp,
        "status": "ok",
        "best_step": result.best_step,
        "best_checkpoint": f"checkpoints/step_{result.best_step:05d}.json",
        "best_val_tp": best_tp,
        "final_step": cfg.train.steps,
        "evals": [asdict(p) for p in result.evals],
    })
    print(f"trained {cfg.train.steps} steps; best validation TP {best_tp:.4f} at step {result.best_step}")
    return EXIT_OK


def _summary_table(rows: list[tuple[str, Any]]) -> str:
    width = max(len(k) for k, _ in rows)
    lines = []
    for k, v in rows:
        if isinstance(v, float):
            v = f"{v:.4f}"
        lines.append(f"{k:<{width}}  {'n/a' if v is None else v}")
    return "\n".join(lines)


def cmd_eval(cfg: ExperimentConfig, checkpoint: str | None, mode: str) -> int:
    world = cfg.world()
    out = Path(cfg.out_dir)
    path = Path(checkpoint) if checkpoint else out / "checkpoints" / "best.json"
    policy, _ = _load_checked(path, world.hash())
    stamp = _stamp(cfg, world.hash(), mode=mode, checkpoint_sha256=hashlib.sha256(path.read_bytes()).hexdigest()[:16])
    if mode == "search":
        report = experiments.search_report(policy, world, cfg)
        _write_json(out / "eval_search.json", {**stamp, "report": report.to_dict()})
        _write_text(out / "eval_search_buckets.csv", _csv_with_stamp(stamp, report.bucket_csv()))
        rows = [("accuracy", report.accuracy), ("tool calls", report.mean_tool_calls),
                ("tool productivity", report.tool_productivity)]
        rows += [(f"TC={b} fraction", f) for b, f in report.bucket_fraction.items()]
        for t, v in report.per_type.items():
            rows.append((f"{world.types[t].name} first-search", v["first_search_rate"]))
    else:
        report = experiments.abstention_report(policy, world, cfg)
        _write_json(out / "eval_abstain.json", {**stamp, "report": report.to_dict()})
        rows = [("accuracy", report.overall_accuracy), ("precision", report.precision),
                ("abstain rate", report.abstain_rate), ("%Abs(0)", report.abs0_pct),
                ("%Abs(1)", report.abs1_pct), ("Delta", report.delta)]
    print(_summary_table(rows))
    return EXIT_OK


def cmd_reproduce(name: str, cfg: ExperimentConfig) -> int:
    fn = experiments.EXPERIMENTS[name]
    seed = cfg.seed
    if name in ("oracle-collapse", "warmstart-ablation"):
        result = fn(seeds=(seed, seed + 1, seed + 2))
    elif name == "severity-sweep":
        result = fn(seeds=(seed,))
    else:
        result = fn(seed=seed)
    runs = result["runs"]
    out = Path(cfg.out_dir) / "reproduce" / name
    stamp = {"experiment": name, "seed": seed, "config_hash": cfg.hash()}
    summary = {**stamp, "runs": [r.row() for r in runs]}
    for key in ("first_search_rate", "step_reaching_095"):
        if key in result:
            summary[key] = result[key]
    _write_json(out / "summary.json", summary)
    _write_text(out / "table.csv", _csv_with_stamp(stamp, experiments.table_csv(runs)))
    _write_text(out / "table.md", experiments.table_markdown(runs))
    _write_text(out / "help_rate.csv", _csv_with_stamp(stamp, experiments.help_curve_csv(runs)))
    print(experiments.table_markdown(runs), end="")
    for key in ("first_search_rate", "step_reaching_095"):
        if key in result:
            print(f"{key}: {json.dumps(result[key], sort_keys=True)}")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="helpseek", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="overrides config and $HELPSEEK_SEED")
        p.add_argument("--out", help="output directory; overrides config and $HELPSEEK_OUT")
        p.add_argument("--preset", help="built-in world preset name or world JSON path")

    common(sub.add_parser("warmstart", help="build the warm-start corpus and initial checkpoint"))
    p = sub.add_parser("train", help="GRPO training from an initial checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="initial checkpoint (default: OUT/init_checkpoint.json)")
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint to evaluate (default: OUT/checkpoints/best.json)")
    p.add_argument("--mode", choices=["search", "abstain"], default="search")
    p = sub.add_parser("reproduce", help="run a canned experiment")
    common(p)
    p.add_argument("name", choices=sorted(experiments.EXPERIMENTS))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = experiments.load_config(args.config, {"seed": args.seed, "out_dir": args.out, "preset": args.preset})
        if args.command == "warmstart":
            return cmd_warmstart(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.mode)
        return cmd_reproduce(args.name, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, OSError, ValueError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
