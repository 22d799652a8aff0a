"""Command-line entry point: gen-data, train, eval, ablate, embed-text."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from promptdiff.envdata import default_benchmark, generate_dataset, read_dataset, read_task_list, write_dataset
from promptdiff.errors import PromptDiffError
from promptdiff.evaluation import VARIANTS, ablation_matrix, evaluate_seeds, format_table, write_report
from promptdiff.prompts import parse_text_prompt, serialize_text_prompt
from promptdiff.trainer import TrainerConfig, build_state, checkpoint, restore, train

log = logging.getLogger("promptdiff")


def _tasks(path):
    if path is None:
        return default_benchmark()
    return read_task_list(path)


def _config(args) -> TrainerConfig:
    cfg = TrainerConfig.load(args.config) if args.config else TrainerConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "ablation", None) is not None:
        overrides["ablation"] = args.ablation
    return dataclasses.replace(cfg, **overrides).validate()


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}") from exc


def cmd_gen_data(args) -> int:
    seen, unseen = _tasks(args.tasks)
    specs = seen + unseen if args.include_unseen else seen
    datasets = generate_dataset(specs, args.episodes, args.noise, args.seed)
    paths = write_dataset(datasets, args.out)
    print(f"wrote {len(paths)} task files ({sum(len(d) for d in datasets)} transitions) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    datasets = read_dataset(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics = out.with_name(out.name + ".metrics.jsonl")
    if args.resume:
        state = restore(out, expected=cfg)
        remaining = max(cfg.epochs - state.epoch, 0)
    else:
        state = build_state(cfg)
        metrics.unlink(missing_ok=True)
        remaining = cfg.epochs
    every = max(args.checkpoint_every, 1)
    while remaining > 0:
        n = min(every, remaining)
        train(state, datasets, n, metrics_path=metrics)
        checkpoint(state, out)
        remaining -= n
    checkpoint(state, out)
    print(f"trained {state.epoch} epochs; checkpoint {out}; metrics {metrics}")
    return 0


def cmd_eval(args) -> int:
    state = restore(args.checkpoint)
    seen, unseen = _tasks(args.tasks)
    seeds = args.seeds if args.seeds is not None else [args.seed if args.seed is not None else 0]
    report = evaluate_seeds(state, seen + unseen, args.episodes, seeds, [t.task_id for t in unseen])
    print(format_table(report))
    for split in ("seen", "unseen"):
        if any(r.split == split for r in report.results):
            print(f"mean {split} success: {report.mean_success(split):.3f}")
    if args.out:
        write_report(report, args.out)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    datasets = read_dataset(args.data)
    seen, unseen = _tasks(args.tasks)
    variants = tuple(args.variants.split(",")) if args.variants else VARIANTS
    table = ablation_matrix(cfg, datasets, seen + unseen, args.seeds or [0, 1, 2], args.episodes,
                            variants, [t.task_id for t in unseen])
    print(table.format())
    for v in variants:
        print(f"{v:<10} seen {table.mean_success(v, 'seen'):.3f}", end="")
        print(f"  unseen {table.mean_success(v, 'unseen'):.3f}" if unseen else "")
    if args.out:
        table.write(args.out)
    return 0


def cmd_embed_text(args) -> int:
    text = Path(args.prompt).read_text(encoding="utf-8")
    prompt = parse_text_prompt(text)
    state = restore(args.checkpoint) if args.checkpoint else build_state(_config(args))
    raw = state.text_encoder.encode(serialize_text_prompt(prompt))
    z = state.text_head.forward(raw[None], cache=False)[0]
    print(" ".join(format(float(v), ".17g") for v in z))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="promptdiff", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    g = sub.add_parser("gen-data", help="generate offline datasets from a task list")
    g.add_argument("--tasks", help="task list JSON (default: built-in benchmark)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--episodes", type=int, default=30, help="episodes per task")
    g.add_argument("--noise", type=float, default=0.2, help="behavior-policy noise scale")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--include-unseen", action="store_true", help="also write held-out tasks")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a config and a dataset directory")
    t.add_argument("--config", help="JSON config file (default: built-in defaults)")
    t.add_argument("--data", required=True, help="dataset directory or file")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", choices=VARIANTS)
    t.add_argument("--checkpoint-every", type=int, default=10, help="epochs between checkpoints")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint at --out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on seen and unseen tasks")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--tasks", help="task list JSON (default: built-in benchmark)")
    e.add_argument("--episodes", type=int, default=200)
    e.add_argument("--seed", type=int)
    e.add_argument("--seeds", type=_seeds, help="comma-separated evaluation seeds")
    e.add_argument("--out", help="report file (one JSON record per task)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate the ablation variants")
    a.add_argument("--config")
    a.add_argument("--data", required=True)
    a.add_argument("--tasks")
    a.add_argument("--episodes", type=int, default=200)
    a.add_argument("--seeds", type=_seeds, help="comma-separated seeds (default 0,1,2)")
    a.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANTS)}")
    a.add_argument("--out", help="table file (one JSON record per variant and task)")
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("embed-text", help="print the text embedding of a prompt file")
    x.add_argument("prompt", help="file holding a serialized text prompt")
    x.add_argument("--checkpoint", help="use the trained projection head from this checkpoint")
    x.add_argument("--config", help="config for a freshly initialized head")
    x.set_defaults(func=cmd_embed_text)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("promptdiff: error: a command is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PromptDiffError, OSError, ValueError) as exc:
        print(f"promptdiff: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
