"""Command-line entry point: train, eval, gen-data, verify, plot, ablate."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VERSION = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, sets: list[str]) -> dict:
    """Apply ``key=value`` overrides; a leading section name (trainer.) is optional."""
    out = dict(raw)
    for item in sets or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.split(".")[-1]
        out[key] = _parse_value(value)
    return out


def _flatten_sections(raw: dict) -> dict:
    from .trainer import TrainerConfig
    import dataclasses

    names = {f.name for f in dataclasses.fields(TrainerConfig)}
    flat = {}
    for k, v in raw.items():
        if isinstance(v, dict) and k not in names:
            flat.update(v)
        else:
            flat[k] = v
    return flat


def load_config(path, sets=None, ablation=None):
    from .trainer import TrainerConfig

    if path is None:
        raw = {}
    else:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(p.read_text() or "{}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    raw = apply_overrides(_flatten_sections(raw), sets)
    if ablation:
        raw["ablation"] = ablation
    try:
        return TrainerConfig.from_dict(raw)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


# -- subcommands ------------------------------------------------------------------------------


def cmd_train(args):
    from .trainer import Trainer

    cfg = load_config(args.config, args.set, args.ablation)
    if args.resume:
        tr = Trainer.load(args.resume)
    else:
        tr = Trainer(cfg, args.seed)
    t0 = time.time()
    tr.train(args.out)
    summary = {m[3]: m[4] for m in tr.metrics if m[2] == "eval" and m[1] == tr.phases and "/" in m[3]
               and m[3].split("/")[0] in ("goal", "tracking", "reward")}
    print(f"trained {tr.env_steps} env steps in {time.time() - t0:.1f}s -> {args.out}")
    for k in sorted(summary):
        print(f"  {k}: {summary[k]:.4f}")
    return EXIT_OK


def load_tasks(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"task file not found: {path}")
    text = p.read_text().strip()
    if not text:
        return {}
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def cmd_eval(args):
    from .evaluation import evaluate_suite, write_metric_csv
    from .trainer import agent_from_checkpoint

    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    cfg, agent, world, reward_states = agent_from_checkpoint(args.checkpoint)
    tasks = load_tasks(args.tasks)
    th = {"beta": cfg.goal_beta, "sigma": cfg.goal_sigma, "xi": cfg.track_xi, "window": cfg.track_window}
    if reward_states is not None:
        rng = np.random.default_rng(args.seed)
        n = min(cfg.reward_samples, len(reward_states))
        reward_states = reward_states[rng.integers(len(reward_states), size=n)]
    rows = evaluate_suite(agent, world, tasks, args.episodes, args.seed, reward_states=reward_states,
                          reward_mode=cfg.reward_mode, thresholds=th)
    write_metric_csv(rows, args.out, cfg.config_hash())
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_gendata(args):
    from .envs import PointMassWorld, default_behaviors, generate_unlabeled_dataset

    if args.world != "pointmass":
        raise UsageError(f"unknown world {args.world!r}")
    if args.behaviors in (None, "default"):
        behaviors = default_behaviors()
    else:
        p = Path(args.behaviors)
        if not p.is_file():
            raise FileNotFoundError(f"behaviors file not found: {args.behaviors}")
        try:
            behaviors = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.behaviors}: invalid JSON ({exc})") from exc
    world = PointMassWorld(horizon=args.horizon)
    try:
        ds = generate_unlabeled_dataset(world, behaviors, args.episodes, np.random.default_rng(args.seed),
                                        with_actions=args.with_actions)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    ds.save_jsonl(args.out)
    print(f"wrote {len(ds)} episodes to {args.out}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suites

    names = ["grad", "tabular", "emd"] if args.suite == "all" else [args.suite]
    results = run_suites(names, inject_fault=args.inject_fault)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return EXIT_OK if all(ok for _, ok, _ in results) else 1


def cmd_plot(args):
    from .plotting import MetricsFormatError, plot_metrics

    if not Path(args.metrics).is_file():
        raise FileNotFoundError(f"metrics file not found: {args.metrics}")
    try:
        plot_metrics(args.metrics, args.out)
    except MetricsFormatError as exc:
        raise UsageError(str(exc)) from exc
    print(f"wrote {args.out}")
    return EXIT_OK


def run_ablation(cfg_raw: dict, variants, seeds, out_dir, log=print):
    """Train every (variant, seed); write summary.csv and ablation.svg. Returns the summary dict."""
    from .plotting import plot_ablation
    from .trainer import TrainerConfig, Trainer

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary: dict[str, dict[str, list[float]]] = {}
    rows = []
    for variant in variants:
        for seed in seeds:
            cfg = TrainerConfig.from_dict({**cfg_raw, "ablation": variant})
            t0 = time.time()
            tr = Trainer(cfg, seed)
            tr.train(out_dir / f"{variant}_seed{seed}")
            final = {m[3]: m[4] for m in tr.metrics if m[2] == "eval" and m[1] == tr.phases}
            for metric in ("goal/success", "goal/proximity", "tracking/success", "tracking/emd", "reward/return"):
                if metric in final:
                    summary.setdefault(variant, {}).setdefault(metric, []).append(final[metric])
                    rows.append((variant, seed, metric, final[metric], cfg.config_hash()))
            log(f"{variant} seed {seed}: goal {final.get('goal/success', float('nan')):.3f} "
                f"tracking {final.get('tracking/success', float('nan')):.3f} ({time.time() - t0:.0f}s)")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("variant", "seed", "metric", "value", "config_hash"))
        for r in rows:
            w.writerow([r[0], r[1], r[2], repr(float(r[3])), r[4]])
    plot_ablation(summary, out_dir / "ablation.svg")
    return summary


def cmd_ablate(args):
    cfg = load_config(args.config, args.set)
    raw = cfg.to_dict()
    summary = run_ablation(raw, args.variants, list(range(args.seeds)), args.out)
    for v, metrics in summary.items():
        means = ", ".join(f"{m} {np.mean(vals):.3f}" for m, vals in sorted(metrics.items()))
        print(f"{v}: {means}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="fbcpr", description="Forward-backward representations with "
                                 "conditional policy regularization on a point-mass world.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--ablation", choices=["fbcpr", "fb_online", "fb_mpr", "no_fz", "bc"])
    p.add_argument("--resume", metavar="CHECKPOINT")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-data", help="generate a scripted unlabeled dataset")
    p.add_argument("--world", default="pointmass")
    p.add_argument("--behaviors", default="default", help="JSON list of behavior specs, or 'default'")
    p.add_argument("--episodes", type=int, default=4, help="episodes per behavior")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--with-actions", action="store_true", help="store action labels (bc ablation)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gendata)

    p = sub.add_parser("verify", help="run the gradient, tabular and EMD self-checks")
    p.add_argument("--suite", choices=["grad", "tabular", "emd", "all"], default="all")
    p.add_argument("--inject-fault", action="store_true", help="corrupt analytic gradients (negative control)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="render a metrics CSV as SVG")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("ablate", help="train several variants over seeds and compare")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--variants", nargs="+", default=["fbcpr", "fb_online", "fb_mpr", "no_fz"])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None):
    from .checkpoint import CheckpointVersionError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
