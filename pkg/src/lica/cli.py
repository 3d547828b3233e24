"""``lica`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import PRESET_DIR, TrainConfig, parse_overrides, preset
from .evaluate import evaluate, load_policy
from .plotting import Series, line_plot
from .stats import aggregate, read_metrics
from .studies import max_workers, summarize, traffic_junction_study

log = logging.getLogger("lica")

MANIFEST_VERSION = 1


class CliError(Exception):
    pass


# --- helpers ------------------------------------------------------------------------

def source_hash() -> str:
    """Digest of the package sources and bundled presets."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.suffix in (".py", ".toml"):
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()[:16]


def _load_config(args) -> TrainConfig:
    overrides = parse_overrides(args.override or [])
    if args.config and args.preset:
        raise CliError("give --config or --preset, not both")
    if args.config:
        cfg = TrainConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise CliError("a config is required: --config PATH or --preset NAME "
                       f"(presets: {', '.join(sorted(p.stem for p in PRESET_DIR.glob('*.toml')))})")
    return cfg.replace(**overrides) if overrides else cfg


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CliError(f"output directory {out} is not empty (use --force to overwrite)")
        for child in out.iterdir():
            if child.is_dir() and (child.name.startswith("seed_") or child.name == "plots"):
                shutil.rmtree(child)
    out.mkdir(parents=True, exist_ok=True)


def _manifest(cfg: TrainConfig, seeds: list[int]) -> dict:
    base = cfg.replace(seed=seeds[0])
    return {
        "version": MANIFEST_VERSION,
        "config": {s: {k: v for k, v in sec.items() if k not in ("seed", "workers")}
                   for s, sec in base.to_sections().items()},
        "config_hash": base.digest(),
        "seeds": seeds,
        "source_hash": source_hash(),
        "layout": {f"seed_{s}": {"metrics": f"seed_{s}/metrics.jsonl", "timing": f"seed_{s}/timing.jsonl",
                                 "checkpoints": f"seed_{s}/ckpt_*.json"} for s in seeds},
    }


def _config_from_manifest(path: str | Path) -> tuple[TrainConfig, list[int]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MANIFEST_VERSION:
        raise CliError(f"unsupported manifest version {doc.get('version')!r}")
    flat = {k: v for sec in doc["config"].values() for k, v in sec.items()}
    cfg = TrainConfig.from_dict({**flat, "seed": doc["seeds"][0]})
    if doc.get("source_hash") != source_hash():
        log.warning("manifest was written by different package sources; results may differ")
    return cfg, list(doc["seeds"])


def _train_one(args) -> str:
    cfg, seed, out = args
    from .training import train_loop
    train_loop(cfg.replace(seed=seed), Path(out) / f"seed_{seed}")
    return out


def _run_seeds(cfg: TrainConfig, seeds: list[int], out: Path, processes: int) -> None:
    jobs = [(cfg, s, str(out)) for s in seeds]
    if processes > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(min(processes, len(seeds))) as pool:
            list(pool.map(_train_one, jobs))
    else:
        for job in jobs:
            _train_one(job)


def _run_groups(dirs: list[str]) -> list[tuple[str, list[list[dict]]]]:
    groups = []
    for d in dirs:
        path = Path(d)
        files = sorted(path.glob("seed_*/metrics.jsonl")) or ([path / "metrics.jsonl"] if (path / "metrics.jsonl").exists() else [])
        if not files:
            raise CliError(f"no metrics.jsonl found under {path}")
        groups.append((path.name or str(path), [read_metrics(f) for f in files]))
    return groups


def _plot_metric(groups, metric: str, title: str = "") -> str:
    series = []
    for label, runs in groups:
        agg = [r for r in aggregate(runs, keys=(metric,)) if metric in r]
        if not agg:
            continue
        x = np.array([r["step"] for r in agg], dtype=float)
        med = np.array([r[metric]["median"] for r in agg])
        if len(runs) > 1:
            lo = np.array([r[metric]["q1"] for r in agg])
            hi = np.array([r[metric]["q3"] for r in agg])
            series.append(Series(f"{label} (n={len(runs)})", x, med, lo, hi))
        else:
            series.append(Series(label, x, med))
    if not series:
        raise CliError(f"metric {metric!r} has no values in the given runs")
    return line_plot(series, title or metric, "update step", metric)


# --- commands -------------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.manifest:
        cfg, seeds = _config_from_manifest(args.manifest)
        if args.override:
            raise CliError("--override cannot be combined with --manifest")
    else:
        cfg = _load_config(args)
        seeds = [args.seed if args.seed is not None else cfg.seed]
    if args.workers:
        cfg = cfg.replace(workers=args.workers)
    out = Path(args.out)
    _prepare_out(out, args.force)
    manifest = _manifest(cfg, seeds)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _run_seeds(cfg, seeds, out, 1)
    for s in seeds:
        last = read_metrics(out / f"seed_{s}" / "metrics.jsonl")[-1]
        print(json.dumps({"seed": s, **last}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    if args.seeds < 1:
        raise CliError("--seeds must be >= 1")
    cfg = _load_config(args)
    if args.workers:
        cfg = cfg.replace(workers=args.workers)
    seeds = [args.seed_base + i for i in range(args.seeds)]
    out = Path(args.out)
    _prepare_out(out, args.force)
    (out / "manifest.json").write_text(json.dumps(_manifest(cfg, seeds), indent=2, sort_keys=True) + "\n")
    _run_seeds(cfg, seeds, out, args.processes or max_workers())
    runs = [read_metrics(out / f"seed_{s}" / "metrics.jsonl") for s in seeds]
    agg = aggregate(runs)
    with open(out / "aggregate.jsonl", "w") as fh:
        for rec in agg:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out / "plots").mkdir(exist_ok=True)
    (out / "plots" / "mean_reward.svg").write_text(_plot_metric([(out.name, runs)], "mean_reward"))
    final = agg[-1]
    print(json.dumps({"step": final["step"], "seeds": len(seeds),
                      "mean_reward": final.get("mean_reward")}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise CliError(f"--episodes must be >= 1, got {args.episodes}")
    policy, cfg = load_policy(args.checkpoint)
    res = evaluate(policy, cfg, args.episodes, greedy=args.greedy, seed=args.seed)
    print(json.dumps(res, sort_keys=True))
    return 0


def cmd_plot(args) -> int:
    svg = _plot_metric(_run_groups(args.runs), args.metric, args.title)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(svg)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import NETWORKS, OPS, TOLERANCE, run_suite
    names = args.only or None
    if names:
        unknown = sorted(set(names) - set(OPS) - set(NETWORKS))
        if unknown:
            raise CliError(f"unknown check(s) {unknown}; choose from {', '.join(list(OPS) + list(NETWORKS))}")
    results = run_suite(args.instances, args.seed, names)
    failed = 0
    for name, err in results.items():
        ok = err < TOLERANCE
        failed += not ok
        print(f"{name:22s} {err:.3e}  {'ok' if ok else 'FAIL'}")
    print(f"{len(results) - failed}/{len(results)} checks below {TOLERANCE:g} over {args.instances} instances each")
    return 1 if failed else 0


def cmd_trafficjunction(args) -> int:
    if args.inits < 1:
        raise CliError(f"--inits must be >= 1, got {args.inits}")
    if args.steps < 1:
        raise CliError(f"--steps must be >= 1, got {args.steps}")
    cfg = preset(f"traffic_junction_{args.algo}")
    if args.override:
        cfg = cfg.replace(**parse_overrides(args.override))
    curves = traffic_junction_study(args.algo, args.inits, args.steps, args.seed, cfg, args.processes or None)
    summary = summarize(curves)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"traffic_junction_{args.algo}"
    cols = list(summary)
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + cols)
        for i in range(args.steps):
            w.writerow([i + 1] + [f"{summary[c][i]:.6f}" for c in cols])
    x = np.arange(1, args.steps + 1, dtype=float)
    series = []
    for key, label in (("optimal", "optimal joint action"), ("p1_pass", "agent 1 pass"), ("p2_pass", "agent 2 pass")):
        m, s = summary[f"mean_{key}"], summary[f"std_{key}"]
        series.append(Series(label, x, m, m - s, m + s))
    stem.with_suffix(".svg").write_text(line_plot(series, f"traffic junction, {args.algo.upper()}, "
                                                          f"{args.inits} inits (mean ± std)",
                                                  "training step", "probability"))
    print(json.dumps({"algo": args.algo, "inits": args.inits, "step": args.steps,
                      "mean_optimal": float(summary["mean_optimal"][-1]),
                      "std_optimal": float(summary["std_optimal"][-1])}, sort_keys=True))
    return 0


# --- parser ---------------------------------------------------------------------------

def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--preset", help="bundled preset name, e.g. coop_nav")
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="dotted-key override, e.g. optim.batch_size=16 (repeatable)")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.add_argument("--workers", type=int, help="rollout threads per run (does not change results)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lica", description="Multi-agent actor-critic experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one seed")
    _config_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="replay the config and seeds recorded in a manifest.json")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="train several seeds and aggregate median/quartiles")
    _config_args(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--processes", type=int, help="parallel seeds (default: LICA_THREADS or CPU count)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("eval", help="roll out a checkpointed policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=32)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--greedy", action="store_true", help="argmax actions")
    mode.add_argument("--sample", action="store_true", help="sample actions (default)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="SVG learning curves with interquartile shading")
    p.add_argument("--runs", nargs="+", required=True, help="run or sweep directories, one line each")
    p.add_argument("--metric", default="mean_reward")
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and network")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", nargs="+", metavar="NAME")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("trafficjunction", help="repeated short trainings on the one-step junction")
    p.add_argument("--inits", type=int, default=1000)
    p.add_argument("--steps", type=int, default=60)
    p.add_argument("--algo", choices=("lica", "coma"), default="lica")
    p.add_argument("--seed", type=int, default=0, help="first init seed")
    p.add_argument("--processes", type=int)
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default="out/trafficjunction")
    p.set_defaults(fn=cmd_trafficjunction)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (CliError, KeyError, ValueError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lica {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
