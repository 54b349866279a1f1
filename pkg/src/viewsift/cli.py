"""Command-line surface.

Subcommands:
    detect    full pipeline: ingest -> model -> detect -> prune, all reports
    score     deviance scoring only, against persisted bracket models
    prune     partition + prune a single broadcast
    synth     generate a labeled synthetic workload in the ingest formats
    eval      precision/recall grid experiment on synthetic attacks
    bench     partition+prune scaling benchmark
    overhead  adversarial IP-overhead estimate

Configuration may come from a flat key=value file (--config, or the
VIEWSIFT_CONFIG environment variable); command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import pipeline, synth
from .model import load_bracket_models
from .synth import GAP_FAMILIES, HEURISTICS

log = logging.getLogger(__name__)

ENV_CONFIG = "VIEWSIFT_CONFIG"

_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(pipeline.PipelineConfig)}


def _read_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in _CONFIG_FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown config line {line!r}")
            values[key] = value
    return values


def _coerce(name: str, raw: str):
    kind = {
        "H": int, "U": int, "min_cluster_size": int, "max_k": int,
        "bins_per_decade": int, "min_bin_samples": int, "seed": int, "workers": int,
        "T": float, "K": float, "pseudocount": float, "tolerance": float,
    }.get(name, str)
    return kind(raw)


def _resolve_config(args) -> pipeline.PipelineConfig:
    """defaults < config file < flags."""
    values = {}
    config_path = args.config or os.environ.get(ENV_CONFIG)
    if config_path:
        for k, v in _read_config_file(config_path).items():
            values[k] = _coerce(k, v)
    flag_map = {
        "views_path": "views", "broadcasts_path": "broadcasts",
        "output_dir": "out", "models_path": "models",
        "H": "H", "T": "T", "K": "K", "U": "U",
        "pseudocount": "pseudocount", "heuristic": "heuristic",
        "tolerance": "tolerance", "min_cluster_size": "min_cluster_size",
        "max_k": "max_k", "bins_per_decade": "bins_per_decade",
        "min_bin_samples": "min_bin_samples", "seed": "seed", "workers": "workers",
    }
    for field, flag in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[field] = v
    return pipeline.PipelineConfig(**values)


def _add_pipeline_flags(p: argparse.ArgumentParser, io: bool = True):
    if io:
        p.add_argument("--views", help="views CSV path")
        p.add_argument("--broadcasts", help="broadcasts CSV path")
        p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--H", type=int, help="bins per feature axis")
    p.add_argument("--T", type=float, help="bracket width, minutes")
    p.add_argument("--K", type=float, help="IQR fence multiplier")
    p.add_argument("--U", type=int, help="minimum suspect viewcount")
    p.add_argument("--pseudocount", type=float, help="bracket smoothing pseudocount")
    p.add_argument("--heuristic", choices=sorted(HEURISTICS))
    p.add_argument("--tolerance", type=float, help="minimum useful deviance drop, bits")
    p.add_argument("--min-cluster-size", dest="min_cluster_size", type=int)
    p.add_argument("--max-k", dest="max_k", type=int)
    p.add_argument("--bins-per-decade", dest="bins_per_decade", type=int)
    p.add_argument("--min-bin-samples", dest="min_bin_samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewsift", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run the full detection pipeline")
    _add_pipeline_flags(p)

    p = sub.add_parser("score", help="score deviance against persisted models")
    _add_pipeline_flags(p)
    p.add_argument("--models", required=True, help="persisted bracket-models file")

    p = sub.add_parser("prune", help="partition + prune one broadcast")
    _add_pipeline_flags(p)
    p.add_argument("--models", help="persisted bracket-models file (else refit)")
    p.add_argument("--broadcast-id", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic workload")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-broadcasts", type=int, default=50)
    p.add_argument("--attacked", type=int, default=5)
    p.add_argument("--bot-ratio", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--iat", choices=GAP_FAMILIES, default="uniform")
    p.add_argument("--itt", choices=GAP_FAMILIES, default="uniform")
    p.add_argument("--viewcount-min", type=int, default=60)
    p.add_argument("--viewcount-max", type=int, default=1500)
    p.add_argument("--H", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="synthetic attack precision/recall grid")
    p.add_argument("--out", help="grid report CSV path (default: stdout)")
    p.add_argument("--grid", choices=("full", "small"), default="full")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--heuristic", choices=sorted(HEURISTICS), default="iterative")
    p.add_argument("--H", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="partition+prune scaling benchmark")
    p.add_argument("--sizes", default="1000,10000,100000,1000000",
                   help="comma-separated viewcounts")
    p.add_argument("--out", help="timing table CSV path (default: stdout)")
    p.add_argument("--heuristic", choices=sorted(HEURISTICS), default="iterative")
    p.add_argument("--max-k", dest="max_k", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("overhead", help="adversarial IP-overhead estimate")
    p.add_argument("--models", help="persisted bracket-models file (else synthetic prior)")
    p.add_argument("--rate-limit", type=int, default=5, help="concurrent views per IP")
    p.add_argument("--bots", type=int, default=1000, help="target concurrent bots")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_detect(args) -> int:
    cfg = _resolve_config(args)
    print(json.dumps(pipeline.run_pipeline(cfg), indent=2))
    return 0


def _cmd_score(args) -> int:
    mf = load_bracket_models(args.models)
    if args.H is None:
        args.H = mf.H
    if args.T is None:
        args.T = mf.T
    cfg = _resolve_config(args)
    cfg.models_path = args.models
    print(json.dumps(pipeline.run_scoring(cfg), indent=2))
    return 0


def _cmd_prune(args) -> int:
    if args.models:
        mf = load_bracket_models(args.models)
        if args.H is None:
            args.H = mf.H
        if args.T is None:
            args.T = mf.T
    cfg = _resolve_config(args)
    print(json.dumps(pipeline.run_prune_only(cfg, args.broadcast_id), indent=2))
    return 0


def _cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    prior = synth.default_bracket_prior(args.H)
    broadcasts, views, labels = synth.synth_workload(
        n_broadcasts=args.n_broadcasts,
        n_attacked=args.attacked,
        viewcount_range=(args.viewcount_min, args.viewcount_max),
        bot_ratio=args.bot_ratio,
        delta=args.delta,
        iat_dist=args.iat,
        itt_dist=args.itt,
        prior=prior,
        seed=args.seed,
    )
    synth.write_workload_files(
        broadcasts, views, labels,
        views_path=os.path.join(args.out, "views.csv"),
        broadcasts_path=os.path.join(args.out, "broadcasts.csv"),
        labels_path=os.path.join(args.out, "labels.csv"),
    )
    print(json.dumps({
        "broadcasts": len(broadcasts),
        "views": len(views),
        "botted_views": sum(1 for lab in labels.values() if lab == "botted"),
        "out": args.out,
    }, indent=2))
    return 0


def _cmd_eval(args) -> int:
    if args.grid == "full":
        grid = dict(
            n_authentic_values=(100, 1000, 10000),
            bot_ratios=(0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0),
            distributions=GAP_FAMILIES,
        )
    else:
        grid = dict(
            n_authentic_values=(100,), bot_ratios=(1.0,), distributions=("uniform",)
        )
    prior = synth.default_bracket_prior(args.H)
    report = synth.run_grid(
        runs_per_cell=args.runs, delta=args.delta, heuristic=args.heuristic,
        prior=prior, master_seed=args.seed, **grid,
    )
    if args.out:
        with open(args.out, "w") as fh:
            report.write_csv(fh)
    else:
        report.write_csv(sys.stdout)
    return 0


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    rows, slope, intercept, r2 = synth.scaling_benchmark(
        sizes, heuristic=args.heuristic, seed=args.seed, max_k=args.max_k
    )
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("viewcount,wall_time_s\n")
        for n, t in rows:
            out.write(f"{n},{t!r}\n")
    finally:
        if args.out:
            out.close()
    print(json.dumps({"slope_s_per_view": slope, "intercept_s": intercept, "r2": r2},
                     indent=2), file=sys.stderr)
    return 0


def _cmd_overhead(args) -> int:
    if args.models:
        mf = load_bracket_models(args.models)
        models = mf.models
        total = sum(mf.totals.values()) or 1
        freqs = {b: mf.totals.get(b, 0) / total for b in models}
        z = sum(freqs.values())
        freqs = {b: f / z for b, f in freqs.items()}
    else:
        models = {0: synth.default_bracket_prior()}
        freqs = {0: 1.0}
    spec = synth.OverheadSpec(
        rate_limit_k=args.rate_limit,
        target_bots_n=args.bots,
        bracket_frequencies=freqs,
        trials=args.trials,
        seed=args.seed,
    )
    overhead = synth.estimate_ip_overhead(spec, models)
    print(json.dumps({
        "rate_limit_k": args.rate_limit,
        "target_bots_n": args.bots,
        "trials": args.trials,
        "ip_overhead_fraction": overhead,
    }, indent=2))
    return 0


_COMMANDS = {
    "detect": _cmd_detect,
    "score": _cmd_score,
    "prune": _cmd_prune,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "overhead": _cmd_overhead,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, pipeline.PipelineError) as e:
        print(f"viewsift: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
