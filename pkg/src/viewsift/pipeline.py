"""End-to-end orchestration: ingest -> model -> detect -> prune, with reports.

All report files are written with full-precision floats and deterministic
ordering, so identical inputs and config yield byte-identical outputs.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import detect, model
from .ingest import broadcast_features, build_bracket_index, parse_workload
from .model import BracketModelFile, TriHistogram, fit_histogram, to_distribution
from .prune import partition_views
from .synth import HEURISTICS

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A stage failed; the message carries the stage name."""


@dataclass
class PipelineConfig:
    views_path: str = ""
    broadcasts_path: str = ""
    output_dir: str = "."
    models_path: str = ""  # non-empty in `score` mode: reuse persisted models
    H: int = 20
    T: float = 10.0
    K: float = 3.0
    U: int = 50
    pseudocount: float = 0.5
    heuristic: str = "iterative"
    tolerance: float = 1e-9
    min_cluster_size: int = 5
    max_k: int = 50
    bins_per_decade: int = 5
    min_bin_samples: int = 30
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.H < 2:
            raise ValueError("H must be >= 2")
        if self.T <= 0 or self.K <= 0 or self.U < 1 or self.pseudocount < 0:
            raise ValueError("invalid T/K/U/pseudocount")
        if self.heuristic not in HEURISTICS:
            raise ValueError(f"unknown heuristic {self.heuristic!r}")


class _Outputs:
    """Tracks files created by this run so failures can clean them up."""

    def __init__(self, outdir):
        self.outdir = outdir
        self.created = []
        os.makedirs(outdir, exist_ok=True)

    def open(self, name):
        path = os.path.join(self.outdir, name)
        self.created.append(path)
        return open(path, "w")

    def discard_all(self):
        for path in self.created:
            try:
                os.unlink(path)
            except OSError:
                pass


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as e:
                raise PipelineError(f"stage {name}: {e}") from e

        return inner

    return wrap


@_stage("ingest")
def _ingest(cfg):
    with open(cfg.views_path) as vs, open(cfg.broadcasts_path) as bs:
        return parse_workload(vs, bs)


@_stage("model")
def _build_models(cfg, workload, outputs):
    index = build_bracket_index(workload.broadcasts, cfg.T)
    hists = {}
    for bid, bracket in index.bracket_of.items():
        views = workload.views_by_broadcast.get(bid, ())
        if not views:
            continue
        feats = broadcast_features(workload.broadcasts[bid], views, cfg.H)
        h = fit_histogram(feats, cfg.H)
        hists[bracket] = hists[bracket].merged(h) if bracket in hists else h
    models = {
        br: to_distribution(h, cfg.pseudocount) for br, h in sorted(hists.items())
    }
    totals = {br: h.total for br, h in hists.items()}
    mf = BracketModelFile(H=cfg.H, T=cfg.T, totals=totals, models=models)
    if outputs is not None:
        path = os.path.join(outputs.outdir, "bracket_models.txt")
        outputs.created.append(path)
        model.save_bracket_models(path, mf)
    return index, mf


@_stage("score")
def _load_models(cfg):
    mf = model.load_bracket_models(cfg.models_path)
    if mf.H != cfg.H or mf.T != cfg.T:
        raise ValueError(
            f"persisted models were built with H={mf.H}, T={mf.T}; "
            f"refusing to score with H={cfg.H}, T={cfg.T}"
        )
    return mf


@_stage("detect")
def _detect(cfg, workload, index, models, outputs):
    points, skipped = detect.score_broadcasts(workload, index, models, cfg.H)
    fence = detect.fit_fence(
        points,
        K=cfg.K,
        bins_per_decade=cfg.bins_per_decade,
        min_bin_samples=cfg.min_bin_samples,
        U=cfg.U,
    )
    botted = detect.classify_broadcasts(points, fence)
    if outputs is not None:
        with outputs.open("deviance_report.csv") as fh:
            detect.write_deviance_report(points, fence, fh)
        with outputs.open("deviance_plot.csv") as fh:
            detect.emit_deviance_plot_data(points, fence, fh)
        with outputs.open("botted_broadcasts.txt") as fh:
            for bid in sorted(botted):
                fh.write(bid + "\n")
    return points, fence, botted, skipped


def _prune_one(cfg, workload, models, index, bid):
    b = workload.broadcasts[bid]
    views = workload.views_by_broadcast[bid]
    feats = broadcast_features(b, views, cfg.H)
    part = partition_views(
        feats,
        min_cluster_size=cfg.min_cluster_size,
        max_k=cfg.max_k,
        seed=cfg.seed,
        broadcast_id=bid,
        H=cfg.H,
    )
    outcome = HEURISTICS[cfg.heuristic](part, models[index.bracket_of[bid]], cfg.tolerance)
    return bid, feats, part, outcome


@_stage("prune")
def _prune(cfg, workload, index, models, botted, outputs):
    jobs = sorted(botted)
    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda b: _prune_one(cfg, workload, models, index, b), jobs))
    else:
        results = [_prune_one(cfg, workload, models, index, b) for b in jobs]
    results.sort(key=lambda r: r[0])  # deterministic regardless of scheduling

    outcomes = {}
    if outputs is not None:
        views_by_id = {
            v.view_id: v for bid in jobs for v in workload.views_by_broadcast[bid]
        }
        with outputs.open("botted_views.csv") as fh:
            fh.write(
                "broadcast_id,view_id,client_ip,instance_id,heuristic,"
                "deviance_before,deviance_after\n"
            )
            for bid, feats, part, outcome in results:
                inst_of = {
                    vid: inst.instance_id
                    for inst in part.instances
                    for vid in inst.member_view_ids
                }
                for vid in sorted(outcome.botted_view_ids):
                    fh.write(
                        f"{bid},{vid},{views_by_id[vid].client_ip},{inst_of[vid]},"
                        f"{cfg.heuristic},{outcome.original_deviance_bits!r},"
                        f"{outcome.final_deviance_bits!r}\n"
                    )
        for bid, feats, part, outcome in results:
            inst_of = {
                vid: inst.instance_id
                for inst in part.instances
                for vid in inst.member_view_ids
            }
            with outputs.open(f"behavior_{bid}.csv") as fh:
                fh.write("view_id,start_frac,stay_frac,instance_id,pruned\n")
                for f in feats:
                    fh.write(
                        f"{f.view_id},{f.start_frac!r},{f.stay_frac!r},"
                        f"{inst_of[f.view_id]},{int(f.view_id in outcome.botted_view_ids)}\n"
                    )
    for bid, _, _, outcome in results:
        outcomes[bid] = outcome
    return outcomes


def run_pipeline(cfg: PipelineConfig, write_outputs: bool = True) -> dict:
    """Full detection run; returns the run summary (also reproducibility record)."""
    t0 = time.perf_counter()
    outputs = _Outputs(cfg.output_dir) if write_outputs else None
    try:
        workload = _ingest(cfg)
        if cfg.models_path:
            mf = _load_models(cfg)
            index = build_bracket_index(workload.broadcasts, mf.T)
        else:
            index, mf = _build_models(cfg, workload, outputs)
        points, fence, botted, skipped = _detect(cfg, workload, index, mf.models, outputs)
        outcomes = _prune(cfg, workload, index, mf.models, botted, outputs)
    except Exception:
        if outputs is not None:
            outputs.discard_all()
        raise

    n_botted_views = sum(len(o.botted_view_ids) for o in outcomes.values())
    summary = {
        "n_broadcasts": len(workload.broadcasts),
        "n_views": workload.n_views,
        "rejected_rows": workload.rejected,
        "skipped_broadcasts": skipped,
        "n_botted_broadcasts": len(botted),
        "n_botted_views": n_botted_views,
        "mean_original_deviance_bits": (
            sum(o.original_deviance_bits for o in outcomes.values()) / len(outcomes)
            if outcomes
            else 0.0
        ),
        "mean_pruned_deviance_bits": (
            sum(o.final_deviance_bits for o in outcomes.values()) / len(outcomes)
            if outcomes
            else 0.0
        ),
        "wall_time_s": time.perf_counter() - t0,
        "config": dataclasses.asdict(cfg),
    }
    return summary


def run_scoring(cfg: PipelineConfig) -> dict:
    """`score` subcommand: deviance + fence only, reusing persisted models."""
    t0 = time.perf_counter()
    outputs = _Outputs(cfg.output_dir)
    try:
        workload = _ingest(cfg)
        mf = _load_models(cfg)
        index = build_bracket_index(workload.broadcasts, mf.T)
        points, fence, botted, skipped = _detect(cfg, workload, index, mf.models, outputs)
    except Exception:
        outputs.discard_all()
        raise
    return {
        "n_broadcasts": len(workload.broadcasts),
        "n_views": workload.n_views,
        "rejected_rows": workload.rejected,
        "skipped_broadcasts": skipped,
        "n_botted_broadcasts": len(botted),
        "wall_time_s": time.perf_counter() - t0,
        "config": dataclasses.asdict(cfg),
    }


def run_prune_only(cfg: PipelineConfig, broadcast_id: str) -> dict:
    """`prune` subcommand: partition and prune a single chosen broadcast."""
    outputs = _Outputs(cfg.output_dir)
    try:
        workload = _ingest(cfg)
        if broadcast_id not in workload.broadcasts:
            raise PipelineError(f"stage prune: unknown broadcast {broadcast_id!r}")
        if cfg.models_path:
            mf = _load_models(cfg)
            index = build_bracket_index(workload.broadcasts, mf.T)
        else:
            index, mf = _build_models(cfg, workload, None)
        outcomes = _prune(cfg, workload, index, mf.models, {broadcast_id}, outputs)
    except Exception:
        outputs.discard_all()
        raise
    o = outcomes[broadcast_id]
    return {
        "broadcast_id": broadcast_id,
        "kept_instances": list(o.kept_instances),
        "pruned_instances": list(o.pruned_instances),
        "original_deviance_bits": o.original_deviance_bits,
        "final_deviance_bits": o.final_deviance_bits,
        "iterations": o.iterations,
        "steps": o.steps,
        "n_botted_views": len(o.botted_view_ids),
        "config": dataclasses.asdict(cfg),
    }
