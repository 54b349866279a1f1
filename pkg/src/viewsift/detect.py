"""Broadcast-level outlier detection.

Every broadcast with at least one view gets a deviance score: the KL
divergence (bits) of its bracket's model distribution from its own empirical
distribution.  The decision boundary is a moving fence over log10-binned
viewcount: per bin, Q3 + K*IQR of the in-bin deviances.  A broadcast is botted
iff its viewcount is at least U and its deviance strictly exceeds the fence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ingest import Workload, BracketIndex, broadcast_features
from .model import TriDistribution, fit_histogram, to_distribution, kl_divergence

log = logging.getLogger(__name__)

DEFAULT_K = 3.0
DEFAULT_U = 50
DEFAULT_BINS_PER_DECADE = 5
DEFAULT_MIN_BIN_SAMPLES = 30


@dataclass(frozen=True)
class DeviancePoint:
    broadcast_id: str
    viewcount: int
    deviance_bits: float
    bracket: int


@dataclass
class FenceModel:
    """Per-log-bin Q3 + K*IQR thresholds over viewcount."""

    bin_edges: np.ndarray  # ascending viewcount boundaries, len = n_bins + 1
    fence_per_bin: np.ndarray  # len = n_bins
    K: float
    U: int

    def bin_of(self, viewcount: int) -> int:
        # viewcounts outside the fitted range clamp to the nearest bin
        i = int(np.searchsorted(self.bin_edges, viewcount, side="right")) - 1
        return min(max(i, 0), len(self.fence_per_bin) - 1)

    def value_for(self, viewcount: int) -> float:
        return float(self.fence_per_bin[self.bin_of(viewcount)])


def score_broadcasts(
    w: Workload,
    bracket_index: BracketIndex,
    bracket_models: dict,
    H: int,
) -> tuple[list[DeviancePoint], int]:
    """Score each broadcast against its bracket model.

    Returns the points (in sorted broadcast-id order) plus the number of
    broadcasts skipped for lack of a bracket model.  Broadcasts with zero
    accepted views are silently skipped.
    """
    points = []
    skipped = 0
    for bid in sorted(w.broadcasts):
        views = w.views_by_broadcast.get(bid, ())
        if not views:
            continue
        bracket = bracket_index.bracket_of[bid]
        q = bracket_models.get(bracket)
        if q is None:
            skipped += 1
            continue
        feats = broadcast_features(w.broadcasts[bid], views, H)
        p = to_distribution(fit_histogram(feats, H))
        points.append(DeviancePoint(bid, len(views), kl_divergence(p, q), bracket))
    if skipped:
        log.warning("score_broadcasts: %d broadcasts had no bracket model", skipped)
    return points, skipped


def fit_fence(
    points,
    K: float = DEFAULT_K,
    bins_per_decade: int = DEFAULT_BINS_PER_DECADE,
    min_bin_samples: int = DEFAULT_MIN_BIN_SAMPLES,
    U: int = DEFAULT_U,
) -> FenceModel:
    """Fit the moving Q3 + K*IQR fence over log10-binned viewcount.

    Bins with fewer than min_bin_samples points are merged with their right
    neighbor (higher viewcounts are sparser); a sparse final bin is merged
    leftward.  Quartiles use linear interpolation between order statistics.
    """
    points = list(points)
    if not points:
        raise ValueError("cannot fit a fence on zero points")
    if len(points) < min_bin_samples:
        raise ValueError(
            f"need at least min_bin_samples={min_bin_samples} points, got {len(points)}"
        )
    if all(p.viewcount < U for p in points):
        raise ValueError(f"all viewcounts below U={U}; nothing to fence")

    vc = np.array([p.viewcount for p in points], dtype=np.float64)
    dev = np.array([p.deviance_bits for p in points], dtype=np.float64)

    lo = np.floor(np.log10(vc.min()) * bins_per_decade) / bins_per_decade
    hi = np.ceil(np.log10(vc.max()) * bins_per_decade) / bins_per_decade
    if hi <= lo:
        hi = lo + 1.0 / bins_per_decade
    n_bins = int(round((hi - lo) * bins_per_decade))
    log_edges = lo + np.arange(n_bins + 1) / bins_per_decade
    edges = 10.0 ** log_edges

    which = np.clip(np.searchsorted(edges, vc, side="right") - 1, 0, n_bins - 1)

    # merge sparse bins rightward into groups of >= min_bin_samples
    groups: list[list[int]] = []
    run: list[int] = []
    run_n = 0
    for i in range(n_bins):
        run.append(i)
        run_n += int((which == i).sum())
        if run_n >= min_bin_samples:
            groups.append(run)
            run, run_n = [], 0
    if run:
        if groups:
            groups[-1].extend(run)
        else:
            groups.append(run)

    merged_edges = [edges[groups[0][0]]]
    fences = []
    for grp in groups:
        sel = np.isin(which, grp)
        d = dev[sel]
        q1, q3 = np.percentile(d, [25.0, 75.0])  # linear interpolation (type 7)
        fences.append(q3 + K * (q3 - q1))
        merged_edges.append(edges[grp[-1] + 1])

    return FenceModel(np.array(merged_edges), np.array(fences), K=K, U=U)


def classify_broadcasts(points, fence: FenceModel) -> set:
    """Botted iff viewcount >= U and deviance strictly exceeds the bin fence."""
    return {
        p.broadcast_id
        for p in points
        if p.viewcount >= fence.U and p.deviance_bits > fence.value_for(p.viewcount)
    }


def emit_deviance_plot_data(points, fence: FenceModel, stream) -> None:
    """Write viewcount-deviance plot rows plus the fence polyline.

    One `point` row per broadcast and two `fence` vertex rows per fence bin
    (the fence is a step function).  Values are written with full precision so
    a round-trip parse reproduces them exactly.
    """
    botted = classify_broadcasts(points, fence) if fence is not None else set()
    stream.write("kind,broadcast_id,viewcount,deviance_bits,botted\n")
    for p in points:
        stream.write(
            f"point,{p.broadcast_id},{p.viewcount},{p.deviance_bits!r},"
            f"{int(p.broadcast_id in botted)}\n"
        )
    if fence is not None:
        for i, f in enumerate(fence.fence_per_bin):
            stream.write(f"fence,,{fence.bin_edges[i]!r},{f!r},\n")
            stream.write(f"fence,,{fence.bin_edges[i + 1]!r},{f!r},\n")


def write_deviance_report(points, fence: FenceModel, stream) -> None:
    botted = classify_broadcasts(points, fence)
    stream.write("broadcast_id,bracket,viewcount,deviance_bits,fence_value,botted\n")
    for p in points:
        stream.write(
            f"{p.broadcast_id},{p.bracket},{p.viewcount},{p.deviance_bits!r},"
            f"{fence.value_for(p.viewcount)!r},{int(p.broadcast_id in botted)}\n"
        )
