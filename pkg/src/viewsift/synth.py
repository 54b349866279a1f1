"""Synthetic workloads, viewbot attacks, and the evaluation harness.

Authentic views are sampled from a bracket distribution and jittered;
attacks place a first bot uniformly in the feasible triangle and deliver /
terminate the remaining bots inside two disjoint windows each spanning a
`delta` fraction of the broadcast duration, with interarrival (IAT) and
intertermination (ITT) gaps drawn from a configurable family.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .ingest import ViewFeature, BroadcastRecord, ViewRecord
from .model import TriDistribution, bin_feature, feasible_cells, n_cells
from .prune import (
    DEFAULT_MAX_K,
    DEFAULT_MIN_CLUSTER_SIZE,
    DEFAULT_TOLERANCE,
    partition_views,
    prune_iterative,
    prune_stepwise,
    prune_topmost,
)

log = logging.getLogger(__name__)

GAP_FAMILIES = ("uniform", "gaussian", "exponential", "lognormal")

HEURISTICS = {
    "topmost": prune_topmost,
    "iterative": prune_iterative,
    "stepwise": prune_stepwise,
}


@dataclass(frozen=True)
class AttackSpec:
    n_authentic: int
    bot_ratio: float
    iat_dist: str = "uniform"
    itt_dist: str = "uniform"
    delta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise ValueError(f"delta must be in (0,1], got {self.delta}")
        for d in (self.iat_dist, self.itt_dist):
            if d not in GAP_FAMILIES:
                raise ValueError(f"unknown gap family {d!r}")

    @property
    def n_bots(self) -> int:
        return int(round(self.n_authentic * self.bot_ratio))


@dataclass
class LabeledWorkload:
    features: list
    labels: dict  # view_id -> "authentic" | "botted"


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    # each row: dict(n_authentic, bot_ratio, distribution, precision, recall, runs)

    def write_csv(self, stream) -> None:
        stream.write("n_authentic,bot_ratio,distribution,precision,recall,runs\n")
        for r in self.rows:
            stream.write(
                f"{r['n_authentic']},{r['bot_ratio']!r},{r['distribution']},"
                f"{r['precision']!r},{r['recall']!r},{r['runs']}\n"
            )


@dataclass(frozen=True)
class OverheadSpec:
    rate_limit_k: int
    target_bots_n: int
    bracket_frequencies: dict  # bracket id -> empirical probability
    trials: int = 20
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.bracket_frequencies.values()) - 1.0) > 1e-9:
            raise ValueError("bracket frequencies must sum to 1")


# ---------------------------------------------------------------------------
# priors and sampling


def default_bracket_prior(
    H: int = 20, start_decay: float = 0.65, stay_decay: float = 0.8
) -> TriDistribution:
    """Synthetic stand-in for a real bracket distribution.

    Mass concentrates at early start_frac and decays geometrically in
    stay_frac, which matches the broad shape of organic viewing: most viewers
    arrive early and watch a modest fraction of the broadcast.
    """
    w = np.array(
        [start_decay ** (x - 1) * stay_decay ** (y - 1) for x, y in feasible_cells(H)]
    )
    return TriDistribution(H, w / w.sum(), smoothed=True)


def _project_triangle(start: np.ndarray, stay: np.ndarray):
    start = np.clip(start, 0.0, 1.0 - 1e-9)
    stay = np.clip(stay, 1e-9, 1.0)
    over = start + stay > 1.0
    stay = np.where(over, 1.0 - start, stay)
    return start, stay


def sample_authentic_views(
    bracket: TriDistribution,
    n: int,
    jitter_sigma: float = 0.02,
    seed: int = 0,
    id_prefix: str = "auth",
) -> list:
    """Draw n views from a bracket multinomial, uniform within the sampled cell,
    with Gaussian jitter, projected back into the feasible triangle."""
    rng = np.random.default_rng(seed)
    H = bracket.H
    cells = np.asarray(feasible_cells(H))
    which = rng.choice(len(cells), size=n, p=bracket.mass)
    x, y = cells[which, 0], cells[which, 1]
    start = (x - 1 + rng.random(n)) / H
    stay = (y - rng.random(n)) / H
    if jitter_sigma > 0:
        start = start + rng.normal(0.0, jitter_sigma, n)
        stay = stay + rng.normal(0.0, jitter_sigma, n)
    start, stay = _project_triangle(start, stay)
    return [
        ViewFeature(f"{id_prefix}-{i:06d}", s, t, bin_feature(s, t, H))
        for i, (s, t) in enumerate(zip(start, stay))
    ]


def _draw_gaps(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Positive gap draws; only the shape matters since gaps are rescaled."""
    if name == "uniform":
        return 1.0 - rng.random(n)  # (0, 1]
    if name == "gaussian":
        return np.maximum(rng.normal(1.0, 0.25, n), 1e-6)
    if name == "exponential":
        return np.maximum(rng.exponential(1.0, n), 1e-12)
    if name == "lognormal":
        return rng.lognormal(0.0, 0.5, n)
    raise ValueError(f"unknown gap family {name!r}")


def generate_attack(spec: AttackSpec, H: int = 20, max_retries: int = 1000) -> list:
    """Generate lockstep botted views.

    The first bot's (start, stay) is uniform over the feasible triangle,
    constrained so a delivery window [s0, s0+delta] and a disjoint termination
    window [s0+stay0, s0+stay0+delta] both fit in the broadcast.  Remaining
    bots get start offsets from cumulative IAT draws rescaled into the
    delivery window and end offsets from ITT draws rescaled into the
    termination window.
    """
    m = spec.n_bots
    if m < 1:
        raise ValueError("attack must contain at least one bot")
    rng = np.random.default_rng(spec.seed)
    d = spec.delta
    for _ in range(max_retries):
        s0, t0 = rng.random(), rng.random()
        if s0 + t0 > 1.0:  # reflect into the triangle; keeps uniformity
            s0, t0 = 1.0 - s0, 1.0 - t0
        if t0 >= d and s0 + t0 + d <= 1.0:
            break
    else:
        raise RuntimeError(
            f"could not place attack with delta={d} inside the triangle"
        )
    e0 = s0 + t0
    starts = np.full(m, s0)
    ends = np.full(m, e0)
    if m > 1:
        iat = np.cumsum(_draw_gaps(spec.iat_dist, m - 1, rng))
        itt = np.cumsum(_draw_gaps(spec.itt_dist, m - 1, rng))
        starts[1:] = s0 + d * iat / iat[-1]
        ends[1:] = e0 + d * itt / itt[-1]
    start, stay = _project_triangle(starts, ends - starts)
    return [
        ViewFeature(f"bot-{i:06d}", s, t, bin_feature(s, t, H))
        for i, (s, t) in enumerate(zip(start, stay))
    ]


def make_labeled_broadcast(
    prior: TriDistribution,
    spec: AttackSpec,
    jitter_sigma: float = 0.02,
    seed: int | None = None,
) -> LabeledWorkload:
    seed = spec.seed if seed is None else seed
    auth = sample_authentic_views(prior, spec.n_authentic, jitter_sigma, seed)
    bots = generate_attack(spec, prior.H)
    labels = {f.view_id: "authentic" for f in auth}
    labels.update({f.view_id: "botted" for f in bots})
    return LabeledWorkload(features=auth + bots, labels=labels)


# ---------------------------------------------------------------------------
# evaluation


def evaluate_detection(truth: LabeledWorkload, predicted_botted) -> tuple[float, float]:
    """Precision/recall of a predicted botted-view set against ground truth.

    Precision is 1 when nothing is predicted; recall is 1 when nothing is
    actually botted.
    """
    predicted = set(predicted_botted)
    unknown = predicted - truth.labels.keys()
    if unknown:
        raise ValueError(f"{len(unknown)} predicted view ids are unlabeled")
    actual = {v for v, lab in truth.labels.items() if lab == "botted"}
    tp = len(predicted & actual)
    precision = tp / len(predicted) if predicted else 1.0
    recall = tp / len(actual) if actual else 1.0
    return precision, recall


def run_cell(
    prior: TriDistribution,
    spec: AttackSpec,
    heuristic: str = "iterative",
    jitter_sigma: float = 0.02,
    tolerance: float = DEFAULT_TOLERANCE,
    min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE,
    max_k: int = DEFAULT_MAX_K,
) -> tuple[float, float]:
    """One attacked broadcast end to end: generate, partition, prune, score."""
    lw = make_labeled_broadcast(prior, spec, jitter_sigma)
    part = partition_views(
        lw.features,
        min_cluster_size=min_cluster_size,
        max_k=max_k,
        seed=spec.seed,
        H=prior.H,
    )
    outcome = HEURISTICS[heuristic](part, prior, tolerance)
    return evaluate_detection(lw, outcome.botted_view_ids)


def run_grid(
    n_authentic_values=(100, 1000, 10000),
    bot_ratios=(0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0),
    distributions=GAP_FAMILIES,
    runs_per_cell: int = 5,
    delta: float = 0.1,
    heuristic: str = "iterative",
    prior: TriDistribution | None = None,
    jitter_sigma: float = 0.02,
    master_seed: int = 0,
    **cell_kwargs,
) -> EvalReport:
    """Grid experiment over (authentic count x bot ratio x gap family)."""
    if prior is None:
        prior = default_bracket_prior()
    report = EvalReport()
    for ci, n_auth in enumerate(n_authentic_values):
        for cj, ratio in enumerate(bot_ratios):
            for ck, dist in enumerate(distributions):
                precisions, recalls = [], []
                for run in range(runs_per_cell):
                    seed = master_seed * 1_000_003 + ci * 65_536 + cj * 4_096 + ck * 256 + run
                    spec = AttackSpec(
                        n_authentic=n_auth,
                        bot_ratio=ratio,
                        iat_dist=dist,
                        itt_dist=dist,
                        delta=delta,
                        seed=seed,
                    )
                    try:
                        p, r = run_cell(
                            prior, spec, heuristic, jitter_sigma, **cell_kwargs
                        )
                    except Exception:  # per-cell failures are recorded, not fatal
                        log.exception("grid cell failed: %s", spec)
                        continue
                    precisions.append(p)
                    recalls.append(r)
                report.rows.append(
                    {
                        "n_authentic": n_auth,
                        "bot_ratio": ratio,
                        "distribution": dist,
                        "precision": float(np.mean(precisions)) if precisions else float("nan"),
                        "recall": float(np.mean(recalls)) if recalls else float("nan"),
                        "runs": len(precisions),
                    }
                )
    return report


# ---------------------------------------------------------------------------
# adversarial IP-overhead estimate


def peak_concurrency(starts: np.ndarray, ends: np.ndarray) -> int:
    """Maximum number of overlapping [start, end) intervals (exact event sweep)."""
    times = np.concatenate([starts, ends])
    deltas = np.concatenate([np.ones(len(starts)), -np.ones(len(ends))])
    order = np.lexsort((deltas, times))  # ends before starts at equal times
    return int(np.cumsum(deltas[order]).max())


def _mimic_views(bracket: TriDistribution, n: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Sample cell-representative views until time-averaged concurrency reaches n.

    Each sampled view takes its cell's canonical behavior (start at the cell's
    left edge, stay at the cell's upper edge), so a point mass on the
    full-duration cell reproduces lockstep exactly.
    """
    H = bracket.H
    cells = np.asarray(feasible_cells(H))
    starts, stays = [], []
    total_stay = 0.0
    while total_stay < n:
        batch = max(16, int((n - total_stay) * 1.5))
        which = rng.choice(len(cells), size=batch, p=bracket.mass)
        s = (cells[which, 0] - 1) / H
        t = cells[which, 1] / H
        for si, ti in zip(s, t):
            starts.append(si)
            stays.append(ti)
            total_stay += ti
            if total_stay >= n:
                break
    return np.array(starts), np.array(starts) + np.array(stays)


def estimate_ip_overhead(spec: OverheadSpec, bracket_models: dict) -> float:
    """Relative IP overhead of bracket-mimicking bots versus pure lockstep.

    Lockstep needs peak concurrency n, hence ceil(n/k) IPs.  A mimicking
    adversary samples views from the bracket model until their time-averaged
    concurrency reaches n; the IPs needed follow from the resulting peak
    concurrency.  The estimate is the bracket-frequency-weighted mean of the
    per-trial relative overheads.
    """
    freqs = {
        b: f for b, f in spec.bracket_frequencies.items() if b in bracket_models
    }
    dropped = spec.bracket_frequencies.keys() - freqs.keys()
    if dropped:
        log.warning("overhead: no model for brackets %s; renormalizing", sorted(dropped))
    z = sum(freqs.values())
    if z <= 0:
        raise ValueError("no bracket with both a frequency and a model")
    rng = np.random.default_rng(spec.seed)
    n, k = spec.target_bots_n, spec.rate_limit_k
    ips_lockstep = math.ceil(n / k)
    result = 0.0
    for bracket, f in sorted(freqs.items()):
        overheads = []
        for _ in range(spec.trials):
            starts, ends = _mimic_views(bracket_models[bracket], n, rng)
            ips_mimic = math.ceil(peak_concurrency(starts, ends) / k)
            overheads.append((ips_mimic - ips_lockstep) / ips_lockstep)
        result += (f / z) * float(np.mean(overheads))
    return result


# ---------------------------------------------------------------------------
# scaling


def scaling_benchmark(
    viewcounts,
    heuristic: str = "iterative",
    prior: TriDistribution | None = None,
    seed: int = 0,
    max_k: int = DEFAULT_MAX_K,
    min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE,
):
    """Time partition+prune at each viewcount; returns (rows, slope, intercept, r2).

    Rows are (viewcount, wall seconds).  The fit is ordinary least squares of
    time against viewcount.
    """
    if prior is None:
        prior = default_bracket_prior()
    rows = []
    for n in viewcounts:
        spec = AttackSpec(
            n_authentic=n // 2, bot_ratio=1.0, delta=0.1, seed=seed + n
        )
        lw = make_labeled_broadcast(prior, spec)
        t0 = time.perf_counter()
        part = partition_views(
            lw.features, min_cluster_size=min_cluster_size, max_k=max_k,
            seed=seed, H=prior.H,
        )
        HEURISTICS[heuristic](part, prior)
        rows.append((n, time.perf_counter() - t0))
    x = np.array([r[0] for r in rows], dtype=np.float64)
    y = np.array([r[1] for r in rows], dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return rows, float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# full synthetic workloads in the ingest file formats


def synth_workload(
    n_broadcasts: int = 50,
    n_attacked: int = 5,
    viewcount_range: tuple[int, int] = (60, 1500),
    duration_range_min: tuple[float, float] = (20.0, 60.0),
    bot_ratio: float = 1.0,
    delta: float = 0.1,
    iat_dist: str = "uniform",
    itt_dist: str = "uniform",
    prior: TriDistribution | None = None,
    jitter_sigma: float = 0.02,
    seed: int = 0,
):
    """Generate a full labeled workload as raw broadcast/view records.

    Returns (broadcast records, view records, labels) where labels maps
    view_id -> authentic|botted.  The first n_attacked broadcasts (by index)
    carry an injected attack with the given bot ratio.
    """
    if prior is None:
        prior = default_bracket_prior()
    rng = np.random.default_rng(seed)
    base_ts = 1_600_000_000
    broadcasts, views, labels = [], [], {}
    lo, hi = viewcount_range
    for i in range(n_broadcasts):
        bid = f"b{i:05d}"
        dur_s = int(rng.uniform(*duration_range_min) * 60)
        start_ts = base_ts + i * 100_000
        broadcasts.append(BroadcastRecord(bid, f"ch{i:05d}", start_ts, start_ts + dur_s))
        n_auth = int(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        feats = sample_authentic_views(
            prior, n_auth, jitter_sigma, seed=int(rng.integers(2**31 - 1)),
            id_prefix=f"{bid}-auth",
        )
        feat_labels = {f.view_id: "authentic" for f in feats}
        if i < n_attacked:
            spec = AttackSpec(
                n_authentic=n_auth,
                bot_ratio=bot_ratio,
                iat_dist=iat_dist,
                itt_dist=itt_dist,
                delta=delta,
                seed=int(rng.integers(2**31 - 1)),
            )
            bots = generate_attack(spec, prior.H)
            bots = [
                ViewFeature(f"{bid}-{f.view_id}", f.start_frac, f.stay_frac, f.bin)
                for f in bots
            ]
            feats += bots
            feat_labels.update({f.view_id: "botted" for f in bots})
        for j, f in enumerate(feats):
            v_start = start_ts + int(round(f.start_frac * dur_s))
            v_end = v_start + max(1, int(round(f.stay_frac * dur_s)))
            v_start = min(v_start, start_ts + dur_s - 1)
            v_end = min(v_end, start_ts + dur_s)
            ip = f"10.{(j >> 16) & 255}.{(j >> 8) & 255}.{j & 255}"
            views.append(ViewRecord(f.view_id, ip, bid, v_start, v_end))
            labels[f.view_id] = feat_labels[f.view_id]
    return broadcasts, views, labels


def write_workload_files(broadcasts, views, labels, views_path, broadcasts_path, labels_path=None):
    with open(broadcasts_path, "w") as fh:
        fh.write("broadcast_id,channel_id,start_ts,end_ts\n")
        for b in broadcasts:
            fh.write(f"{b.broadcast_id},{b.channel_id},{b.start_ts},{b.end_ts}\n")
    with open(views_path, "w") as fh:
        fh.write("view_id,client_ip,broadcast_id,start_ts,end_ts\n")
        for v in views:
            fh.write(f"{v.view_id},{v.client_ip},{v.broadcast_id},{v.start_ts},{v.end_ts}\n")
    if labels_path is not None:
        with open(labels_path, "w") as fh:
            fh.write("view_id,label\n")
            for vid in sorted(labels):
                fh.write(f"{vid},{labels[vid]}\n")
