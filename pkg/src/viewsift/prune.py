"""Lockstep-instance clustering and greedy deviance pruning.

A botted broadcast's views are partitioned into "instances" (clusters in the
continuous (start_frac, stay_frac) plane) by recursive BIC-guided 2-way
splitting with a minibatch k-means inner loop.  Instances are then greedily
pruned whenever removing one lowers the KL divergence of the bracket model
from the remaining views.  Three heuristics trade ranking freshness for speed:

* topmost   -- rank once, prune the single best instance.
* iterative -- re-rank at the start of each full sweep, prune during the sweep.
* stepwise  -- re-rank after every single prune.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from sklearn.cluster import MiniBatchKMeans

from .model import (
    TriDistribution,
    cell_index,
    counts_to_distribution,
    kl_bits,
    n_cells,
)

DEFAULT_MIN_CLUSTER_SIZE = 5
DEFAULT_MAX_K = 50
DEFAULT_TOLERANCE = 1e-9
DEFAULT_MAX_ITERATIONS = 10

_VAR_FLOOR = 1e-12

# minibatch inner-loop knobs (fixed for reproducibility)
_BATCH_CAP = 256
_INNER_ITERATIONS = 50
_RESTARTS = 4
_MODE_GRID = 64
_BAND_BINS = 100
_BAND_FRACTION = 0.35


class InfeasibleRemovalError(ValueError):
    """Raised when removing an instance would leave an empty broadcast."""


@dataclass(frozen=True)
class Instance:
    """One cluster of temporally coherent views; the unit of pruning."""

    instance_id: int
    member_view_ids: tuple
    centroid: tuple  # (start_frac, stay_frac)
    counts: np.ndarray = None  # dense cell counts of the members

    def __post_init__(self):
        if not self.member_view_ids:
            raise ValueError("instance must be non-empty")

    @property
    def size(self) -> int:
        return len(self.member_view_ids)


@dataclass
class Partition:
    broadcast_id: str
    H: int
    instances: list


@dataclass
class PruneOutcome:
    kept_instances: tuple
    pruned_instances: tuple
    original_deviance_bits: float
    final_deviance_bits: float
    iterations: int
    steps: int
    botted_view_ids: frozenset


# ---------------------------------------------------------------------------
# clustering


def _spherical_bic(X: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    """BIC of a spherical-Gaussian mixture with per-cluster MLE variance.

    Per-cluster (not pooled) variance is essential here: a lockstep blob is
    orders of magnitude tighter than the surrounding organic cloud, and under
    a pooled variance the blob barely moves the fit, so blob-isolating splits
    get rejected.  free parameters = k*(d+2) - 1 (centers, variances, mixing
    weights); BIC = loglik - (params/2)*log n, higher is better.  A
    zero-variance parent returns +inf so coincident points are never split.
    """
    n, d = X.shape
    k = len(centers)
    if n <= k:
        return -np.inf
    ll = 0.0
    for j in range(k):
        mask = labels == j
        nj = int(mask.sum())
        if nj == 0:
            return -np.inf
        sse = float(((X[mask] - centers[j]) ** 2).sum())
        var = sse / (d * nj)
        if var < _VAR_FLOOR:
            if k == 1:
                return np.inf
            var = _VAR_FLOOR
        ll += -0.5 * nj * d * (np.log(2.0 * np.pi * var) + 1.0) + nj * np.log(nj / n)
    params = k * (d + 2) - 1
    return ll - 0.5 * params * np.log(n)


def _best_split(sub: np.ndarray, rng: np.random.Generator, min_size: int = 1):
    """Best 2-way minibatch k-means split of `sub` over several restarts.

    Two restarts are seeded deterministically: splitting the cluster mean
    along its principal axis, and placing one center on the densest fine-grid
    cell (lockstep blobs are extreme density spikes that plain k-means++
    routinely fails to isolate inside diffuse mass).  The rest use k-means++.
    Restarts are scored by the children's BIC rather than SSE, since the
    SSE-optimal split of a spike-in-cloud data can have a worse BIC than the
    spike-isolating one.  Returns (labels, centers, bic) or (None, None, -inf).
    """
    n = len(sub)
    mu = sub.mean(axis=0)
    _, sv, vt = np.linalg.svd(sub - mu, full_matrices=False)
    offset = vt[0] * (sv[0] / np.sqrt(n))
    inits = [np.vstack([mu + offset, mu - offset]), _mode_init(sub, mu)]
    inits.extend("k-means++" for _ in range(_RESTARTS - 2))
    best = (None, None, -np.inf)
    for init in inits:
        km = MiniBatchKMeans(
            n_clusters=2,
            init=init,
            n_init=1,
            batch_size=min(_BATCH_CAP, n),
            max_iter=_INNER_ITERATIONS,
            random_state=int(rng.integers(2**31 - 1)),
        ).fit(sub)
        labels, centers = km.labels_, km.cluster_centers_
        if min((labels == 0).sum(), (labels == 1).sum()) < min_size:
            continue
        bic = _spherical_bic(sub, labels, centers)
        if bic > best[2]:
            best = (labels, centers, bic)
    for labels, centers in _band_candidates(sub):
        if min((labels == 0).sum(), (labels == 1).sum()) < min_size:
            continue
        bic = _spherical_bic(sub, labels, centers)
        if bic > best[2]:
            best = (labels, centers, bic)
    return best


def _band_candidates(sub: np.ndarray):
    """Axis-aligned density-band splits: in-band vs out for each coordinate.

    A lockstep instance is often a thin bar -- extremely tight in one
    coordinate while spanning a wide range in the other -- which no isotropic
    2-means fit can separate from the surrounding cloud.  For each axis, take
    the densest histogram bin, extend it sideways while neighbouring bins stay
    near the peak count, and propose (inside band, outside band) as a
    candidate split.  Candidates are judged by the same BIC as k-means splits.
    """
    n = len(sub)
    nbins = max(10, min(_BAND_BINS, n // 2))
    for dim in range(sub.shape[1]):
        v = sub[:, dim]
        counts, edges = np.histogram(v, bins=nbins)
        peak = int(counts.argmax())
        thresh = max(counts[peak] * _BAND_FRACTION, 1.0)
        lo = hi = peak
        while lo > 0 and counts[lo - 1] >= thresh:
            lo -= 1
        while hi < nbins - 1 and counts[hi + 1] >= thresh:
            hi += 1
        inside = (v >= edges[lo]) & (v <= edges[hi + 1])
        if not inside.any() or inside.all():
            continue
        labels = np.where(inside, 0, 1)
        centers = np.vstack([sub[inside].mean(axis=0), sub[~inside].mean(axis=0)])
        yield labels, centers


def _mode_init(sub: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Init centers at the densest fine-grid cell and at the rest's mean."""
    ij = np.minimum((sub * _MODE_GRID).astype(np.int64), _MODE_GRID - 1)
    flat = ij[:, 0] * _MODE_GRID + ij[:, 1]
    mode = np.bincount(flat).argmax()
    in_mode = flat == mode
    c1 = sub[in_mode].mean(axis=0)
    c2 = sub[~in_mode].mean(axis=0) if (~in_mode).any() else mu
    return np.vstack([c1, c2])


def partition_views(
    features,
    min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE,
    max_k: int = DEFAULT_MAX_K,
    seed: int = 0,
    broadcast_id: str = "",
    H: int | None = None,
) -> Partition:
    """Hard-partition views into lockstep instances via recursive BIC splitting.

    Starts from a single cluster and repeatedly attempts 2-way minibatch
    k-means splits, accepting a split iff the children's BIC exceeds the
    parent's.  Splits producing a child smaller than min_cluster_size are
    rejected (so every instance has at least min_cluster_size members) and the
    total never exceeds max_k.  Deterministic given the seed.
    """
    features = list(features)
    if not features:
        raise ValueError("cannot partition zero features")
    if H is None:
        H = _infer_h(features)
    X = np.array([(f.start_frac, f.stay_frac) for f in features], dtype=np.float64)
    n = len(features)

    rng = np.random.default_rng(seed)
    final: list[np.ndarray] = []
    work: list[np.ndarray] = [np.arange(n)]
    while work:
        idx = work.pop()
        if (
            len(idx) < max(2, min_cluster_size)
            or len(final) + len(work) + 2 > max_k
        ):
            final.append(idx)
            continue
        sub = X[idx]
        parent_bic = _spherical_bic(sub, np.zeros(len(idx), dtype=int), sub.mean(axis=0)[None, :])
        if parent_bic == np.inf:  # zero variance: nothing to split
            final.append(idx)
            continue
        labels, centers, child_bic = _best_split(sub, rng, min_size=min_cluster_size)
        if labels is None:
            final.append(idx)
            continue
        if child_bic > parent_bic:
            work.append(idx[labels == 0])
            work.append(idx[labels == 1])
        else:
            final.append(idx)

    # deterministic instance ids: order clusters by first member index
    final.sort(key=lambda idx: int(idx.min()))
    cidx = cell_index(H)
    instances = []
    for i, idx in enumerate(final):
        counts = np.zeros(n_cells(H), dtype=np.int64)
        for j in idx:
            counts[cidx[features[j].bin]] += 1
        instances.append(
            Instance(
                instance_id=i,
                member_view_ids=tuple(features[j].view_id for j in idx),
                centroid=(float(X[idx, 0].mean()), float(X[idx, 1].mean())),
                counts=counts,
            )
        )
    return Partition(broadcast_id=broadcast_id, H=H, instances=instances)


def _infer_h(features) -> int:
    # bin (X, Y) satisfies X + Y <= H + 1 with equality reachable; the max
    # observed X + Y - 1 underestimates H, so callers that need an exact H
    # should carry it themselves.  Partitions only use H for cell layout, so
    # we take the tightest H covering all bins.
    return max(f.bin[0] + f.bin[1] - 1 for f in features)


# ---------------------------------------------------------------------------
# pruning


def _deviance(counts: np.ndarray, bracket: TriDistribution) -> float:
    p = counts_to_distribution(counts, bracket.H)
    return kl_bits(p.mass, bracket.mass)


def deviance_reduction(
    current, instance: Instance, bracket: TriDistribution
) -> float:
    """Deviance drop from removing one instance; positive means removal helps."""
    counts = current.counts if hasattr(current, "counts") else np.asarray(current)
    if (instance.counts > counts).any():
        raise ValueError("instance views not all present in current histogram")
    remaining = counts - instance.counts
    if remaining.sum() <= 0:
        raise InfeasibleRemovalError("removal would empty the broadcast")
    return _deviance(counts, bracket) - _deviance(remaining, bracket)


def _aligned_counts(inst: Instance, H: int) -> np.ndarray:
    counts = np.asarray(inst.counts)
    if counts.shape[0] == n_cells(H):
        return counts
    padded = np.zeros(n_cells(H), dtype=np.int64)
    # instance counts laid out for a smaller inferred H; re-map by cell
    small_h = int((np.sqrt(8 * counts.shape[0] + 1) - 1) / 2)
    big = cell_index(H)
    from .model import feasible_cells

    for cell, c in zip(feasible_cells(small_h), counts):
        padded[big[cell]] += c
    return padded


def _prepare(partition: Partition, bracket: TriDistribution):
    insts = {
        inst.instance_id: _aligned_counts(inst, bracket.H)
        for inst in partition.instances
    }
    total = np.sum(list(insts.values()), axis=0)
    return insts, total


def _outcome(partition, kept, pruned, d0, d1, iterations, steps) -> PruneOutcome:
    by_id = {i.instance_id: i for i in partition.instances}
    botted = frozenset(
        vid for i in pruned for vid in by_id[i].member_view_ids
    )
    return PruneOutcome(
        kept_instances=tuple(sorted(kept)),
        pruned_instances=tuple(pruned),
        original_deviance_bits=d0,
        final_deviance_bits=d1,
        iterations=iterations,
        steps=steps,
        botted_view_ids=botted,
    )


def _reductions(current, insts, ids, bracket, d_current):
    """Deviance reduction per candidate id against the current counts."""
    out = {}
    for i in ids:
        remaining = current - insts[i]
        if remaining.sum() <= 0:
            out[i] = -np.inf  # pruning the last instance is never feasible
        else:
            out[i] = d_current - _deviance(remaining, bracket)
    return out


def prune_topmost(
    partition: Partition,
    bracket: TriDistribution,
    tolerance: float = DEFAULT_TOLERANCE,
) -> PruneOutcome:
    """Rank instances once; prune exactly the argmax if it beats tolerance."""
    insts, current = _prepare(partition, bracket)
    d0 = _deviance(current, bracket)
    red = _reductions(current, insts, sorted(insts), bracket, d0)
    best = max(sorted(red), key=red.__getitem__)
    if red[best] > tolerance:
        kept = [i for i in sorted(insts) if i != best]
        return _outcome(partition, kept, [best], d0, d0 - red[best], 1, 1)
    return _outcome(partition, sorted(insts), [], d0, d0, 1, 0)


def prune_iterative(
    partition: Partition,
    bracket: TriDistribution,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> PruneOutcome:
    """Sweep instances in iteration-start rank order, re-ranking per iteration.

    Within a sweep each candidate is tested against the *current* state, but
    the order is frozen at the start of the iteration.  Stops when a full
    iteration prunes nothing.
    """
    insts, current = _prepare(partition, bracket)
    d0 = d = _deviance(current, bracket)
    kept = sorted(insts)
    pruned: list[int] = []
    iterations = 0
    while iterations < max_iterations and len(kept) > 1:
        iterations += 1
        rank = _reductions(current, insts, kept, bracket, d)
        order = sorted(kept, key=lambda i: (-rank[i], i))
        pruned_this_iter = 0
        for i in order:
            if len(kept) <= 1:
                break
            remaining = current - insts[i]
            if remaining.sum() <= 0:
                continue
            d_prop = _deviance(remaining, bracket)
            if d - d_prop > tolerance:
                current = remaining
                d = d_prop
                kept.remove(i)
                pruned.append(i)
                pruned_this_iter += 1
        if pruned_this_iter == 0:
            break
    return _outcome(partition, kept, pruned, d0, d, iterations, len(pruned))


def prune_stepwise(
    partition: Partition,
    bracket: TriDistribution,
    tolerance: float = DEFAULT_TOLERANCE,
    max_steps: int | None = None,
) -> PruneOutcome:
    """Repeatedly prune the current argmax-reduction instance, re-ranking each step."""
    insts, current = _prepare(partition, bracket)
    d0 = d = _deviance(current, bracket)
    kept = sorted(insts)
    pruned: list[int] = []
    limit = len(insts) if max_steps is None else max_steps
    while len(pruned) < limit and len(kept) > 1:
        red = _reductions(current, insts, kept, bracket, d)
        best = max(sorted(red), key=red.__getitem__)
        if red[best] <= tolerance:
            break
        current = current - insts[best]
        d = d - red[best]
        kept.remove(best)
        pruned.append(best)
    return _outcome(partition, kept, pruned, d0, d, len(pruned) + 1, len(pruned))


def exact_prune_oracle(partition: Partition, bracket: TriDistribution):
    """Exhaustive powerset minimum over kept-instance subsets (test oracle).

    Refuses partitions with more than 20 instances.  Ties break toward keeping
    more views, then toward the lexicographically smallest kept-id tuple.
    Returns (kept ids, optimal deviance in bits).
    """
    insts, _ = _prepare(partition, bracket)
    ids = sorted(insts)
    if len(ids) > 20:
        raise ValueError(f"oracle refuses |instances| = {len(ids)} > 20")
    best_kept = None
    best_d = np.inf
    best_views = -1
    for r in range(1, len(ids) + 1):
        for kept in combinations(ids, r):
            counts = np.sum([insts[i] for i in kept], axis=0)
            views = int(counts.sum())
            d = _deviance(counts, bracket)
            if (
                d < best_d - 1e-12
                or (abs(d - best_d) <= 1e-12 and views > best_views)
                or (abs(d - best_d) <= 1e-12 and views == best_views and kept < best_kept)
            ):
                best_kept, best_d, best_views = kept, d, views
    return best_kept, best_d
