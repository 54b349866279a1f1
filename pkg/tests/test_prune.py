"""Instance clustering and the three greedy pruning heuristics."""

import numpy as np
import pytest

from viewsift.ingest import ViewFeature
from viewsift.model import (
    TriDistribution,
    bin_feature,
    counts_to_distribution,
    kl_bits,
    n_cells,
)
from viewsift.prune import (
    Instance,
    Partition,
    deviance_reduction,
    exact_prune_oracle,
    partition_views,
    prune_iterative,
    prune_stepwise,
    prune_topmost,
)


def _feat(vid, start, stay, H=20):
    return ViewFeature(vid, start, stay, bin_feature(start, stay, H))


def _uniform_bracket(H):
    return TriDistribution(H, np.full(n_cells(H), 1.0 / n_cells(H)), smoothed=True)


def _inst(iid, counts, n_views_prefix="i"):
    counts = np.asarray(counts, dtype=np.int64)
    vids = tuple(
        f"{n_views_prefix}{iid}-{k}" for k in range(int(counts.sum()))
    )
    return Instance(iid, vids, (0.0, 0.0), counts)


def _deviance_oracle(counts, bracket):
    # from-scratch recomputation used as the ground truth everywhere below
    counts = np.asarray(counts, dtype=np.float64)
    return kl_bits(counts / counts.sum(), bracket.mass)


# ---------------------------------------------------------------------------
# partition_views


def test_coincident_views_form_single_instance():
    feats = [_feat(f"v{i}", 0.25, 0.25) for i in range(40)]
    part = partition_views(feats, seed=3, H=20)
    assert len(part.instances) == 1
    assert part.instances[0].size == 40


def test_two_tight_blobs_are_separated():
    rng = np.random.default_rng(11)
    feats = []
    truth = {}
    for b, (cx, cy) in enumerate([(0.1, 0.1), (0.8, 0.15)]):
        for i in range(50):
            s = float(np.clip(cx + rng.normal(0, 0.005), 0, 0.95))
            t = float(np.clip(cy + rng.normal(0, 0.005), 1e-6, 1 - s))
            vid = f"blob{b}-{i}"
            truth[vid] = b
            feats.append(_feat(vid, s, t))
    part = partition_views(feats, seed=5, H=20)
    assert len(part.instances) == 2
    for inst in part.instances:
        labels = [truth[v] for v in inst.member_view_ids]
        majority = max(labels.count(0), labels.count(1))
        assert majority / len(labels) >= 0.95


def test_uniform_scatter_yields_few_instances_and_full_coverage():
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        feats = []
        for i in range(30):
            s = float(rng.uniform(0, 0.999))
            t = float(rng.uniform(1e-6, 1 - s))
            feats.append(_feat(f"v{i}", s, t))
        part = partition_views(feats, min_cluster_size=10, seed=seed, H=20)
        assert len(part.instances) <= 3
        covered = sorted(v for i in part.instances for v in i.member_view_ids)
        assert covered == sorted(f"v{i}" for i in range(30))


def test_partition_respects_max_k():
    rng = np.random.default_rng(4)
    feats = []
    for i in range(400):
        s = float(rng.uniform(0, 0.999))
        feats.append(_feat(f"v{i}", s, float(rng.uniform(1e-6, 1 - s))))
    part = partition_views(feats, min_cluster_size=2, max_k=6, seed=0, H=20)
    assert len(part.instances) <= 6


def test_partition_is_deterministic_for_a_seed():
    rng = np.random.default_rng(8)
    feats = []
    for i in range(150):
        s = float(rng.uniform(0, 0.999))
        feats.append(_feat(f"v{i}", s, float(rng.uniform(1e-6, 1 - s))))
    a = partition_views(feats, seed=9, H=20)
    b = partition_views(feats, seed=9, H=20)
    assert [i.member_view_ids for i in a.instances] == [
        i.member_view_ids for i in b.instances
    ]


def test_partition_rejects_empty_input():
    with pytest.raises(ValueError):
        partition_views([])


# ---------------------------------------------------------------------------
# deviance_reduction


def test_reduction_nonpositive_when_broadcast_matches_bracket():
    H = 2
    bracket = counts_to_distribution(
        np.array([10, 20, 10], dtype=np.int64), H, pseudocount=0.5
    )
    insts = [
        _inst(0, [5, 10, 5]),
        _inst(1, [5, 10, 5]),
    ]
    total = np.array([10, 20, 10], dtype=np.int64)
    for inst in insts:
        assert deviance_reduction(total, inst, bracket) <= 1e-12


def test_reduction_matches_recompute_oracle_on_spike():
    H = 2
    bracket = _uniform_bracket(H)
    base = np.array([10, 10, 10], dtype=np.int64)
    spike = np.array([0, 70, 0], dtype=np.int64)
    total = base + spike
    red = deviance_reduction(total, _inst(1, spike), bracket)
    oracle = _deviance_oracle(total, bracket) - _deviance_oracle(base, bracket)
    assert red == pytest.approx(oracle, abs=1e-12)
    assert red > 0


def test_remove_then_readd_restores_deviance_exactly():
    H = 2
    bracket = _uniform_bracket(H)
    total = np.array([13, 29, 7], dtype=np.int64)
    inst = _inst(0, [3, 20, 1])
    before = _deviance_oracle(total, bracket)
    remaining = total - inst.counts
    after = _deviance_oracle(remaining + inst.counts, bracket)
    assert after == before


def test_reduction_refuses_emptying_removal():
    from viewsift.prune import InfeasibleRemovalError

    bracket = _uniform_bracket(2)
    counts = np.array([2, 3, 0], dtype=np.int64)
    with pytest.raises(InfeasibleRemovalError):
        deviance_reduction(counts, _inst(0, counts), bracket)


# ---------------------------------------------------------------------------
# fixtures for heuristics


def _partition(counts_per_instance, H=2, bid="b"):
    return Partition(
        bid, H, [_inst(i, c) for i, c in enumerate(counts_per_instance)]
    )


def _single_removal_reductions(part, bracket):
    insts = {i.instance_id: np.asarray(i.counts) for i in part.instances}
    total = np.sum(list(insts.values()), axis=0)
    d0 = _deviance_oracle(total, bracket)
    out = {}
    for iid, c in insts.items():
        rem = total - c
        out[iid] = d0 - _deviance_oracle(rem, bracket) if rem.sum() > 0 else -np.inf
    return d0, out


def _random_partition(rng, H=2, max_insts=6):
    k = int(rng.integers(2, max_insts + 1))
    counts = []
    for _ in range(k):
        c = rng.integers(0, 25, n_cells(H))
        if c.sum() == 0:
            c[int(rng.integers(0, n_cells(H)))] = 1
        counts.append(c)
    return _partition(counts, H=H)


# ---------------------------------------------------------------------------
# prune_topmost


def test_topmost_prunes_nothing_when_no_reduction_helps():
    H = 2
    bracket = counts_to_distribution(
        np.array([10, 20, 10], dtype=np.int64), H, pseudocount=0.5
    )
    part = _partition([[5, 10, 5], [5, 10, 5]])
    out = prune_topmost(part, bracket)
    assert out.pruned_instances == ()
    assert out.final_deviance_bits == out.original_deviance_bits
    assert out.botted_view_ids == frozenset()


def test_topmost_picks_largest_reduction():
    H = 2
    bracket = _uniform_bracket(H)
    # three instances: a mild spike, a strong spike, near-background
    part = _partition([[0, 12, 0], [0, 0, 40], [7, 7, 7]])
    d0, reds = _single_removal_reductions(part, bracket)
    best = max(reds, key=reds.get)
    out = prune_topmost(part, bracket)
    assert out.pruned_instances == (best,)
    assert out.final_deviance_bits == pytest.approx(d0 - reds[best], abs=1e-12)


def test_topmost_equals_exhaustive_single_removal_on_random_fixtures():
    rng = np.random.default_rng(21)
    for _ in range(60):
        part = _random_partition(rng)
        bracket = _uniform_bracket(2)
        d0, reds = _single_removal_reductions(part, bracket)
        out = prune_topmost(part, bracket)
        best_red = max(reds.values())
        if best_red <= 1e-9:
            assert out.pruned_instances == ()
        else:
            assert reds[out.pruned_instances[0]] == pytest.approx(
                best_red, abs=1e-12
            )


# ---------------------------------------------------------------------------
# prune_iterative


def test_single_instance_is_never_pruned():
    bracket = _uniform_bracket(2)
    part = _partition([[0, 50, 0]])
    for fn in (prune_topmost, prune_iterative, prune_stepwise):
        out = fn(part, bracket)
        assert out.pruned_instances == ()
        assert len(out.kept_instances) == 1


def test_iterative_unlocks_second_prune_in_second_iteration():
    # instance 0 ranks below instance 1 at the start of iteration 1, and by
    # the time the sweep reaches it (instance 1 already gone) its reduction
    # has turned non-positive -- only the iteration-2 re-rank prunes it
    bracket = TriDistribution(2, np.array([3.0, 11.0, 3.0]) / 17.0, smoothed=True)
    counts = [[25, 5, 2], [25, 0, 16], [2, 8, 14], [12, 12, 0]]
    part = _partition(counts)
    out = prune_iterative(part, bracket)
    assert set(out.pruned_instances) == {0, 1}
    assert out.iterations == 2
    remaining = np.array(counts[2]) + np.array(counts[3])
    assert out.final_deviance_bits == pytest.approx(
        _deviance_oracle(remaining, bracket), abs=1e-12
    )
    # full recomputation: each prune actually lowered the deviance
    d_all = _deviance_oracle(np.sum(counts, axis=0), bracket)
    assert out.original_deviance_bits == pytest.approx(d_all, abs=1e-12)
    assert out.final_deviance_bits < out.original_deviance_bits


def test_iterative_never_worse_than_topmost():
    rng = np.random.default_rng(33)
    bracket = _uniform_bracket(2)
    for _ in range(120):
        part = _random_partition(rng)
        it = prune_iterative(part, bracket)
        top = prune_topmost(part, bracket)
        assert it.final_deviance_bits <= top.final_deviance_bits + 1e-12


# ---------------------------------------------------------------------------
# prune_stepwise


def test_stepwise_collapses_to_topmost_with_one_dominant_spike():
    H = 2
    bracket = counts_to_distribution(
        np.array([50, 50, 4], dtype=np.int64), H, pseudocount=0.5
    )
    part = _partition([[30, 30, 0], [0, 0, 90]])
    top = prune_topmost(part, bracket)
    step = prune_stepwise(part, bracket)
    assert top.pruned_instances == step.pruned_instances == (1,)
    assert top.final_deviance_bits == step.final_deviance_bits


def test_stepwise_steps_equals_number_pruned():
    rng = np.random.default_rng(44)
    bracket = _uniform_bracket(2)
    for _ in range(60):
        part = _random_partition(rng)
        out = prune_stepwise(part, bracket)
        assert out.steps == len(out.pruned_instances)


def test_stepwise_never_below_exact_optimum():
    rng = np.random.default_rng(55)
    bracket = _uniform_bracket(2)
    for _ in range(40):
        part = _random_partition(rng)
        _, opt = exact_prune_oracle(part, bracket)
        out = prune_stepwise(part, bracket)
        assert out.final_deviance_bits >= opt - 1e-12


# ---------------------------------------------------------------------------
# exact_prune_oracle


def test_oracle_single_instance_is_forced():
    bracket = _uniform_bracket(2)
    part = _partition([[1, 2, 3]])
    kept, d = exact_prune_oracle(part, bracket)
    assert kept == (0,)
    assert d == pytest.approx(_deviance_oracle(np.array([1, 2, 3]), bracket))


def test_oracle_keeps_only_the_matching_instance():
    H = 2
    bracket = counts_to_distribution(
        np.array([10, 20, 10], dtype=np.int64), H, pseudocount=0.5
    )
    matching = [10, 20, 10]
    spike = [0, 0, 60]
    part = _partition([matching, spike])
    kept, d = exact_prune_oracle(part, bracket)
    assert kept == (0,)
    assert d == pytest.approx(_deviance_oracle(np.array(matching), bracket))


def test_oracle_lower_bounds_every_heuristic():
    rng = np.random.default_rng(66)
    bracket = _uniform_bracket(2)
    for _ in range(40):
        part = _random_partition(rng)
        _, opt = exact_prune_oracle(part, bracket)
        for fn in (prune_topmost, prune_iterative, prune_stepwise):
            assert fn(part, bracket).final_deviance_bits >= opt - 1e-12


def test_oracle_refuses_oversized_partitions():
    bracket = _uniform_bracket(2)
    part = _partition([[1, 1, 1]] * 21)
    with pytest.raises(ValueError):
        exact_prune_oracle(part, bracket)


# ---------------------------------------------------------------------------
# monotonicity (final <= original, always)


def test_all_heuristics_never_increase_deviance():
    rng = np.random.default_rng(77)
    bracket = _uniform_bracket(2)
    for _ in range(60):
        part = _random_partition(rng)
        for fn in (prune_topmost, prune_iterative, prune_stepwise):
            out = fn(part, bracket)
            assert out.final_deviance_bits <= out.original_deviance_bits + 1e-12
