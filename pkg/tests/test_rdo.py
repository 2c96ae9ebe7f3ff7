"""Split-depth optimization against exhaustive pruning enumeration."""

import math

import numpy as np
import pytest

from octvq.config import CodecConfig
from octvq.errors import CodecError
from octvq.octree import build_octree, structure_bits
from octvq.pointcloud import PointCloud, d1_distortion
from octvq.rdo import (CHILD_MASK_BITS, LEAF_HEADER_BITS, SPLIT_FLAG_BITS, LeafCoding,
                       evaluate_nodes, leaf_cost, optimize)
from octvq.leaf import prepare_leaf, reconstruct_leaf, to_depth
from octvq.gic import gic_encode

from .oracles import all_prunings


def _small_tree(rng, max_nodes=9):
    """A random tree of at most ``max_nodes`` nodes and 2-3 levels."""
    while True:
        max_level = int(rng.integers(1, 3))
        side = 4 << max_level
        n = int(rng.integers(1, 8))
        pts = rng.integers(0, side, (n, 3))
        tree = build_octree(PointCloud(pts, side.bit_length() - 1), side, max_level)
        if len(tree.nodes) <= max_nodes:
            return tree


def _fake_codings(tree, rng):
    out = {}
    for key in tree.nodes:
        if key[0] < tree.max_level and rng.random() < 0.2:
            out[key] = None  # unprojectable
        else:
            out[key] = LeafCoding(tree.side(key[0]), 0, 0, -1, False, (), int(rng.integers(8, 200)),
                                  float(rng.uniform(0, 50)))
    return out


def _pruning_cost(tree, leaves, codings, cfg, lam):
    """Cost of one pruning computed from scratch: leaves plus structure overhead."""
    leaf_set = set(leaves)
    cost = rate = dist = 0.0
    for key in tree.nodes:
        lam_n = cfg.level_lambda(lam, key[0])
        if key in leaf_set:
            c = codings[key]
            if c is None:
                return math.inf, 0, 0
            bits = c.rate_bits + (SPLIT_FLAG_BITS if key[0] < tree.max_level else 0)
            cost += c.distortion + lam_n * bits
            rate += bits
            dist += c.distortion
        elif any(k[0] < key[0] and _is_ancestor(k, key, tree) for k in leaf_set):
            continue  # below a leaf
        else:
            bits = SPLIT_FLAG_BITS + CHILD_MASK_BITS
            cost += lam_n * bits
            rate += bits
    return cost, rate, dist


def _is_ancestor(a, b, tree):
    side = tree.side(a[0])
    return all(a[i] <= b[i] < a[i] + side for i in (1, 2, 3))


@pytest.mark.parametrize("seed", range(120))
def test_dp_matches_exhaustive_enumeration(seed):
    rng = np.random.default_rng(seed)
    tree = _small_tree(rng)
    cfg = CodecConfig(coarsest_side=tree.coarsest_side, max_level=tree.max_level,
                      lambda_multipliers=(8.0, 4.6, 2.5, 1.0)[-(tree.max_level + 1):])
    codings = _fake_codings(tree, rng)
    lam = float(rng.choice([0.0, 0.05, 0.5, 2.0, 20.0]))
    res = optimize(tree, codings, cfg, lam)
    total_best, total_rate = 0.0, 0
    chosen = set(tree.with_decisions(res.decisions).leaves())
    for root in tree.roots:
        options = [(_pruning_cost(tree, p, codings, cfg, lam), len(p), p)
                   for p in all_prunings(tree, root)]
        best = min(o[0][0] for o in options)
        total_best += best
        # ties go to the pruning the DP produces, which keeps nodes as leaves
        winners = [o for o in options if o[0][0] <= best + 1e-9]
        mine = [o for o in winners if set(o[2]) <= chosen]
        assert mine, "DP pruning is not among the optimal ones"
        total_rate += mine[0][0][1]
    assert res.cost == pytest.approx(total_best, rel=1e-12, abs=1e-9)
    assert res.rate_bits == total_rate


def test_lambda_zero_splits_only_when_strictly_better():
    tree = build_octree(PointCloud.from_points([[0, 0, 0], [5, 5, 5]], 3), 8, 1)
    root = tree.roots[0]
    cfg = CodecConfig(coarsest_side=8, max_level=1, lambda_multipliers=(2.0, 1.0))

    def coding(d):
        return LeafCoding(4, 0, 0, -1, False, (), 50, d)

    codings = {k: coding(1.0) for k in tree.nodes}
    codings[root] = coding(2.0)
    assert optimize(tree, codings, cfg, 0.0).decisions[root] is False  # tie keeps leaf
    codings[root] = coding(2.5)
    assert optimize(tree, codings, cfg, 0.0).decisions[root] is True


def test_huge_lambda_minimizes_rate():
    rng = np.random.default_rng(4)
    for _ in range(20):
        tree = _small_tree(rng)
        cfg = CodecConfig(coarsest_side=tree.coarsest_side, max_level=tree.max_level,
                          lambda_multipliers=(8.0, 4.6, 2.5, 1.0)[-(tree.max_level + 1):])
        codings = _fake_codings(tree, rng)
        res = optimize(tree, codings, cfg, 1e6)
        # the weighted rate is minimal over all prunings
        best = sum(min(_pruning_cost(tree, p, codings, cfg, 1e6)[0]
                       for p in all_prunings(tree, r)) for r in tree.roots)
        assert res.cost == pytest.approx(best, rel=1e-12)


def test_missing_max_level_coding_is_an_error():
    tree = build_octree(PointCloud.from_points([[0, 0, 0]], 3), 8, 1)
    codings = {k: None for k in tree.nodes}
    cfg = CodecConfig(coarsest_side=8, max_level=1, lambda_multipliers=(2.0, 1.0))
    with pytest.raises(CodecError):
        optimize(tree, codings, cfg, 1.0)


# ------------------------------------------------ real leaf costs

def test_leaf_cost_matches_standalone_pipeline(default_model):
    cfg = CodecConfig()
    rng = np.random.default_rng(0)
    for side in (4, 8, 16, 32):
        z = rng.integers(0, side, 1)[0]
        g = np.stack(np.meshgrid(np.arange(side), np.arange(side), indexing="ij"), -1).reshape(-1, 2)
        pts = np.column_stack([g, np.clip(z + rng.integers(-1, 2, len(g)), 0, side - 1)])
        pts = PointCloud(pts, 9).points
        cost = leaf_cost(pts, side, default_model, cfg, 1.0)
        prep = prepare_leaf(pts, side, 1)
        entry = default_model.entry(side, prep.dual) or default_model.entry(side, False)
        _, rec = gic_encode(entry, prep.image(entry.dual)[None])
        out = reconstruct_leaf(to_depth(rec, side)[0], side, prep.axis, prep.mode, entry.dual)
        expect = d1_distortion(pts, out) * len(pts)
        assert cost.distortion == expect
        assert cost.rate_bits == LEAF_HEADER_BITS + entry.index_bits()
        assert cost.cost == expect + cost.rate_bits


def test_single_point_leaf(default_model):
    cost = leaf_cost(np.array([[1, 2, 3]]), 4, default_model, CodecConfig(), 1.0)
    assert cost.rate_bits == LEAF_HEADER_BITS + default_model.entry(4, False).index_bits()
    assert cost.distortion >= 0


def test_unprojectable_nodes_are_forced_to_split(default_model):
    three = [[x, y, z] for x in range(16) for y in range(16) for z in (0, 4, 8)]
    pc = PointCloud.from_points(three, 9)
    cfg = CodecConfig()
    tree = build_octree(pc, 32, 3)
    codings = evaluate_nodes(tree, default_model, cfg)
    assert codings[tree.roots[0]] is None
    res = optimize(tree, codings, cfg, 1e6)
    assert res.decisions[tree.roots[0]] is True


def test_rate_model_counts_structure_bits(default_model):
    from octvq.synthetic import sphere_shell
    pc = sphere_shell(20)
    cfg = CodecConfig()
    tree = build_octree(pc, 32, 3)
    codings = evaluate_nodes(tree, default_model, cfg)
    for lam in (0.1, 10.0):
        res = optimize(tree, codings, cfg, lam)
        pruned = tree.with_decisions(res.decisions)
        payload = sum(codings[k].rate_bits for k in pruned.leaves())
        bitmap = int(np.prod(tree.coarse_dims))
        assert res.rate_bits + bitmap == payload + len(structure_bits(pruned))
