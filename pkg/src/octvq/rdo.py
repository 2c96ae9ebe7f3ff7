"""Lagrangian choice of octree split depth.

Every node is first coded as if it were a leaf (rate and distortion do not
depend on lambda), then a bottom-up dynamic program picks, per node, the
cheaper of coding it here or splitting it, using ``lambda_n = m_n * lambda``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from octvq.errors import CodecError
from octvq.gic import gic_encode
from octvq.leaf import prepare_leaf, reconstruct_leaf, to_depth
from octvq.pointcloud import d1_distortion

# side info per leaf: axis (2) + mode (4) + dummy (1) + dual (1)
LEAF_HEADER_BITS = 8
SPLIT_FLAG_BITS = 1
CHILD_MASK_BITS = 8
# encoder batches have a fixed composition so output never depends on thread count
CHUNK = 256


@dataclass(frozen=True, eq=False)
class LeafCoding:
    """A node coded as a leaf: payload fields plus its rate and distortion."""

    side: int
    axis: int
    mode: int
    dummy: int
    dual: bool  # layout actually coded
    indices: tuple  # per grid level, 1-D int arrays
    rate_bits: int
    distortion: float  # point-weighted: D1 mean times the node's point count


@dataclass(frozen=True)
class NodeCost:
    rate_bits: int
    distortion: float
    cost: float
    decision: str  # "here" | "split"


@dataclass
class RdoResult:
    decisions: dict  # key -> split flag
    cost: float
    rate_bits: int  # split flags + child masks + leaf payloads
    distortion: float  # sum over coded leaves
    node_costs: dict  # key -> NodeCost


def _pick_entry(model, side, dual):
    if dual and model.entry(side, True) is not None:
        return model.entry(side, True)
    return model.entry(side, False)


def _code_chunk(entry, items):
    """items: list of (points, prep). Returns LeafCoding per item."""
    imgs = np.stack([prep.image(entry.dual) for _, prep in items])
    indices, recon = gic_encode(entry, imgs)
    depth = to_depth(recon, entry.side)
    rate = LEAF_HEADER_BITS + entry.index_bits()
    out = []
    for i, (points, prep) in enumerate(items):
        rec = reconstruct_leaf(depth[i], entry.side, prep.axis, prep.mode, entry.dual)
        # weight by point count so children's distortions add up to the parent's scale
        dist = d1_distortion(points, rec) * len(points) if len(rec) else math.inf
        out.append(LeafCoding(entry.side, prep.axis, prep.mode, prep.dummy, entry.dual,
                              tuple(ix[i].copy() for ix in indices), rate, dist))
    return out


def evaluate_nodes(tree, model, cfg, threads=1):
    """Leaf coding of every node; ``None`` marks nodes that must be split."""
    groups = {}
    codings = {}
    for key, node in tree.nodes.items():
        side = tree.side(node.level)
        prep = prepare_leaf(node.points, side, cfg.thickness)
        at_max = node.level == tree.max_level
        entry = _pick_entry(model, side, prep.dual)
        if entry is None:
            if at_max:
                raise CodecError(f"model has no coder for {side}^3 leaves")
            codings[key] = None
            continue
        if not prep.projectable and not at_max:
            codings[key] = None
            continue
        groups.setdefault((entry.side, entry.dual), []).append((key, node.points, prep))
    jobs = []
    for gkey in sorted(groups):
        members = groups[gkey]
        entry = model.entries[gkey]
        for s in range(0, len(members), CHUNK):
            part = members[s:s + CHUNK]
            jobs.append(([k for k, _, _ in part], entry, [(p, pr) for _, p, pr in part]))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda j: _code_chunk(j[1], j[2]), jobs))
    else:
        results = [_code_chunk(entry, items) for _, entry, items in jobs]
    for (keys, _, _), coded in zip(jobs, results):
        codings.update(zip(keys, coded))
    return codings


def leaf_cost(points, side, model, cfg, lam_n):
    """Cost of coding one node's points as a single leaf of the given side."""
    prep = prepare_leaf(points, side, cfg.thickness)
    entry = _pick_entry(model, side, prep.dual)
    if entry is None:
        raise CodecError(f"model has no coder for {side}^3 leaves")
    coding = _code_chunk(entry, [(points, prep)])[0]
    return NodeCost(coding.rate_bits, coding.distortion,
                    coding.distortion + lam_n * coding.rate_bits, "here")


def optimize(tree, codings, cfg, lam):
    """Bottom-up DP over the full tree; ties keep the node as a leaf."""
    best = {}
    decisions = {}
    node_costs = {}
    for level_keys in reversed(tree.levels()):
        for key in level_keys:
            node = tree.nodes[key]
            lam_n = cfg.level_lambda(lam, node.level)
            coding = codings[key]
            if node.level == tree.max_level:
                if coding is None:
                    raise CodecError(f"max-level node {key} has no coding")
                cost = coding.distortion + lam_n * coding.rate_bits
                best[key] = (cost, coding.rate_bits, coding.distortion)
                decisions[key] = False
                node_costs[key] = NodeCost(coding.rate_bits, coding.distortion, cost, "here")
                continue
            here_rate = here_cost = here_dist = math.inf
            if coding is not None:
                here_rate = coding.rate_bits + SPLIT_FLAG_BITS
                here_dist = coding.distortion
                here_cost = here_dist + lam_n * here_rate
            split_rate = SPLIT_FLAG_BITS + CHILD_MASK_BITS
            split_cost = lam_n * split_rate
            split_dist = 0.0
            for c in node.children:
                c_cost, c_rate, c_dist = best[c]
                split_cost += c_cost
                split_rate += c_rate
                split_dist += c_dist
            if here_cost <= split_cost:
                best[key] = (here_cost, here_rate, here_dist)
                decisions[key] = False
                node_costs[key] = NodeCost(coding.rate_bits, here_dist, here_cost, "here")
            else:
                best[key] = (split_cost, split_rate, split_dist)
                decisions[key] = True
                node_costs[key] = NodeCost(
                    coding.rate_bits if coding else 0,
                    coding.distortion if coding else math.inf, split_cost, "split")
    total = [best[r] for r in tree.roots]
    return RdoResult(decisions, sum(t[0] for t in total), sum(t[1] for t in total),
                     sum(t[2] for t in total), node_costs)
