"""Encoder and decoder entry points."""

import math
from dataclasses import dataclass

import numpy as np

from octvq.bitio import BitWriter
from octvq.bitstream import LeafPayload, StreamHeader, read_stream, write_stream
from octvq.gic import gic_decode
from octvq.leaf import reconstruct_leaf, to_depth
from octvq.octree import build_octree, write_structure
from octvq.pointcloud import PointCloud
from octvq.rdo import evaluate_nodes, optimize


@dataclass
class Analysis:
    """λ-independent part of an encode: the octree and every node's leaf coding."""

    cloud: PointCloud
    tree: object
    codings: dict
    config: object
    model: object


@dataclass
class EncodeResult:
    data: bytes
    predicted_bits: int  # from the rate model, padding included
    rdo: object
    leaves_per_level: list
    num_points: int

    @property
    def bits(self):
        return 8 * len(self.data)

    @property
    def bpp(self):
        return self.bits / self.num_points if self.num_points else 0.0


def coded_bit_depth(pc, cfg):
    return max(pc.bit_depth, cfg.coarsest_side.bit_length() - 1)


def analyze(pc, model, cfg, threads=1):
    pc = PointCloud(pc.points, coded_bit_depth(pc, cfg))
    tree = build_octree(pc, cfg.coarsest_side, cfg.max_level)
    return Analysis(pc, tree, evaluate_nodes(tree, model, cfg, threads), cfg, model)


def _header(analysis):
    cfg = analysis.config
    return StreamHeader(
        bit_depth=analysis.cloud.bit_depth, coarsest_side=cfg.coarsest_side,
        max_level=cfg.max_level, coarse_dims=analysis.tree.coarse_dims,
        model_hash=analysis.model.model_hash,
        codebook_sizes=analysis.model.config.codebook_sizes, thickness=cfg.thickness,
        multipliers=cfg.lambda_multipliers)


def encode_analysis(analysis, lam, num_points_in=None):
    cfg = analysis.config
    rdo = optimize(analysis.tree, analysis.codings, cfg, lam)
    tree = analysis.tree.with_decisions(rdo.decisions)
    structure = BitWriter()
    write_structure(tree, structure)
    leaves = tree.leaves()
    payloads = []
    per_level = [0] * (cfg.max_level + 1)
    for key in leaves:
        c = analysis.codings[key]
        per_level[key[0]] += 1
        payloads.append(LeafPayload(key, c.axis, c.mode, c.dummy > 0, c.dual, c.indices))
    header = _header(analysis)
    data = write_stream(header, structure.bitstring(), payloads, analysis.model.entry)
    nx, ny, nz = tree.coarse_dims
    predicted = 8 * header.size + 8 * math.ceil((nx * ny * nz + rdo.rate_bits) / 8)
    n_in = len(analysis.cloud) if num_points_in is None else num_points_in
    return EncodeResult(data, predicted, rdo, per_level, n_in)


def encode(pc, model, cfg, lam, threads=1, num_points_in=None):
    return encode_analysis(analyze(pc, model, cfg, threads), lam, num_points_in)


def decode(data, model, upto=None):
    """Reconstruct the cloud; ``upto`` limits image-codec grid levels (progressive)."""
    header, payloads = read_stream(data, model)
    groups = {}
    for p in payloads:
        groups.setdefault((header.coarsest_side >> p.key[0], p.dual), []).append(p)
    parts = []
    for (side, dual), members in sorted(groups.items()):
        entry = model.entry(side, dual)
        indices = [np.stack([m.indices[i] for m in members]) for i in range(len(entry.levels))]
        depth = to_depth(gic_decode(entry, indices, upto), side)
        for i, p in enumerate(members):
            parts.append(reconstruct_leaf(depth[i], side, p.axis, p.mode, dual, p.key[1:]))
    pts = np.concatenate(parts) if parts else np.zeros((0, 3), dtype=np.int64)
    limit = 1 << header.bit_depth
    pts = pts[(pts < limit).all(axis=1)]
    return PointCloud(pts, header.bit_depth)
