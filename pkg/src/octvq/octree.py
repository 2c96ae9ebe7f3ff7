"""Coarse-to-fine octree over a voxelized cloud.

Nodes are keyed by ``(level, x0, y0, z0)`` where the origin is in global voxel
units and a multiple of the node side ``coarsest_side >> level``. Children are
ordered by Morton index with x as the least significant bit.
"""

from dataclasses import dataclass, field

import numpy as np

from octvq.bitio import BitReader, BitWriter
from octvq.errors import CodecError, CorruptStreamError


@dataclass
class Node:
    level: int
    origin: tuple
    points: np.ndarray  # local coordinates, int64 (n, 3)
    split: bool = None
    children: list = field(default_factory=list)

    @property
    def key(self):
        return (self.level,) + self.origin


def node_side(coarsest_side, level):
    return coarsest_side >> level


def morton_child(origin, child_side):
    x, y, z = (c // child_side & 1 for c in origin)
    return x | y << 1 | z << 2


def coarse_dims_for(bit_depth, coarsest_side):
    n = max(1, -(-(1 << bit_depth) // coarsest_side))
    return (n, n, n)


@dataclass
class Octree:
    coarse_dims: tuple
    coarsest_side: int
    max_level: int
    nodes: dict
    roots: list  # root keys in x-fastest raster order

    def side(self, level):
        return node_side(self.coarsest_side, level)

    def levels(self):
        """Node keys grouped by level, each list in canonical leaf order."""
        out = [[] for _ in range(self.max_level + 1)]

        def walk(key):
            out[key[0]].append(key)
            for c in self.nodes[key].children:
                walk(c)

        for r in self.roots:
            walk(r)
        return out

    def leaves(self):
        """Keys of coded leaves (per split flags) in canonical order."""
        out = []
        stack = list(reversed(self.roots))
        while stack:
            key = stack.pop()
            node = self.nodes[key]
            if node.split is None:
                raise CodecError(f"node {key} has no split decision")
            if node.split:
                stack.extend(reversed(node.children))
            else:
                out.append(key)
        return out

    def with_decisions(self, decisions):
        """Copy with ``split`` taken from ``decisions`` (key -> bool)."""
        nodes = {k: Node(n.level, n.origin, n.points, decisions.get(k, n.split), n.children)
                 for k, n in self.nodes.items()}
        return Octree(self.coarse_dims, self.coarsest_side, self.max_level, nodes, self.roots)


def _raster_index(cell, dims):
    return cell[0] + dims[0] * (cell[1] + dims[1] * cell[2])


def build_octree(pc, coarsest_side=32, max_level=3):
    if coarsest_side & (coarsest_side - 1) or coarsest_side >> max_level < 1:
        raise ValueError("coarsest_side must be a power of two >= 2**max_level")
    dims = coarse_dims_for(pc.bit_depth, coarsest_side)
    pts = np.asarray(pc.points, dtype=np.int64)
    nodes = {}
    for level in range(max_level + 1):
        side = coarsest_side >> level
        cells = pts // side
        ckey = (cells[:, 0] << 42) | (cells[:, 1] << 21) | cells[:, 2]
        order = np.argsort(ckey, kind="stable")
        uniq, starts = np.unique(ckey[order], return_index=True)
        groups = np.split(order, starts[1:]) if len(order) else []
        for k, members in zip(uniq.tolist(), groups):
            cell = (k >> 42, (k >> 21) & 0x1FFFFF, k & 0x1FFFFF)
            origin = tuple(c * side for c in cell)
            node = Node(level, origin, pts[members] - np.asarray(origin),
                        split=level < max_level)
            nodes[node.key] = node
            if level:
                pside = side * 2
                pkey = (level - 1,) + tuple(c // pside * pside for c in origin)
                nodes[pkey].children.append(node.key)
    for node in nodes.values():
        node.children.sort(key=lambda k: morton_child(k[1:], coarsest_side >> k[0]))
    roots = [k for k in nodes if k[0] == 0]
    roots.sort(key=lambda k: _raster_index(tuple(c // coarsest_side for c in k[1:]), dims))
    return Octree(dims, coarsest_side, max_level, nodes, roots)


def structure_bits(tree):
    """Coarse occupancy bitmap, then per non-max-level node in DFS order a
    split flag, followed for split nodes by an 8-bit child occupancy mask."""
    w = BitWriter()
    write_structure(tree, w)
    return [c == "1" for c in w.bitstring()]


def write_structure(tree, writer):
    nx, ny, nz = tree.coarse_dims
    bitmap = np.zeros(nx * ny * nz, dtype=bool)
    for r in tree.roots:
        bitmap[_raster_index(tuple(c // tree.coarsest_side for c in r[1:]), tree.coarse_dims)] = True
    writer.write_bits(bitmap)

    def walk(key):
        node = tree.nodes[key]
        if node.level == tree.max_level:
            return
        if node.split is None:
            raise CodecError(f"node {key} has no split decision")
        writer.write(int(node.split), 1)
        if node.split:
            child_side = tree.side(node.level + 1)
            mask = 0
            for c in node.children:
                mask |= 1 << morton_child(c[1:], child_side)
            writer.write_bits([mask >> i & 1 for i in range(8)])
            for c in node.children:
                walk(c)

    for r in tree.roots:
        walk(r)


def parse_structure(bits, coarse_dims, coarsest_side, max_level):
    """Leaf keys in canonical order (raster roots, Morton DFS)."""
    reader = bits if isinstance(bits, BitReader) else BitReader(
        "".join("1" if b else "0" for b in bits))
    nx, ny, nz = coarse_dims
    total = nx * ny * nz
    if reader.remaining() < total:
        reader.read(total)  # raises truncated
    roots = []
    for idx in range(total):
        if reader.read(1):
            x, rest = idx % nx, idx // nx
            roots.append((0, x * coarsest_side, rest % ny * coarsest_side, rest // ny * coarsest_side))
    leaves = []

    def walk(key):
        level = key[0]
        if level == max_level or not reader.read(1):
            leaves.append(key)
            return
        mask = [reader.read(1) for _ in range(8)]
        if not any(mask):
            raise CorruptStreamError(f"split node {key} has no children")
        child_side = coarsest_side >> (level + 1)
        for i in range(8):
            if mask[i]:
                off = (i & 1, i >> 1 & 1, i >> 2 & 1)
                walk((level + 1,) + tuple(o + d * child_side for o, d in zip(key[1:], off)))

    for r in roots:
        walk(r)
    return leaves
