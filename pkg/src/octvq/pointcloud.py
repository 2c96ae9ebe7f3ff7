"""Voxelized point clouds: PLY I/O, voxelization and D1/D2 geometry metrics."""

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from octvq.errors import (PlyFormatError, PlyHeaderError, PlyTruncatedError,
                          CodecError)

_KEY_BITS = 21
_KEY_MASK = (1 << _KEY_BITS) - 1
# below this many candidate pairs a dense distance matrix beats building a tree
_BRUTE_PAIRS = 1 << 15


def _canonical(points):
    """Sorted (x, then y, then z) unique rows as int64."""
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    keys = (pts[:, 0] << (2 * _KEY_BITS)) | (pts[:, 1] << _KEY_BITS) | pts[:, 2]
    keys = np.unique(keys)
    return np.stack([keys >> (2 * _KEY_BITS), (keys >> _KEY_BITS) & _KEY_MASK,
                     keys & _KEY_MASK], axis=1)


def min_bit_depth(points):
    if len(points) == 0:
        return 1
    return max(1, int(np.max(points)).bit_length())


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Set of non-negative integer voxel coordinates in ``[0, 2**bit_depth)``.

    Points are stored deduplicated and in lexicographic order, so two clouds
    with the same point set compare equal regardless of construction order.
    """

    points: np.ndarray
    bit_depth: int

    def __post_init__(self):
        pts = _canonical(self.points)
        if len(pts) and (pts.min() < 0 or pts.max() >= 1 << self.bit_depth):
            raise ValueError(f"coordinates outside [0, 2**{self.bit_depth})")
        if not 1 <= self.bit_depth <= _KEY_BITS:
            raise ValueError(f"bit_depth must be in [1, {_KEY_BITS}]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points, bit_depth=None):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, 3)
        if bit_depth is None:
            bit_depth = min_bit_depth(pts)
        return cls(pts, bit_depth)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.bit_depth == other.bit_depth and np.array_equal(self.points, other.points)

    def __repr__(self):
        return f"PointCloud(n={len(self)}, bit_depth={self.bit_depth})"


# --------------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    # (name, dtype) for scalars, (name, count_dtype, item_dtype) for lists
    props: list


def _parse_header(data):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyHeaderError("missing 'ply' magic or 'end_header'", 0)
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyHeaderError("unterminated end_header line", end)
    fmt = None
    elements = []
    offset = 0
    for raw in data[:end].split(b"\n"):
        line_offset = offset
        offset += len(raw) + 1
        try:
            words = raw.decode("ascii").strip().split()
        except UnicodeDecodeError:
            raise PlyHeaderError("non-ascii header line", line_offset) from None
        if not words or words[0] in ("ply", "comment", "obj_info"):
            continue
        if words[0] == "format":
            if len(words) != 3:
                raise PlyHeaderError("bad format line", line_offset)
            if words[1] not in ("ascii", "binary_little_endian"):
                raise PlyFormatError(f"unsupported format {words[1]!r}", line_offset)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyHeaderError("bad element line", line_offset)
            elements.append(_Element(words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise PlyHeaderError("property before any element", line_offset)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise PlyFormatError("unknown list property type", line_offset)
                elements[-1].props.append((words[4], _PLY_TYPES[words[2]], _PLY_TYPES[words[3]]))
            elif len(words) == 3:
                if words[1] not in _PLY_TYPES:
                    raise PlyFormatError(f"unknown property type {words[1]!r}", line_offset)
                elements[-1].props.append((words[2], _PLY_TYPES[words[1]]))
            else:
                raise PlyHeaderError("bad property line", line_offset)
        else:
            raise PlyHeaderError(f"unexpected header keyword {words[0]!r}", line_offset)
    if fmt is None:
        raise PlyHeaderError("missing format line", 0)
    m = re.search(rb"^comment bit_depth (\d+)\s*$", data[:end], re.M)
    declared = int(m.group(1)) if m else None
    return fmt, elements, nl + 1, declared


def _vertex_columns(elem, offset):
    names = [p[0] for p in elem.props]
    for axis in "xyz":
        if axis not in names:
            raise PlyHeaderError(f"vertex element lacks property {axis!r}", offset)
    return [names.index(a) for a in "xyz"]


def _read_ascii(data, start, elements):
    pos = start
    for elem in elements:
        rows = []
        for _ in range(elem.count):
            while pos < len(data) and data[pos:pos + 1] in (b"\n", b"\r"):
                pos += 1
            if pos >= len(data):
                raise PlyTruncatedError(f"element {elem.name!r} ends early", pos)
            nl = data.find(b"\n", pos)
            nl = len(data) if nl < 0 else nl
            line, line_pos, pos = data[pos:nl], pos, nl + 1
            if elem.name != "vertex":
                continue
            tokens = line.split()
            if len(tokens) < len(elem.props):
                raise PlyTruncatedError("vertex row has too few values", line_pos)
            try:
                rows.append([float(t) for t in tokens[:len(elem.props)]])
            except ValueError:
                raise PlyFormatError("non-numeric vertex value", line_pos) from None
        if elem.name == "vertex":
            return np.asarray(rows, dtype=np.float64).reshape(-1, len(elem.props)), start
    return None, start


def _read_binary(data, start, elements):
    pos = start
    for elem in elements:
        if any(len(p) == 3 for p in elem.props):
            if elem.name == "vertex":
                raise PlyFormatError("list properties on vertex element", pos)
            for _ in range(elem.count):
                for p in elem.props:
                    if len(p) == 2:
                        pos += np.dtype(p[1]).itemsize
                        continue
                    cdt = np.dtype("<" + p[1])
                    if pos + cdt.itemsize > len(data):
                        raise PlyTruncatedError(f"element {elem.name!r} ends early", pos)
                    n = int(np.frombuffer(data, cdt, 1, pos)[0])
                    pos += cdt.itemsize + n * np.dtype(p[2]).itemsize
            continue
        dtype = np.dtype([(f"p{i}", "<" + p[1]) for i, p in enumerate(elem.props)])
        need = dtype.itemsize * elem.count
        if pos + need > len(data):
            raise PlyTruncatedError(
                f"element {elem.name!r} needs {need} bytes, {len(data) - pos} left", pos)
        if elem.name == "vertex":
            arr = np.frombuffer(data, dtype, elem.count, pos)
            return np.stack([arr[f].astype(np.float64) for f in dtype.names], axis=1) \
                if elem.count else np.zeros((0, len(elem.props))), pos
        pos += need
    return None, pos


def read_ply(data):
    """Parse ASCII or binary little-endian PLY bytes into a :class:`PointCloud`.

    Float coordinates are rounded to the nearest integer (ties to even) before
    deduplication. A ``comment bit_depth N`` header line is honoured when it
    covers every coordinate.
    """
    data = bytes(data)
    fmt, elements, start, declared = _parse_header(data)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise PlyHeaderError("no vertex element", 0)
    cols = _vertex_columns(vertex, 0)
    reader = _read_ascii if fmt == "ascii" else _read_binary
    table, _ = reader(data, start, elements)
    xyz = table[:, cols] if len(table) else np.zeros((0, 3))
    if not np.all(np.isfinite(xyz)):
        raise PlyFormatError("non-finite vertex coordinate", start)
    xyz = np.rint(xyz)
    if len(xyz) and xyz.min() < 0:
        raise PlyFormatError("negative vertex coordinate", start)
    if len(xyz) and xyz.max() >= 1 << _KEY_BITS:
        raise PlyFormatError("vertex coordinate too large", start)
    pts = xyz.astype(np.int64)
    depth = min_bit_depth(pts)
    if declared is not None and depth <= declared <= _KEY_BITS:
        depth = declared
    return PointCloud(pts, depth)


def write_ply(pc, format="binary"):
    if format not in ("ascii", "binary"):
        raise ValueError("format must be 'ascii' or 'binary'")
    fmt = "ascii" if format == "ascii" else "binary_little_endian"
    header = (f"ply\nformat {fmt} 1.0\ncomment bit_depth {pc.bit_depth}\n"
              f"element vertex {len(pc)}\nproperty int x\nproperty int y\n"
              f"property int z\nend_header\n").encode("ascii")
    if format == "ascii":
        body = "".join(f"{x} {y} {z}\n" for x, y, z in pc.points.tolist()).encode("ascii")
    else:
        body = pc.points.astype("<i4").tobytes()
    return header + body


def load_ply(path):
    with open(path, "rb") as fh:
        return read_ply(fh.read())


def save_ply(path, pc, format="binary"):
    with open(path, "wb") as fh:
        fh.write(write_ply(pc, format))


# ------------------------------------------------------------ voxelization

def voxelize(pc, target_bits):
    if target_bits < 1:
        raise ValueError("target_bits must be >= 1")
    shift = target_bits - pc.bit_depth
    pts = pc.points << shift if shift >= 0 else pc.points >> -shift
    return PointCloud(pts, target_bits)


# ---------------------------------------------------- nearest neighbours

def _as_array(x):
    return x.points if isinstance(x, PointCloud) else np.asarray(x)


def nearest(ref, query, workers=1):
    """Index into ``ref`` of the nearest neighbour of every query point.

    Exact; among equidistant candidates the smallest ref index wins. Returns
    ``(indices, squared distances)``.
    """
    ref = _as_array(ref)
    query = _as_array(query)
    if len(ref) == 0:
        raise ValueError("empty reference set")
    if len(ref) * len(query) <= _BRUTE_PAIRS:
        d2 = ((query[:, None, :] - ref[None, :, :]) ** 2).sum(-1)
        idx = d2.argmin(axis=1)
        return idx, d2[np.arange(len(query)), idx]
    tree = cKDTree(ref)
    k = min(8, len(ref))
    _, cand = tree.query(query, k=k, workers=workers)
    cand = cand.reshape(len(query), k)
    d2 = ((query[:, None, :] - ref[cand]) ** 2).sum(-1)
    best = d2.min(axis=1)
    tied = d2 == best[:, None]
    idx = np.where(tied, cand, len(ref)).min(axis=1)
    # every returned candidate ties: more equidistant points may lie outside the k
    for row in np.flatnonzero(tied.all(axis=1) & (k < len(ref))):
        r = math.sqrt(float(best[row]))
        hits = np.asarray(tree.query_ball_point(query[row], r * (1 + 1e-9) + 1e-9))
        hd2 = ((ref[hits] - query[row]) ** 2).sum(-1)
        idx[row] = hits[hd2 == best[row]].min()
    return idx, best


def k_nearest(points, k, workers=1):
    """k nearest neighbours (self included) of each point, ties by smallest index."""
    points = _as_array(points)
    n = len(points)
    if k > n:
        raise ValueError(f"k={k} exceeds point count {n}")
    if n * n <= _BRUTE_PAIRS:
        d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    tree = cKDTree(points)
    kk = min(n, k + 8)
    _, cand = tree.query(points, k=kk, workers=workers)
    d2 = ((points[:, None, :] - points[cand]) ** 2).sum(-1)
    order = np.lexsort((cand, d2), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)
    out = cand[:, :k].copy()
    for row in np.flatnonzero((d2[:, k - 1] == d2[:, -1]) & (kk < n)):
        r = math.sqrt(float(d2[row, k - 1]))
        hits = np.asarray(tree.query_ball_point(points[row], r * (1 + 1e-9) + 1e-9))
        hd2 = ((points[hits] - points[row]) ** 2).sum(-1)
        o = np.lexsort((hits, hd2))
        out[row] = hits[o][:k]
    return out


# ----------------------------------------------------------------- metrics

def d1_terms(ref, rec, workers=1):
    """Mean squared nearest-neighbour distance in each direction (ref->rec, rec->ref)."""
    a, b = _as_array(ref), _as_array(rec)
    if len(a) == 0 or len(b) == 0:
        raise CodecError("D1 is undefined for an empty cloud")
    _, fwd = nearest(b, a, workers)
    _, bwd = nearest(a, b, workers)
    return float(np.mean(fwd)), float(np.mean(bwd))


def d1_distortion(ref, rec, workers=1):
    """Symmetric point-to-point distortion: the larger of the two mean squared
    nearest-neighbour distances."""
    return max(d1_terms(ref, rec, workers))


def d2_distortion(ref, rec, ref_normals, workers=1):
    a, b = _as_array(ref), _as_array(rec)
    if len(a) == 0 or len(b) == 0:
        raise CodecError("D2 is undefined for an empty cloud")
    normals = np.asarray(ref_normals, dtype=np.float64)
    j, _ = nearest(b, a, workers)
    fwd = np.einsum("ij,ij->i", (b[j] - a).astype(np.float64), normals) ** 2
    i, _ = nearest(a, b, workers)
    bwd = np.einsum("ij,ij->i", (b - a[i]).astype(np.float64), normals[i]) ** 2
    return max(float(np.mean(fwd)), float(np.mean(bwd)))


def _orthogonal_unit(v):
    axis = int(np.argmin(np.abs(v)))
    e = np.zeros(3)
    e[axis] = 1.0
    n = np.cross(v, e)
    return n / np.linalg.norm(n)


def _sign_normalize(n):
    pick = np.argmax(np.abs(n), axis=-1)
    sign = np.sign(np.take_along_axis(n, pick[..., None], axis=-1))
    return n * np.where(sign == 0, 1.0, sign)


def estimate_normals(points, k=9, workers=1):
    """Unit normal per point from the covariance of its ``k`` nearest neighbours.

    The normal is the eigenvector of the smallest covariance eigenvalue, signed
    so its largest-magnitude component is positive.
    """
    pts = _as_array(points).astype(np.float64)
    if not 3 <= k <= len(pts):
        raise ValueError(f"need 3 <= k <= {len(pts)}, got k={k}")
    nbrs = pts[k_nearest(pts, k, workers)]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0].copy()
    scale = np.maximum(w[:, 2], np.finfo(float).tiny)
    for row in np.flatnonzero(w[:, 1] <= 1e-12 * scale):
        normals[row] = _orthogonal_unit(v[row, :, 2])
    return _sign_normalize(normals)


def geometry_psnr(mse, bit_depth):
    if mse < 0:
        raise ValueError("mse must be non-negative")
    if mse == 0:
        return math.inf
    peak = (1 << bit_depth) - 1
    return 10.0 * math.log10(peak * peak / mse)


CSV_HEADER = "name,d1_mse,d1_psnr,d2_mse,d2_psnr,bpp,points_in,points_out"


@dataclass(frozen=True)
class MetricsReport:
    d1_mse: float
    d2_mse: float
    d1_psnr: float
    d2_psnr: float
    bpp: float
    num_points_in: int
    num_points_out: int

    def csv_row(self, name):
        return (f"{name},{self.d1_mse!r},{self.d1_psnr!r},{self.d2_mse!r},"
                f"{self.d2_psnr!r},{self.bpp!r},{self.num_points_in},{self.num_points_out}")


def evaluate(ref, rec, stream_bits, num_points_in=None, normal_k=9, workers=1):
    """D1/D2/bpp report. ``rec`` is compared at its own bit depth (``ref`` is
    voxelized to match first); bpp divides by ``num_points_in`` (defaults to |ref|)."""
    n_in = len(ref) if num_points_in is None else num_points_in
    cmp_ref = voxelize(ref, rec.bit_depth) if ref.bit_depth != rec.bit_depth else ref
    if len(rec) == 0 or len(cmp_ref) == 0:
        d1 = d2 = math.inf if len(rec) != len(cmp_ref) else 0.0
    else:
        d1 = d1_distortion(cmp_ref, rec, workers)
        normals = estimate_normals(cmp_ref, min(normal_k, len(cmp_ref)), workers) \
            if len(cmp_ref) >= 3 else np.tile([0.0, 0.0, 1.0], (len(cmp_ref), 1))
        d2 = d2_distortion(cmp_ref, rec, normals, workers)
    bd = rec.bit_depth
    return MetricsReport(
        d1_mse=d1, d2_mse=d2,
        d1_psnr=geometry_psnr(d1, bd) if math.isfinite(d1) else -math.inf,
        d2_psnr=geometry_psnr(d2, bd) if math.isfinite(d2) else -math.inf,
        bpp=stream_bits / n_in if n_in else 0.0,
        num_points_in=n_in, num_points_out=len(rec))
