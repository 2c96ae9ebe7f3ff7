"""Multi-resolution VQ image codec for depth maps.

An ``S x S`` (single) or ``S x 2S`` (near|far) map is decimated with a Lanczos-3
filter down to a 4-row floor. The floor is coded as content, every finer grid
as the residual against the upsampled reconstruction of the grid below. Each
grid level owns one Saab transform and one codebook over 4x4 patches.

All batch operations go through stacked ``matmul`` so the result for one map
does not depend on which other maps share the batch.
"""

import hashlib
import io
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from octvq.config import CodecConfig, dump_config, parse_config
from octvq.errors import (ConfigError, CorruptStreamError, ModelFileError,
                          TrainingError)

PATCH = 4
DIM = PATCH * PATCH
LANCZOS_A = 3

# ------------------------------------------------------------------ Lanczos


def lanczos3(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < LANCZOS_A, np.sinc(x) * np.sinc(x / LANCZOS_A), 0.0)


def _weights_matrix(n_out, n_in, centers, scale):
    """Row i: normalized weights over input pixels for an output centred at
    ``centers[i]`` (input pixel units), kernel stretched by ``scale``; indices
    past the border are clamped onto the edge pixel."""
    m = np.zeros((n_out, n_in))
    reach = int(np.ceil(LANCZOS_A * scale))
    for i, c in enumerate(centers):
        lo = int(np.floor(c)) - reach
        for k in range(lo, lo + 2 * reach + 2):
            w = float(lanczos3((k - c) / scale))
            if w:
                m[i, min(max(k, 0), n_in - 1)] += w
        m[i] /= m[i].sum()
    return m


@lru_cache(maxsize=None)
def down_matrix(n):
    m = _weights_matrix(n // 2, n, [2 * j + 0.5 for j in range(n // 2)], 2.0)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def up_matrix(n):
    m = _weights_matrix(2 * n, n, [(i + 0.5) / 2 - 0.5 for i in range(2 * n)], 1.0)
    m.setflags(write=False)
    return m


def _separable(img, rows, cols):
    img = np.asarray(img, dtype=np.float64)
    return np.matmul(np.matmul(rows, img), cols.T)


def lanczos_downsample(img):
    h, w = img.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"downsample needs even dimensions, got {h}x{w}")
    if h // 2 < PATCH or w // 2 < PATCH:
        raise ValueError(f"pyramid floor: {h}x{w} cannot be halved below {PATCH}")
    return _separable(img, down_matrix(h), down_matrix(w))


def lanczos_upsample(img):
    h, w = img.shape[-2:]
    return _separable(img, up_matrix(h), up_matrix(w))


# --------------------------------------------------------------------- Saab


@dataclass(frozen=True, eq=False)
class SaabTransform:
    kernels: np.ndarray  # (d, d); column k is kernel k, column 0 is DC
    eigenvalues: np.ndarray  # (d,)

    @property
    def dim(self):
        return self.kernels.shape[0]


def saab_forward(t, patches):
    p = np.asarray(patches, dtype=np.float64)
    return np.matmul(p[..., None, :], t.kernels)[..., 0, :]


def saab_inverse(t, coeffs):
    c = np.asarray(coeffs, dtype=np.float64)
    return np.matmul(c[..., None, :], t.kernels.T)[..., 0, :]


def _sign_fix(vectors):
    """Flip columns so each one's largest-magnitude entry is positive."""
    pick = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pick, np.arange(vectors.shape[1])])
    return vectors * np.where(signs == 0, 1.0, signs)


@lru_cache(maxsize=None)
def _ac_basis(d):
    """Orthonormal basis of the complement of the constant vector."""
    seed = np.eye(d)
    seed[:, 0] = 1.0
    q, _ = np.linalg.qr(seed)
    basis = q[:, 1:]
    basis.setflags(write=False)
    return basis


def fit_saab(patches):
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise TrainingError("Saab fitting needs at least 2 patches")
    d = x.shape[1]
    dc = np.full(d, 1.0 / np.sqrt(d))
    dc_coef = x @ dc
    ac = x - dc_coef[:, None] * dc
    q = _ac_basis(d)
    cov = np.cov(ac, rowvar=False)
    w, v = np.linalg.eigh(q.T @ cov @ q)
    order = np.argsort(w, kind="stable")[::-1]
    w = np.clip(w[order], 0.0, None)
    kernels = np.column_stack([dc, _sign_fix(q @ v[:, order])])
    eig = np.concatenate([[np.var(dc_coef, ddof=1)], w])
    return SaabTransform(kernels, eig)


# ----------------------------------------------------------------------- VQ


@dataclass(frozen=True, eq=False)
class Codebook:
    codewords: np.ndarray  # (size, dim)

    @property
    def size(self):
        return len(self.codewords)

    @property
    def dim(self):
        return self.codewords.shape[1]

    @property
    def bits(self):
        return self.size.bit_length() - 1


def _sq_dists(x, c):
    return (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]


def train_codebook(vectors, size, seed=0, max_iter=100, tol=1e-4):
    """k-means with D^2 seeding; empty clusters move to the worst-fit point."""
    x = np.asarray(vectors, dtype=np.float64)
    n = len(x)
    if n < size:
        raise TrainingError(f"codebook of size {size} needs >= {size} vectors, got {n}")
    rng = np.random.default_rng(seed)
    centers = np.empty((size, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = ((x - x[first]) ** 2).sum(1)
    for k in range(1, size):
        total = d2.sum()
        pick = int(np.argmax(d2)) if total <= 0 else int(rng.choice(n, p=d2 / total))
        centers[k] = x[pick]
        d2 = np.minimum(d2, ((x - x[pick]) ** 2).sum(1))
    prev = np.inf
    for _ in range(max_iter):
        dist = _sq_dists(x, centers)
        assign = dist.argmin(1)
        best = np.maximum(dist[np.arange(n), assign], 0.0)
        inertia = best.sum()
        counts = np.bincount(assign, minlength=size)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if len(empty):
            far = np.argsort(-best, kind="stable")[:len(empty)]
            centers[empty] = x[far]
        if inertia == 0 or (np.isfinite(prev) and (prev - inertia) < tol * prev and not len(empty)):
            break
        prev = inertia
    return Codebook(centers)


def vq_encode(cb, vectors, chunk=2048):
    """Index of the nearest codeword (exact squared error, ties to the lowest index)."""
    x = np.asarray(vectors, dtype=np.float64).reshape(-1, cb.dim)
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), chunk):
        part = x[s:s + chunk]
        out[s:s + chunk] = ((part[:, None, :] - cb.codewords[None]) ** 2).sum(-1).argmin(1)
    return out


def vq_decode(cb, indices):
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= cb.size):
        raise CorruptStreamError(f"VQ index out of range for codebook of size {cb.size}")
    return cb.codewords[idx]


# ------------------------------------------------------------- GIC units


@dataclass(frozen=True, eq=False)
class GicLevel:
    saab: SaabTransform
    codebook: Codebook


@dataclass(frozen=True, eq=False)
class GicEntry:
    """Coder for one leaf size and layout; ``levels[0]`` is the 4-row floor."""

    side: int
    dual: bool
    levels: tuple

    def shape(self, level=None):
        level = len(self.levels) - 1 if level is None else level
        h = PATCH << level
        return (h, 2 * h if self.dual else h)

    def patches_per_level(self):
        return [(h // PATCH) * (w // PATCH) for h, w in map(self.shape, range(len(self.levels)))]

    def index_bits(self):
        """Payload bits of one coded map: each patch index costs log2(codebook size)."""
        return sum(n * lv.codebook.bits for n, lv in zip(self.patches_per_level(), self.levels))


def to_patches(img):
    n, h, w = img.shape
    p = img.reshape(n, h // PATCH, PATCH, w // PATCH, PATCH).transpose(0, 1, 3, 2, 4)
    return p.reshape(n, -1, DIM)


def from_patches(patches, shape):
    h, w = shape
    n = patches.shape[0]
    p = patches.reshape(n, h // PATCH, w // PATCH, PATCH, PATCH).transpose(0, 1, 3, 2, 4)
    return p.reshape(n, h, w)


def build_pyramid(imgs, levels):
    pyr = [np.asarray(imgs, dtype=np.float64)]
    for _ in range(levels - 1):
        pyr.append(lanczos_downsample(pyr[-1]))
    return pyr[::-1]


def _code_level(level, target, pred):
    """Quantize ``target - pred`` at one grid; returns (indices, reconstruction)."""
    shape = target.shape[-2:]
    coeffs = saab_forward(level.saab, to_patches(target - pred))
    n, p, _ = coeffs.shape
    idx = vq_encode(level.codebook, coeffs.reshape(-1, DIM)).reshape(n, p)
    return idx, pred + _decode_level(level, idx, shape)


def _decode_level(level, idx, shape):
    coeffs = vq_decode(level.codebook, idx)
    return from_patches(saab_inverse(level.saab, coeffs), shape)


def gic_encode(entry, imgs):
    """Closed-loop encode of a batch ``(n, h, w)``.

    Returns ``(indices, recon)``: one ``(n, patches)`` index array per level and
    the float reconstruction the decoder will reproduce.
    """
    imgs = np.asarray(imgs, dtype=np.float64)
    if imgs.ndim == 2:
        imgs = imgs[None]
    if imgs.shape[1:] != entry.shape():
        raise ConfigError(f"map shape {imgs.shape[1:]} does not match model {entry.shape()}")
    pyr = build_pyramid(imgs, len(entry.levels))
    indices = []
    recon = np.zeros_like(pyr[0])
    for lvl, target in zip(entry.levels, pyr):
        pred = lanczos_upsample(recon) if indices else recon
        idx, recon = _code_level(lvl, target, pred)
        indices.append(idx)
    return indices, recon


def gic_decode(entry, indices, upto=None):
    """Float reconstruction from per-level index arrays.

    With ``upto`` set, levels above it are skipped and the last decoded grid is
    only interpolated up to full size (progressive decoding).
    """
    counts = entry.patches_per_level()
    if len(indices) != len(entry.levels):
        raise CorruptStreamError("index list count does not match model levels")
    last = len(entry.levels) - 1 if upto is None else min(upto, len(entry.levels) - 1)
    recon = None
    for lvl_no, (lvl, idx) in enumerate(zip(entry.levels, indices)):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim == 1:
            idx = idx[None]
        if idx.shape[1] != counts[lvl_no]:
            raise CorruptStreamError(f"level {lvl_no}: expected {counts[lvl_no]} indices")
        if recon is None:
            recon = np.zeros((idx.shape[0],) + entry.shape(0))
        else:
            recon = lanczos_upsample(recon)
        if lvl_no <= last:
            recon = recon + _decode_level(lvl, idx, entry.shape(lvl_no))
    return recon


# --------------------------------------------------------------- the model


@dataclass(frozen=True, eq=False)
class GicModel:
    config: CodecConfig
    entries: dict  # (side, dual) -> GicEntry

    def entry(self, side, dual):
        return self.entries.get((side, bool(dual)))

    def parameter_count(self):
        return sum(lv.codebook.size * lv.codebook.dim + lv.saab.kernels.size
                   for e in self.entries.values() for lv in e.levels)

    def to_bytes(self):
        return serialize_model(self)

    @cached_property
    def model_hash(self):
        return model_hash_of(self.to_bytes())


MODEL_MAGIC = b"GICM"
MODEL_VERSION = 1


def model_hash_of(data):
    return struct.unpack("<Q", data[-8:])[0]


def serialize_model(model):
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<B", MODEL_VERSION))
    cfg = dump_config(model.config).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<H", len(model.entries)))
    for side, dual in sorted(model.entries):
        entry = model.entries[(side, dual)]
        buf.write(struct.pack("<HBB", side, int(dual), len(entry.levels)))
        for lv in entry.levels:
            buf.write(struct.pack("<H", lv.saab.dim))
            buf.write(lv.saab.kernels.astype("<f8").tobytes())
            buf.write(lv.saab.eigenvalues.astype("<f8").tobytes())
            buf.write(struct.pack("<I", lv.codebook.size))
            buf.write(lv.codebook.codewords.astype("<f8").tobytes())
    body = buf.getvalue()
    digest = hashlib.blake2b(body, digest_size=8).digest()
    return body + digest


def deserialize_model(data):
    data = bytes(data)
    if len(data) < 13 or data[:4] != MODEL_MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    if hashlib.blake2b(data[:-8], digest_size=8).digest() != data[-8:]:
        raise ModelFileError("model hash does not match contents")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data) - 8:
            raise ModelFileError("model file truncated")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    def take_array(count, shape):
        nonlocal pos
        size = 8 * count
        if pos + size > len(data) - 8:
            raise ModelFileError("model file truncated")
        arr = np.frombuffer(data, "<f8", count, pos).astype(np.float64).reshape(shape)
        pos += size
        return arr

    (version,) = take("<B")
    if version != MODEL_VERSION:
        raise ModelFileError(f"unsupported model version {version}")
    (cfg_len,) = take("<I")
    if pos + cfg_len > len(data) - 8:
        raise ModelFileError("model file truncated")
    config = parse_config(data[pos:pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    (n_entries,) = take("<H")
    entries = {}
    for _ in range(n_entries):
        side, dual, n_levels = take("<HBB")
        levels = []
        for _ in range(n_levels):
            (dim,) = take("<H")
            kernels = take_array(dim * dim, (dim, dim))
            eig = take_array(dim, (dim,))
            (size,) = take("<I")
            codewords = take_array(size * dim, (size, dim))
            levels.append(GicLevel(SaabTransform(kernels, eig), Codebook(codewords)))
        entries[(side, bool(dual))] = GicEntry(side, bool(dual), tuple(levels))
    if pos != len(data) - 8:
        raise ModelFileError("trailing bytes in model file")
    return GicModel(config, entries)


def save_model(path, model):
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())


# ----------------------------------------------------------------- training


def train_entry(imgs, side, dual, cfg, seed):
    """Fit Saab + codebook level by level, coarse to fine, on ``imgs (n, h, w)``.

    Residuals for level ``l`` are taken against reconstructions produced by
    the already-trained levels ``< l``.
    """
    n_levels = cfg.pyramid_levels(side)
    pyr = build_pyramid(imgs, n_levels)
    rng = np.random.default_rng(seed)
    levels = []
    recon = np.zeros_like(pyr[0])
    for lvl_no, target in enumerate(pyr):
        pred = lanczos_upsample(recon) if levels else recon
        patches = to_patches(target - pred).reshape(-1, DIM)
        size = cfg.codebook_sizes[lvl_no]
        where = f"side {side} {'dual' if dual else 'single'} level {lvl_no}"
        if len(patches) < max(size, 2):
            raise TrainingError(
                f"{where}: {len(patches)} training patches, need >= {max(size, 2)}")
        saab = fit_saab(patches)
        coeffs = saab_forward(saab, patches)
        if len(coeffs) > cfg.max_train_vectors:
            pick = np.sort(rng.choice(len(coeffs), cfg.max_train_vectors, replace=False))
            sample = coeffs[pick]
        else:
            sample = coeffs
        if size == 1:
            # a zero-bit level cannot adapt per map; keep it a pure interpolation step
            codebook = Codebook(np.zeros((1, DIM)))
        else:
            codebook = train_codebook(sample, size, seed=int(rng.integers(1 << 31)),
                                      max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol)
        level = GicLevel(saab, codebook)
        levels.append(level)
        _, recon = _code_level(level, target, pred)
    return GicEntry(side, dual, tuple(levels))


def train_from_images(images, cfg):
    """``images``: mapping ``(side, dual) -> list of filled maps``."""
    entries = {}
    for n, (side, dual) in enumerate(sorted(images)):
        imgs = np.asarray(images[(side, dual)], dtype=np.float64)
        if len(imgs) == 0:
            continue
        seed = cfg.seed * 1000003 + n
        if len(imgs) > cfg.max_train_leaves:
            rng = np.random.default_rng(seed)
            imgs = imgs[np.sort(rng.choice(len(imgs), cfg.max_train_leaves, replace=False))]
        entries[(side, dual)] = train_entry(imgs, side, dual, cfg, seed)
    model = GicModel(cfg, entries)
    if model.parameter_count() > cfg.max_parameters:
        raise TrainingError(
            f"model has {model.parameter_count()} parameters, budget {cfg.max_parameters}")
    return model


def harvest_images(clouds, cfg):
    """Filled depth maps of every codable octree node of every cloud."""
    from octvq.leaf import prepare_leaf
    from octvq.octree import build_octree
    from octvq.pointcloud import voxelize

    images = {}
    for pc in clouds:
        if pc.bit_depth != cfg.target_bits:
            pc = voxelize(pc, cfg.target_bits)
        tree = build_octree(pc, cfg.coarsest_side, cfg.max_level)
        for level_keys in tree.levels():
            for key in level_keys:
                node = tree.nodes[key]
                side = tree.side(node.level)
                prep = prepare_leaf(node.points, side, cfg.thickness)
                if not prep.projectable and node.level < cfg.max_level:
                    continue
                images.setdefault((side, prep.dual), []).append(prep.image(prep.dual))
    return images


def train_model(clouds, cfg=None):
    cfg = cfg or CodecConfig()
    clouds = list(clouds)
    if not clouds or all(len(pc) == 0 for pc in clouds):
        raise TrainingError("no training data")
    return train_from_images(harvest_images(clouds, cfg), cfg)
