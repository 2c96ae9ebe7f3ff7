import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octvq.errors import CodecError, PlyFormatError, PlyHeaderError, PlyTruncatedError
from octvq.pointcloud import (PointCloud, d1_distortion, d1_terms, d2_distortion,
                              estimate_normals, evaluate, geometry_psnr, nearest,
                              read_ply, voxelize, write_ply)

from .oracles import brute_d1, brute_d2, brute_nearest, random_cloud


# ------------------------------------------------------------------ PLY

def test_minimal_ascii_ply():
    data = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n" \
           b"property float z\nend_header\n0 0 0\n"
    pc = read_ply(data)
    assert pc.points.tolist() == [[0, 0, 0]]
    assert pc.bit_depth >= 1


def test_duplicates_collapse():
    data = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty int x\nproperty int y\n" \
           b"property int z\nend_header\n1 2 3\n1 2 3\n"
    assert len(read_ply(data)) == 1


def test_float_coordinates_round_half_to_even():
    data = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\n" \
           b"property double z\nend_header\n0.5 1.5 2.49\n3.51 0 0\n"
    assert read_ply(data).points.tolist() == [[0, 2, 2], [4, 0, 0]]


def test_extra_properties_and_elements_are_skipped():
    rng = np.random.default_rng(3)
    xyz = rng.integers(0, 100, (5, 3)).astype("<f4")
    rgb = rng.integers(0, 255, (5, 3)).astype("u1")
    rec = np.empty(5, dtype=[("x", "<f4"), ("r", "u1"), ("y", "<f4"), ("z", "<f4"),
                             ("g", "u1"), ("b", "u1")])
    rec["x"], rec["y"], rec["z"] = xyz.T
    rec["r"], rec["g"], rec["b"] = rgb.T
    header = (b"ply\nformat binary_little_endian 1.0\nelement vertex 5\nproperty float x\n"
              b"property uchar red\nproperty float y\nproperty float z\nproperty uchar green\n"
              b"property uchar blue\nelement face 1\nproperty list uchar int vertex_indices\n"
              b"end_header\n")
    face = bytes([3]) + np.array([0, 1, 2], "<i4").tobytes()
    pc = read_ply(header + rec.tobytes() + face)
    assert pc == PointCloud.from_points(xyz.astype(int), pc.bit_depth)


@pytest.mark.parametrize("fmt", ["ascii", "binary"])
def test_round_trip_random(fmt):
    pc = random_cloud(np.random.default_rng(11), 1000, 10)
    assert read_ply(write_ply(pc, fmt)) == pc


def test_binary_round_trip_100_vertices():
    pc = random_cloud(np.random.default_rng(5), 100, 8)
    assert read_ply(write_ply(pc, "binary")) == pc


def test_empty_cloud_ply():
    pc = PointCloud.from_points(np.zeros((0, 3)), 4)
    data = write_ply(pc, "ascii")
    assert b"element vertex 0" in data
    assert read_ply(data) == pc


def test_header_declares_count():
    pc = PointCloud.from_points([[1, 2, 3]])
    assert b"element vertex 1\n" in write_ply(pc)


@pytest.mark.parametrize("data,error", [
    (b"nope", PlyHeaderError),
    (b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n", PlyFormatError),
    (b"ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nend_header\n1\n", PlyHeaderError),
    (b"ply\nformat ascii 1.0\nelement vertex 2\nproperty int x\nproperty int y\n"
     b"property int z\nend_header\n1 2 3\n", PlyTruncatedError),
    (b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty int x\n"
     b"property int y\nproperty int z\nend_header\n" + bytes(13), PlyTruncatedError),
    (b"ply\nformat ascii 1.0\nelement vertex 1\nproperty blob x\nend_header\n", PlyFormatError),
])
def test_parse_errors_are_distinct_and_carry_offset(data, error):
    with pytest.raises(error) as info:
        read_ply(data)
    assert "byte offset" in str(info.value)
    assert isinstance(info.value.offset, int)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(*[st.integers(0, 1023)] * 3), max_size=40),
       st.sampled_from(["ascii", "binary"]))
def test_ply_round_trip_property(pts, fmt):
    pc = PointCloud.from_points(np.array(pts, dtype=np.int64).reshape(-1, 3), 10)
    assert read_ply(write_ply(pc, fmt)) == pc


# --------------------------------------------------------- voxelization

def test_voxelize_down_halves():
    pc = random_cloud(np.random.default_rng(1), 500, 10)
    out = voxelize(pc, 9)
    assert out.bit_depth == 9
    assert out == PointCloud(pc.points // 2, 9)
    assert out.points.max() < 512


def test_voxelize_identity_and_upscale():
    pc = PointCloud.from_points([[0, 0, 0], [1, 1, 1]], 1)
    assert voxelize(pc, 1) == pc
    assert voxelize(pc, 2).points.tolist() == [[0, 0, 0], [2, 2, 2]]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_voxelize_idempotent(bits, seed):
    pc = random_cloud(np.random.default_rng(seed), 50, 12)
    once = voxelize(pc, bits)
    assert voxelize(once, bits) == once


# ------------------------------------------------------------- metrics

def test_d1_trivial_cases():
    pc = PointCloud.from_points([[0, 0, 0], [4, 5, 6]])
    assert d1_distortion(pc, pc) == 0.0
    a = PointCloud.from_points([[0, 0, 0]], 2)
    b = PointCloud.from_points([[3, 0, 0]], 2)
    assert d1_distortion(a, b) == 9.0


def test_d1_empty_is_domain_error():
    a = PointCloud.from_points([[0, 0, 0]])
    with pytest.raises(CodecError):
        d1_distortion(a, PointCloud.from_points(np.zeros((0, 3)), 1))


@pytest.mark.parametrize("seed", range(5))
def test_d1_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = random_cloud(rng, 50, 5), random_cloud(rng, 50, 5)
    assert d1_distortion(a, b) == pytest.approx(brute_d1(a.points, b.points), abs=0)


def test_nearest_tree_path_matches_scan_with_ties():
    # dense lattice: many exact ties, forces the kd-tree branch
    rng = np.random.default_rng(8)
    ref = random_cloud(rng, 400, 4).points
    query = random_cloud(rng, 300, 4).points
    idx, d2 = nearest(ref, query)
    bi, bd = brute_nearest(ref, query)
    assert np.array_equal(idx, bi) and np.array_equal(d2, bd)


def test_d1_symmetric_and_zero_iff_equal():
    rng = np.random.default_rng(4)
    a, b = random_cloud(rng, 30, 4), random_cloud(rng, 30, 4)
    assert d1_distortion(a, b) == d1_distortion(b, a)
    assert d1_distortion(a, b) > 0


def test_adding_shared_point_never_raises_rec_term():
    rng = np.random.default_rng(9)
    ref, rec = random_cloud(rng, 40, 5), random_cloud(rng, 40, 5)
    before = d1_terms(ref, rec)[1]
    extra = PointCloud(np.vstack([rec.points, ref.points[:1]]), 5)
    assert d1_terms(ref, extra)[1] <= before


def test_normals_exact_planes():
    g = np.stack(np.meshgrid(np.arange(5), np.arange(5), indexing="ij"), -1).reshape(-1, 2)
    z_plane = np.column_stack([g, np.zeros(25)])
    x_plane = np.column_stack([np.full(25, 5), g])
    assert np.allclose(estimate_normals(z_plane, 8), [0, 0, 1])
    assert np.allclose(estimate_normals(x_plane, 8), [1, 0, 0])


def test_normals_noisy_plane_against_eig_oracle():
    rng = np.random.default_rng(42)
    g = np.stack(np.meshgrid(np.arange(20), np.arange(20), indexing="ij"), -1).reshape(-1, 2)
    pts = np.column_stack([g, rng.uniform(-0.1, 0.1, len(g))])
    normals = estimate_normals(pts, 9)
    assert np.abs(normals[:, 2]).mean() > 0.99
    # oracle: brute kNN + general (non-symmetric) eigensolver
    d2 = ((pts[:, None] - pts[None]) ** 2).sum(-1)
    nb = np.argsort(d2, axis=1, kind="stable")[:, :9]
    for i in range(0, len(pts), 37):
        q = pts[nb[i]] - pts[nb[i]].mean(0)
        w, v = np.linalg.eig(q.T @ q / 9)
        n = np.real(v[:, np.argmin(np.real(w))])
        n *= np.sign(n[np.argmax(np.abs(n))])
        assert np.allclose(n, normals[i], atol=1e-8)


def test_normals_degenerate_line_is_deterministic_and_orthogonal():
    line = np.column_stack([np.arange(10), np.zeros(10), np.zeros(10)])
    n = estimate_normals(line, 4)
    assert np.allclose(np.linalg.norm(n, axis=1), 1)
    assert np.allclose(n[:, 0], 0)
    assert np.array_equal(n, estimate_normals(line, 4))


def test_d2_cases():
    pc = PointCloud.from_points([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    assert d2_distortion(pc, pc, np.tile([0, 0, 1.0], (3, 1))) == 0.0
    a = PointCloud.from_points([[0, 0, 0]], 2)
    b = PointCloud.from_points([[3, 0, 0]], 2)
    assert d2_distortion(a, b, [[0, 0, 1.0]]) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_d2_matches_brute_force_and_bounded_by_d1(seed):
    rng = np.random.default_rng(100 + seed)
    a, b = random_cloud(rng, 60, 4), random_cloud(rng, 45, 4)
    normals = rng.normal(size=(len(a), 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    d2 = d2_distortion(a, b, normals)
    assert d2 == pytest.approx(brute_d2(a.points, b.points, normals), rel=1e-12, abs=1e-12)
    assert 0 <= d2 <= d1_distortion(a, b)


def test_psnr():
    assert geometry_psnr(1023.0 ** 2, 10) == 0.0
    assert geometry_psnr(0.0, 10) == math.inf
    assert geometry_psnr(1.0, 10) == pytest.approx(20 * math.log10(1023))
    assert round(geometry_psnr(1.0, 10), 2) == 60.20


def test_evaluate_report_fields():
    ref = random_cloud(np.random.default_rng(2), 200, 6)
    rep = evaluate(ref, ref, stream_bits=400)
    assert rep.d1_mse == 0 and rep.d1_psnr == math.inf
    assert rep.bpp == 400 / len(ref)
    row = rep.csv_row("x").split(",")
    assert len(row) == 8 and row[0] == "x" and row[2] == "inf"
