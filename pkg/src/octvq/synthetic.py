"""Deterministic synthetic surfaces voxelized into a ``2**bits`` cube.

Stand-ins for sampled mesh corpora: surfaces are sampled at sub-voxel spacing
and rounded, which gives watertight one-to-two voxel thick shells.
"""

import numpy as np

from octvq.pointcloud import PointCloud

GOLDEN = (1 + 5 ** 0.5) / 2


def _cloud(xyz, bits):
    pts = np.rint(xyz).astype(np.int64)
    keep = ((pts >= 0) & (pts < 1 << bits)).all(axis=1)
    return PointCloud(pts[keep], bits)


def sphere_shell(radius, center=None, bits=9, density=4.0):
    c = np.full(3, (1 << bits) / 2) if center is None else np.asarray(center, float)
    n = max(16, int(4 * np.pi * radius * radius * density))
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = 2 * np.pi * i / GOLDEN
    xyz = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1) * radius + c
    return _cloud(xyz, bits)


def plane(axis=2, offset=100, lo=0, hi=128, bits=9):
    """Axis-aligned square sheet at ``coordinate[axis] == offset``."""
    a, b = np.meshgrid(np.arange(lo, hi), np.arange(lo, hi), indexing="ij")
    cols = [a.ravel(), b.ravel()]
    cols.insert(axis, np.full(a.size, offset))
    return PointCloud(np.stack(cols, axis=1), bits)


def tilted_plane(slope_x, slope_y, offset, lo=0, hi=256, bits=9, step=1.0):
    g = np.arange(lo, hi, step)
    x, y = np.meshgrid(g, g, indexing="ij")
    z = offset + slope_x * (x - lo) + slope_y * (y - lo)
    return _cloud(np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1), bits)


def cylinder_shell(radius, height, center=None, bits=9, density=4.0):
    c = np.full(3, (1 << bits) / 2) if center is None else np.asarray(center, float)
    n_around = max(8, int(2 * np.pi * radius * density ** 0.5))
    n_up = max(2, int(height * density ** 0.5))
    t = 2 * np.pi * np.arange(n_around) / n_around
    h = np.linspace(-height / 2, height / 2, n_up)
    tt, hh = np.meshgrid(t, h, indexing="ij")
    xyz = np.stack([radius * np.cos(tt.ravel()), radius * np.sin(tt.ravel()), hh.ravel()], axis=1)
    return _cloud(xyz + c, bits)


def torus(major, minor, center=None, bits=9, density=4.0):
    c = np.full(3, (1 << bits) / 2) if center is None else np.asarray(center, float)
    nu = max(8, int(2 * np.pi * (major + minor) * density ** 0.5))
    nv = max(8, int(2 * np.pi * minor * density ** 0.5))
    u, v = np.meshgrid(2 * np.pi * np.arange(nu) / nu, 2 * np.pi * np.arange(nv) / nv,
                       indexing="ij")
    u, v = u.ravel(), v.ravel()
    ring = major + minor * np.cos(v)
    xyz = np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)
    return _cloud(xyz + c, bits)


def wavy_surface(amplitude, period, offset, lo=0, hi=320, bits=9, step=1.0):
    g = np.arange(lo, hi, step)
    x, y = np.meshgrid(g, g, indexing="ij")
    z = offset + amplitude * np.sin(2 * np.pi * x / period) * np.cos(2 * np.pi * y / period)
    return _cloud(np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1), bits)


def training_corpus(bits=9):
    """The bundled training set: a fixed mix of curved and flat surfaces."""
    size = 1 << bits
    half = size / 2
    return [
        sphere_shell(0.25 * size, bits=bits),
        sphere_shell(0.1 * size, center=(half * 0.5, half * 0.6, half * 1.4), bits=bits),
        cylinder_shell(0.2 * size, 0.4 * size, bits=bits),
        torus(0.22 * size, 0.08 * size, bits=bits),
        plane(0, int(0.3 * size), 0, size // 2, bits),
        plane(1, int(0.55 * size) + 3, size // 4, 3 * size // 4, bits),
        plane(2, int(0.8 * size) + 17, size // 2, size, bits),
        tilted_plane(0.3, 0.15, 0.2 * size, hi=size // 2, bits=bits),
        tilted_plane(-0.2, 0.45, 0.6 * size, lo=size // 4, hi=3 * size // 4, bits=bits),
        wavy_surface(0.03 * size, 0.3 * size, 0.5 * size, hi=size // 2, bits=bits),
    ]
