"""Orthographic projection of a leaf voxel onto near/far depth maps.

Maps are indexed ``[v, u]``; for axis X the plane coordinates are (u, v) =
(y, z), for Y (x, z) and for Z (x, y). Depth is the dropped coordinate, i.e.
the distance to the plane at coordinate 0.
"""

from dataclasses import dataclass

import numpy as np

X, Y, Z = 0, 1, 2
EMPTY = -1
_PLANE = {X: (1, 2), Y: (0, 2), Z: (0, 1)}


@dataclass(frozen=True, eq=False)
class DepthMapSet:
    side: int
    axis: int
    occupancy: np.ndarray  # (S, S) bool
    near: np.ndarray  # (S, S) int, EMPTY where unoccupied
    far: np.ndarray
    dual: bool


def _plane_coords(points, axis):
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 3)
    u, v = _PLANE[axis]
    return pts[:, u], pts[:, v], pts[:, axis]


def projection_area(points, axis):
    u, v, _ = _plane_coords(points, axis)
    if len(u) == 0:
        return 0
    return len(np.unique(u * (int(v.max()) + 1) + v))


def select_axis(points):
    """Axis with the largest projected area; ties go to the lower axis."""
    areas = [projection_area(points, a) for a in (X, Y, Z)]
    return int(np.argmax(areas))


def project(points, axis, side):
    u, v, d = _plane_coords(points, axis)
    cell = v * side + u
    near = np.full(side * side, side, dtype=np.int64)
    far = np.full(side * side, EMPTY, dtype=np.int64)
    np.minimum.at(near, cell, d)
    np.maximum.at(far, cell, d)
    occ = far != EMPTY
    near[~occ] = EMPTY
    dual = bool(np.any(far[occ] > near[occ]))
    shape = (side, side)
    return DepthMapSet(side, axis, occ.reshape(shape), near.reshape(shape), far.reshape(shape), dual)


def is_projectable(dms, points, thickness=1):
    """True when every point sits within ``thickness`` of its cell's near or far depth."""
    u, v, d = _plane_coords(points, dms.axis)
    near = dms.near[v, u]
    far = dms.far[v, u]
    ok = ((d >= near) & (d <= near + thickness)) | ((d >= far - thickness) & (d <= far))
    return bool(ok.all())


def surface_points(dms):
    """(u, v, depth) triples for the near and (where different) far surface."""
    v, u = np.nonzero(dms.occupancy)
    near = np.clip(dms.near[v, u], 0, dms.side - 1)
    far = np.clip(dms.far[v, u], 0, dms.side - 1)
    extra = far != near
    return (np.concatenate([u, u[extra]]), np.concatenate([v, v[extra]]),
            np.concatenate([near, far[extra]]))


def unproject(dms, origin=(0, 0, 0)):
    """Points (global coordinates, sorted and unique) represented by ``dms``."""
    u, v, d = surface_points(dms)
    pts = np.empty((len(u), 3), dtype=np.int64)
    pu, pv = _PLANE[dms.axis]
    pts[:, pu] = u
    pts[:, pv] = v
    pts[:, dms.axis] = d
    pts += np.asarray(origin, dtype=np.int64)
    return np.unique(pts, axis=0) if len(pts) else pts
