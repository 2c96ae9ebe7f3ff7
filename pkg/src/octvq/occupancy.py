"""Lossy occupancy coding with nine fixed block masks."""

from enum import IntEnum
from functools import lru_cache

import numpy as np

from octvq.projection import EMPTY, DepthMapSet


class Mode(IntEnum):
    FULL = 0
    LEFT = 1
    RIGHT = 2
    TOP = 3
    BOTTOM = 4
    UPPER_LEFT = 5
    LOWER_RIGHT = 6
    UPPER_RIGHT = 7
    LOWER_LEFT = 8


NUM_MODES = len(Mode)


@lru_cache(maxsize=None)
def _mask(mode, side):
    v, u = np.indices((side, side))
    half = side // 2
    masks = {
        Mode.FULL: np.ones((side, side), dtype=bool),
        Mode.LEFT: u < half,
        Mode.RIGHT: u >= half,
        Mode.TOP: v < half,
        Mode.BOTTOM: v >= half,
        Mode.UPPER_LEFT: u + v <= side - 1,
        Mode.LOWER_RIGHT: u + v >= side - 1,
        Mode.UPPER_RIGHT: u >= v,
        Mode.LOWER_LEFT: u <= v,
    }
    m = masks[Mode(mode)]
    m.setflags(write=False)
    return m


def mode_mask(mode, side):
    """Boolean ``(side, side)`` mask, rows top-down and columns left-right.

    Triangle masks are closed: the shared diagonal belongs to both halves.
    """
    if side < 2 or side % 2:
        raise ValueError(f"mask side must be even and >= 2, got {side}")
    return _mask(int(mode), side)


def select_mode(occ):
    side = occ.shape[0]
    agreement = [int(np.count_nonzero(mode_mask(m, side) == occ)) for m in Mode]
    return Mode(int(np.argmax(agreement)))


def _dummy_value(dms):
    occ = dms.occupancy
    depths = np.concatenate([dms.near[occ], dms.far[occ]])
    return -1 if depths.mean() <= (dms.side - 1) / 2 else dms.side


def fill_depth(dms, mode):
    """Fill a leaf's maps for coding under ``mode``.

    Empty cells inside the mode mask take the half-up rounded mean depth of the
    Chebyshev-nearest occupied cells; empty cells outside take the dummy depth
    (-1 or side). Occupied cells always keep their depth. Returns
    ``(near, far, dummy)``.
    """
    side = dms.side
    mask = mode_mask(mode, side)
    occ = dms.occupancy
    dummy = _dummy_value(dms)
    near = dms.near.copy()
    far = dms.far.copy()
    near[~occ & ~mask] = dummy
    far[~occ & ~mask] = dummy
    ev, eu = np.nonzero(mask & ~occ)
    if len(ev):
        ov, ou = np.nonzero(occ)
        dist = np.maximum(np.abs(ev[:, None] - ov[None, :]), np.abs(eu[:, None] - ou[None, :]))
        sel = dist == dist.min(axis=1, keepdims=True)
        count = sel.sum(axis=1)
        for src, dst in ((dms.near, near), (dms.far, far)):
            total = (sel * src[ov, ou][None, :]).sum(axis=1)
            dst[ev, eu] = (2 * total + count) // (2 * count)
    return near, far, dummy


def reconstruct_pixels(decoded_near, decoded_far, mode, dual, axis):
    """Decoder side: occupancy is exactly the mode mask, depths clamped to the voxel."""
    side = decoded_near.shape[0]
    mask = mode_mask(mode, side)
    near = np.clip(np.asarray(decoded_near, dtype=np.int64), 0, side - 1)
    far = np.clip(np.asarray(decoded_far, dtype=np.int64), 0, side - 1) if dual else near
    near, far = np.minimum(near, far), np.maximum(near, far)
    near = np.where(mask, near, EMPTY)
    far = np.where(mask, far, EMPTY)
    return DepthMapSet(side, axis, mask.copy(), near, far, bool(np.any(far[mask] > near[mask])))
