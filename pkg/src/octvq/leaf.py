"""Per-leaf pipeline shared by training, rate-distortion search and decoding."""

from dataclasses import dataclass

import numpy as np

from octvq.occupancy import fill_depth, reconstruct_pixels, select_mode
from octvq.projection import is_projectable, project, select_axis, unproject


@dataclass(frozen=True, eq=False)
class LeafPrep:
    side: int
    axis: int
    mode: int
    dummy: int
    dual: bool
    projectable: bool
    near: np.ndarray  # filled maps, ready for the image codec
    far: np.ndarray

    def image(self, dual):
        return np.hstack([self.near, self.far]) if dual else self.near


def prepare_leaf(points, side, thickness=1):
    axis = select_axis(points)
    dms = project(points, axis, side)
    mode = select_mode(dms.occupancy)
    near, far, dummy = fill_depth(dms, mode)
    return LeafPrep(side, axis, int(mode), dummy, dms.dual,
                    is_projectable(dms, points, thickness), near, far)


def to_depth(recon, side):
    """Round decoded maps half-up to integers in [-1, side]."""
    return np.clip(np.floor(recon + 0.5), -1, side).astype(np.int64)


def reconstruct_leaf(depth_img, side, axis, mode, dual, origin=(0, 0, 0)):
    near = depth_img[:, :side]
    far = depth_img[:, side:] if dual else near
    dms = reconstruct_pixels(near, far, mode, dual, axis)
    return unproject(dms, origin)
