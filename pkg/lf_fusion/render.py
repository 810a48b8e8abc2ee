# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Disparity fields and backward-warp rendering of a novel light field."""
from typing import Optional, Tuple
from enum import Enum
from logging import getLogger

import attr
import numpy as np
from numpy.typing import ArrayLike

from lf_fusion.errors import PreconditionError, UnsupportedGridError
from lf_fusion.models import (
    PARALLAX_SIGN,
    DisparityField,
    DisparityMap,
    LightField,
    angular_offsets,
)
from lf_fusion.util.image import bilinear_sample
from lf_fusion.util.parallel import parallel_map

logger = getLogger("render")


class FieldMode(Enum):
    """How the central disparity is lifted to every view."""

    CONSTANT_LIFT = "constant"
    FORWARD_REPROJECT = "reproject"


@attr.s(auto_attribs=True, slots=True, frozen=True)
class RenderConfig:
    """Angular grid, disparity scale (pixels per unit label) and mode."""

    grid: Tuple[int, int] = (7, 7)
    disparity_scale: float = 1.0
    mode: FieldMode = FieldMode.CONSTANT_LIFT

    def __attrs_post_init__(self) -> None:
        rows, cols = self.grid
        if rows < 1 or cols < 1 or rows % 2 == 0 or cols % 2 == 0:
            raise UnsupportedGridError(
                f"render grid must be odd, got {rows}x{cols}"
            )


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class RenderedLightField:
    """Rendered SAIs plus (M, N, H, W) masks of in-image samples."""

    light_field: LightField
    masks: np.ndarray


def _fill_holes(
    field: np.ndarray, holes: np.ndarray, du: int, dv: int
) -> np.ndarray:
    """Fill holes from the far side: the smaller of the nearest valid
    values found walking along +v and -v."""
    height, width = field.shape
    ys, xs = np.nonzero(holes)
    scale = max(abs(du), abs(dv))
    step_x, step_y = du / scale, dv / scale
    found = []
    for sign in (1.0, -1.0):
        value = np.full(ys.size, np.inf)
        pending = np.ones(ys.size, dtype=bool)
        for k in range(1, max(height, width) + 1):
            if not pending.any():
                break
            px = np.round(xs + sign * k * step_x).astype(int)
            py = np.round(ys + sign * k * step_y).astype(int)
            inb = (px >= 0) & (px < width) & (py >= 0) & (py < height)
            hit = np.zeros(ys.size, dtype=bool)
            hit[inb] = ~holes[py[inb], px[inb]]
            hit &= pending
            value[hit] = field[py[hit], px[hit]]
            pending &= ~hit
        found.append(value)
    filled = np.minimum(found[0], found[1])
    out = field.copy()
    out[ys, xs] = filled
    return out


def forward_reproject(values: np.ndarray, du: int, dv: int) -> np.ndarray:
    """Splat a central disparity map into the view at offset (du, dv)."""
    if du == 0 and dv == 0:
        return values.copy()
    height, width = values.shape
    ys, xs = np.mgrid[0:height, 0:width]
    tx = np.floor(xs + PARALLAX_SIGN * values * du + 0.5).astype(int)
    ty = np.floor(ys + PARALLAX_SIGN * values * dv + 0.5).astype(int)
    inb = (tx >= 0) & (tx < width) & (ty >= 0) & (ty < height)
    field = np.full((height, width), -np.inf)
    np.maximum.at(field, (ty[inb], tx[inb]), values[inb])
    holes = np.isinf(field)
    if not holes.any():
        return field
    filled = _fill_holes(field, holes, du, dv)
    # lines with no valid splat at all keep the central value
    return np.where(np.isinf(filled), values, filled)


def synthesize_disparity_field(
    disp: DisparityMap, cfg: RenderConfig
) -> DisparityField:
    """Lift a central disparity map to every view of the render grid."""
    values = disp.values * cfg.disparity_scale
    rows, cols = cfg.grid
    if cfg.mode == FieldMode.CONSTANT_LIFT:
        field = np.broadcast_to(values, (rows, cols) + values.shape).copy()
    else:
        field = np.empty((rows, cols) + values.shape)
        for row, col, du, dv in angular_offsets(rows, cols):
            field[row, col] = forward_reproject(values, du, dv)
    return DisparityField(values=field)


def backward_warp_view(
    image: ArrayLike, field_slice: ArrayLike, offset: Tuple[int, int]
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Render the view at angular ``offset`` (du, dv) from the target image.

    Returns the view and a mask that is False where the sample was clamped.
    """
    image_ = np.asarray(image, dtype=np.float64)
    disparity = np.asarray(field_slice, dtype=np.float64)
    if disparity.shape != image_.shape[:2]:
        raise PreconditionError(
            f"field {disparity.shape} does not match image "
            f"{image_.shape[:2]}"
        )
    du, dv = offset
    height, width = disparity.shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return bilinear_sample(
        image_,
        xs - PARALLAX_SIGN * disparity * du,
        ys - PARALLAX_SIGN * disparity * dv,
    )


def render_light_field(
    image: ArrayLike,
    field: DisparityField,
    cfg: Optional[RenderConfig] = None,
) -> RenderedLightField:
    """Backward-warp every SAI; the central one is the image itself."""
    image_ = np.asarray(image, dtype=np.float64)
    if cfg is not None and cfg.grid != (field.rows, field.cols):
        raise PreconditionError(
            f"field grid {field.rows}x{field.cols} does not match "
            f"{cfg.grid[0]}x{cfg.grid[1]}"
        )
    if field.values.shape[2:] != image_.shape[:2]:
        raise PreconditionError("field and image sizes differ")

    def render(cell: Tuple[int, int, int, int]) -> Tuple[np.ndarray, ...]:
        row, col, du, dv = cell
        if du == 0 and dv == 0:
            return image_.copy(), np.ones(image_.shape[:2], dtype=bool)
        return backward_warp_view(image_, field.values[row, col], (du, dv))

    cells = angular_offsets(field.rows, field.cols)
    rendered = parallel_map(render, cells)
    shape = (field.rows, field.cols)
    views = np.stack([v for v, _ in rendered]).reshape(shape + image_.shape)
    masks = np.stack([m for _, m in rendered]).reshape(
        shape + image_.shape[:2]
    )
    logger.info(
        "Rendered %dx%d light field, %.2f%% of samples in image",
        field.rows,
        field.cols,
        100.0 * masks.mean(),
    )
    return RenderedLightField(light_field=LightField(views=views), masks=masks)
