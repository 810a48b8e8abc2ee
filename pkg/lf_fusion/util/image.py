# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Image-related utilities."""
from typing import Dict, List, Optional, Tuple
import re
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from PIL import Image

from lf_fusion.errors import ContainerFormatError
from lf_fusion.models import LightField
from lf_fusion.util.text import view_file_name

# Samples this far outside the image still count as inside
BOUNDS_TOLERANCE = 1e-6


def load_image(path: Path) -> np.ndarray:
    """Load a PNG as an (H, W, 3) float64 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            data = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as e:
        raise ContainerFormatError(f"cannot read image {path}: {e}") from e
    return data / 255.0


def save_image(path: Path, image: ArrayLike) -> None:
    """Save an (H, W, 3) or (H, W) array in [0, 1] as an 8-bit PNG."""
    data = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    pixels = np.round(data * 255.0).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PNG")


def load_mask(path: Path) -> np.ndarray:
    """Load a PNG mask as a boolean array (nonzero is True)."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) > 0
    except OSError as e:
        raise ContainerFormatError(f"cannot read mask {path}: {e}") from e


def save_mask(path: Path, mask: ArrayLike) -> None:
    """Save a boolean mask as an 8-bit PNG."""
    pixels = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path, format="PNG")


def bilinear_sample(
    image: np.ndarray, xs: ArrayLike, ys: ArrayLike
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample ``image`` (H, W) or (H, W, C) at sub-pixel positions.

    Positions are clamped to the image; the returned mask is False where a
    position lay outside it. Integer positions reproduce pixels exactly.
    """
    xs_ = np.asarray(xs, dtype=np.float64)
    ys_ = np.asarray(ys, dtype=np.float64)
    height, width = image.shape[:2]
    valid = (
        (xs_ >= -BOUNDS_TOLERANCE)
        & (xs_ <= width - 1 + BOUNDS_TOLERANCE)
        & (ys_ >= -BOUNDS_TOLERANCE)
        & (ys_ <= height - 1 + BOUNDS_TOLERANCE)
    )
    x0, x1, fx = _bracket(xs_, width)
    y0, y1, fy = _bracket(ys_, height)
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy, valid


def bilinear_gather(
    volume: np.ndarray, planes: np.ndarray, xs: np.ndarray, ys: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample a (K, H, W) volume at sub-pixel positions, reading plane
    ``planes[i]`` for position i. Bounds handling matches
    `bilinear_sample`.
    """
    height, width = volume.shape[1:]
    valid = (
        (xs >= -BOUNDS_TOLERANCE)
        & (xs <= width - 1 + BOUNDS_TOLERANCE)
        & (ys >= -BOUNDS_TOLERANCE)
        & (ys <= height - 1 + BOUNDS_TOLERANCE)
    )
    x0, x1, fx = _bracket(xs, width)
    y0, y1, fy = _bracket(ys, height)
    top = volume[planes, y0, x0] * (1.0 - fx) + volume[planes, y0, x1] * fx
    bottom = (
        volume[planes, y1, x0] * (1.0 - fx) + volume[planes, y1, x1] * fx
    )
    return top * (1.0 - fy) + bottom * fy, valid


def _bracket(
    coords: np.ndarray, size: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    clamped = np.clip(coords, 0.0, size - 1)
    if size == 1:
        zero = np.zeros(coords.shape, dtype=np.intp)
        return zero, zero, np.zeros(coords.shape)
    low = np.minimum(np.floor(clamped).astype(np.intp), size - 2)
    return low, low + 1, clamped - low


def tile_views(views: List[np.ndarray], columns: int) -> Optional[Image.Image]:
    """Tile equally sized RGB arrays into one contact sheet, row-major."""
    if not views:
        return None
    height, width = views[0].shape[:2]
    rows = -(-len(views) // columns)
    dst = Image.new("RGB", (columns * width, rows * height))
    for i, view in enumerate(views):
        pixels = np.round(np.clip(view, 0.0, 1.0) * 255.0).astype(np.uint8)
        dst.paste(
            Image.fromarray(pixels),
            ((i % columns) * width, (i // columns) * height),
        )
    return dst


_VIEW_NAME = re.compile(r"^r(\d+)_c(\d+)\.png$")


def read_light_field(directory: Path) -> LightField:
    """Read SAIs named r{row}_c{col}.png into a light field."""
    root = Path(directory)
    if not root.is_dir():
        raise ContainerFormatError(f"{root} is not a light field directory")
    found: Dict[Tuple[int, int], Path] = {}
    for path in root.iterdir():
        match = _VIEW_NAME.match(path.name)
        if match:
            found[(int(match.group(1)), int(match.group(2)))] = path
    if not found:
        raise ContainerFormatError(f"{root} contains no SAIs")
    rows = max(r for r, _ in found) + 1
    cols = max(c for _, c in found) + 1
    if len(found) != rows * cols:
        raise ContainerFormatError(
            f"{root}: incomplete {rows}x{cols} grid ({len(found)} SAIs)"
        )
    views = [
        [load_image(found[(row, col)]) for col in range(cols)]
        for row in range(rows)
    ]
    shapes = {view.shape for line in views for view in line}
    if len(shapes) != 1:
        raise ContainerFormatError(f"{root}: SAIs differ in size")
    return LightField(views=np.array(views))


def write_light_field(
    directory: Path,
    light_field: LightField,
    masks: Optional[np.ndarray] = None,
) -> None:
    """Write SAIs, and optionally (M, N, H, W) validity masks, as PNGs."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    if masks is not None:
        (root / "masks").mkdir(exist_ok=True)
    for row in range(light_field.rows):
        for col in range(light_field.cols):
            name = view_file_name(row, col)
            save_image(root / name, light_field.views[row, col])
            if masks is not None:
                save_mask(root / "masks" / name, masks[row, col])


def read_masks(directory: Path, rows: int, cols: int) -> Optional[np.ndarray]:
    """Validity masks written next to a light field, if present."""
    root = Path(directory) / "masks"
    if not root.is_dir():
        return None
    return np.array(
        [
            [
                load_mask(root / view_file_name(row, col))
                for col in range(cols)
            ]
            for row in range(rows)
        ]
    )
