# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Portable float map reading and writing."""
from typing import BinaryIO
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from lf_fusion.errors import ContainerFormatError


def _header_line(f: BinaryIO, path: Path) -> str:
    line = f.readline()
    if not line:
        raise ContainerFormatError(f"{path}: truncated PFM header")
    return line.decode("ascii", errors="replace").strip()


def read_pfm(path: Path) -> np.ndarray:
    """Read a PFM as (H, W) or (H, W, 3) float64, top row first."""
    with open(path, "rb") as f:
        kind = _header_line(f, path)
        if kind not in ("Pf", "PF"):
            raise ContainerFormatError(f"{path}: not a PFM file ({kind!r})")
        try:
            width, height = (int(v) for v in _header_line(f, path).split())
            scale = float(_header_line(f, path))
        except ValueError as e:
            raise ContainerFormatError(f"{path}: bad PFM header") from e
        channels = 3 if kind == "PF" else 1
        dtype = np.dtype("<f4" if scale < 0 else ">f4")
        count = width * height * channels
        data = np.frombuffer(f.read(count * 4), dtype=dtype)
    if data.size != count:
        raise ContainerFormatError(
            f"{path}: expected {count} samples, found {data.size}"
        )
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_pfm(path: Path, values: ArrayLike) -> None:
    """Write a grayscale (H, W) map as little-endian PFM, rows bottom-up."""
    data = np.asarray(values)
    if data.ndim != 2:
        raise ContainerFormatError(
            f"only grayscale maps are written, got shape {data.shape}"
        )
    height, width = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(data).astype("<f4").tobytes())
