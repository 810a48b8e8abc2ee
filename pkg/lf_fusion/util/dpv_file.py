# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""The DPV1 binary container for probability volumes."""
from pathlib import Path

import numpy as np

from lf_fusion.errors import ContainerFormatError, InvalidVolumeError
from lf_fusion.models import Dpv, LabelUnit

MAGIC = b"DPV1"
_HEADER = np.dtype([("height", "<u4"), ("width", "<u4"), ("planes", "<u4")])


def dumps_dpv(dpv: Dpv) -> bytes:
    """Encode a volume; labels and probabilities are stored as float32."""
    header = np.array(
        [(dpv.height, dpv.width, dpv.n_planes)], dtype=_HEADER
    ).tobytes()
    return b"".join(
        [
            MAGIC,
            header,
            bytes([dpv.label_unit.value]),
            dpv.labels.astype("<f4").tobytes(),
            np.ascontiguousarray(dpv.probs).astype("<f4").tobytes(),
        ]
    )


def loads_dpv(data: bytes, source: str = "<bytes>") -> Dpv:
    """Decode a DPV1 container."""
    if data[:4] != MAGIC:
        raise ContainerFormatError(f"{source}: missing DPV1 magic")
    offset = 4 + _HEADER.itemsize
    if len(data) < offset + 1:
        raise ContainerFormatError(f"{source}: truncated header")
    header = np.frombuffer(data[4:offset], dtype=_HEADER)[0]
    height, width, planes = (int(header[n]) for n in _HEADER.names)
    try:
        unit = LabelUnit(data[offset])
    except ValueError as e:
        raise ContainerFormatError(
            f"{source}: unknown unit tag {data[offset]}"
        ) from e
    offset += 1
    expected = offset + 4 * planes * (1 + height * width)
    if len(data) != expected:
        raise ContainerFormatError(
            f"{source}: expected {expected} bytes, found {len(data)}"
        )
    labels = np.frombuffer(data, dtype="<f4", count=planes, offset=offset)
    probs = np.frombuffer(
        data,
        dtype="<f4",
        count=planes * height * width,
        offset=offset + 4 * planes,
    ).reshape(planes, height, width)
    try:
        return Dpv.build(labels, probs, unit)
    except InvalidVolumeError as e:
        raise ContainerFormatError(f"{source}: {e}") from e


def write_dpv(path: Path, dpv: Dpv) -> None:
    """Write a volume to ``path``."""
    Path(path).write_bytes(dumps_dpv(dpv))


def read_dpv(path: Path) -> Dpv:
    """Read a volume from ``path``."""
    return loads_dpv(Path(path).read_bytes(), str(path))
