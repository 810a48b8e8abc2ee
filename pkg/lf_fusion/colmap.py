# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""COLMAP text sparse models: parsing, writing and anchor extraction."""
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
import math
from logging import getLogger
from pathlib import Path

import attr
import numpy as np
from scipy.spatial.transform import Rotation

from lf_fusion.core import anchor_depth
from lf_fusion.errors import (
    BehindCameraError,
    EmptyAnchorError,
    InsufficientAnchorError,
    ModelConsistencyError,
    ModelIOError,
    ParameterError,
    ParseError,
    UnsupportedModelError,
)
from lf_fusion.models import AnchorObservation, AnchorSet, CameraModel

logger = getLogger("colmap")

# Parameter names per supported camera model
CAMERA_MODELS: Dict[str, Tuple[str, ...]] = {
    "SIMPLE_PINHOLE": ("f", "cx", "cy"),
    "PINHOLE": ("fx", "fy", "cx", "cy"),
}
QUATERNION_TOLERANCE = 1e-6
IMAGE_HEADER_TOKENS = 10


@attr.s(auto_attribs=True, slots=True, frozen=True)
class ColmapCamera:
    """One line of cameras.txt."""

    camera_id: int
    model: str
    width: int
    height: int
    params: Tuple[float, ...]

    @property
    def focal(self) -> Tuple[float, float]:
        """(fx, fy)."""
        if self.model == "SIMPLE_PINHOLE":
            return self.params[0], self.params[0]
        return self.params[0], self.params[1]

    @property
    def principal_point(self) -> Tuple[float, float]:
        """(cx, cy)."""
        return self.params[-2], self.params[-1]


@attr.s(auto_attribs=True, slots=True, frozen=True)
class ColmapImage:
    """Two lines of images.txt."""

    image_id: int
    qvec: Tuple[float, float, float, float]
    tvec: Tuple[float, float, float]
    camera_id: int
    name: str
    observations: Tuple[Tuple[float, float, int], ...] = ()

    @property
    def rotation(self) -> np.ndarray:
        """World-to-camera rotation of the (w, x, y, z) quaternion."""
        qw, qx, qy, qz = self.qvec
        return Rotation.from_quat([qx, qy, qz, qw]).as_matrix()


@attr.s(auto_attribs=True, slots=True, frozen=True)
class ColmapPoint:
    """One line of points3D.txt."""

    point_id: int
    xyz: Tuple[float, float, float]
    rgb: Tuple[int, int, int]
    error: float
    track: Tuple[Tuple[int, int], ...] = ()


@attr.s(auto_attribs=True, slots=True, frozen=True)
class SparseModel:
    """A parsed sparse reconstruction."""

    cameras: Dict[int, ColmapCamera]
    images: Dict[int, ColmapImage]
    points3d: Dict[int, ColmapPoint]

    def image_named(self, name: str) -> ColmapImage:
        """Look an image up by name."""
        for image in self.images.values():
            if image.name == name:
                return image
        raise ModelConsistencyError(f"no image named {name!r} in model")

    def view_camera(self, name: str) -> CameraModel:
        """Intrinsics and pose of the image called ``name``."""
        image = self.image_named(name)
        camera = self.cameras[image.camera_id]
        fx, fy = camera.focal
        cx, cy = camera.principal_point
        return CameraModel(
            fx=fx,
            fy=fy,
            cx=cx,
            cy=cy,
            rotation=image.rotation,
            tau=np.array(image.tvec, dtype=np.float64),
            width=camera.width,
            height=camera.height,
        )


@attr.s(auto_attribs=True, slots=True, frozen=True)
class DepthRangeConfig:
    """Percentile rule for per-view depth ranges."""

    lo_pct: float = 0.01
    hi_pct: float = 0.99
    margin: float = 1.2


def rotation_to_qvec(
    rotation: np.ndarray,
) -> Tuple[float, float, float, float]:
    """(w, x, y, z) quaternion of a rotation matrix, with w >= 0."""
    qx, qy, qz, qw = Rotation.from_matrix(np.array(rotation)).as_quat()
    if qw < 0:
        qw, qx, qy, qz = -qw, -qx, -qy, -qz
    return float(qw), float(qx), float(qy), float(qz)


# === Parsing ===
def _data_lines(path: Path) -> Iterator[Tuple[int, List[str]]]:
    """Yield (line number, tokens) of non-comment, non-blank lines."""
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except FileNotFoundError as e:
        raise ModelIOError(f"missing sparse model file {path}") from e
    except OSError as e:
        raise ModelIOError(f"cannot read {path}: {e}") from e
    for number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield number, stripped.split()


def _parse_camera(path: Path, number: int, tokens: List[str]) -> ColmapCamera:
    if len(tokens) < 4:
        raise ParseError(str(path), number, "camera line too short")
    model = tokens[1]
    if model not in CAMERA_MODELS:
        raise UnsupportedModelError(
            f"{path}:{number}: camera model {model} is not supported "
            f"(only {', '.join(CAMERA_MODELS)})"
        )
    expected = len(CAMERA_MODELS[model])
    if len(tokens) != 4 + expected:
        raise ParseError(
            str(path), number, f"{model} takes {expected} parameters"
        )
    try:
        return ColmapCamera(
            camera_id=int(tokens[0]),
            model=model,
            width=int(tokens[2]),
            height=int(tokens[3]),
            params=tuple(float(t) for t in tokens[4:]),
        )
    except ValueError as e:
        raise ParseError(str(path), number, str(e)) from e


def _parse_image_header(
    path: Path, number: int, tokens: List[str]
) -> ColmapImage:
    try:
        values = [float(t) for t in tokens[1:8]]
        return ColmapImage(
            image_id=int(tokens[0]),
            qvec=(values[0], values[1], values[2], values[3]),
            tvec=(values[4], values[5], values[6]),
            camera_id=int(tokens[8]),
            name=tokens[9],
        )
    except ValueError as e:
        raise ParseError(str(path), number, str(e)) from e


def _parse_observations(
    path: Path, number: int, tokens: List[str]
) -> Tuple[Tuple[float, float, int], ...]:
    try:
        return tuple(
            (float(tokens[i]), float(tokens[i + 1]), int(tokens[i + 2]))
            for i in range(0, len(tokens), 3)
        )
    except ValueError as e:
        raise ParseError(str(path), number, str(e)) from e


def _parse_images(path: Path) -> Dict[int, ColmapImage]:
    images: Dict[int, ColmapImage] = {}
    pending: Optional[ColmapImage] = None
    for number, tokens in _data_lines(path):
        if len(tokens) == IMAGE_HEADER_TOKENS:
            if pending is not None:
                images[pending.image_id] = pending
            pending = _parse_image_header(path, number, tokens)
        elif len(tokens) % 3 == 0 and pending is not None:
            points = _parse_observations(path, number, tokens)
            images[pending.image_id] = attr.evolve(
                pending, observations=points
            )
            pending = None
        else:
            raise ParseError(
                str(path),
                number,
                f"expected an image header ({IMAGE_HEADER_TOKENS} tokens) "
                f"or a POINTS2D line, got {len(tokens)} tokens",
            )
    if pending is not None:
        images[pending.image_id] = pending
    return images


def _parse_point(path: Path, number: int, tokens: List[str]) -> ColmapPoint:
    if len(tokens) < 8 or (len(tokens) - 8) % 2:
        raise ParseError(str(path), number, "malformed 3D point line")
    try:
        track = tuple(
            (int(tokens[i]), int(tokens[i + 1]))
            for i in range(8, len(tokens), 2)
        )
        return ColmapPoint(
            point_id=int(tokens[0]),
            xyz=(float(tokens[1]), float(tokens[2]), float(tokens[3])),
            rgb=(int(tokens[4]), int(tokens[5]), int(tokens[6])),
            error=float(tokens[7]),
            track=track,
        )
    except ValueError as e:
        raise ParseError(str(path), number, str(e)) from e


def _check_consistency(model: SparseModel) -> None:
    for image in model.images.values():
        if image.camera_id not in model.cameras:
            raise ModelConsistencyError(
                f"image {image.image_id} uses unknown camera "
                f"{image.camera_id}"
            )
        norm = math.sqrt(sum(q * q for q in image.qvec))
        if abs(norm - 1.0) > QUATERNION_TOLERANCE:
            raise ModelConsistencyError(
                f"image {image.image_id} quaternion has norm {norm}"
            )
        for _, _, point_id in image.observations:
            if point_id != -1 and point_id not in model.points3d:
                raise ModelConsistencyError(
                    f"image {image.image_id} observes unknown point "
                    f"{point_id}"
                )
    for point in model.points3d.values():
        for image_id, _ in point.track:
            if image_id not in model.images:
                raise ModelConsistencyError(
                    f"point {point.point_id} tracked in unknown image "
                    f"{image_id}"
                )


def parse_sparse_model(dir_path: Path) -> SparseModel:
    """Parse cameras.txt, images.txt and points3D.txt from a directory."""
    root = Path(dir_path)
    cameras_path = root / "cameras.txt"
    cameras = {}
    for number, tokens in _data_lines(cameras_path):
        camera = _parse_camera(cameras_path, number, tokens)
        cameras[camera.camera_id] = camera
    images = _parse_images(root / "images.txt")
    points_path = root / "points3D.txt"
    points = {}
    for number, tokens in _data_lines(points_path):
        point = _parse_point(points_path, number, tokens)
        points[point.point_id] = point
    model = SparseModel(cameras=cameras, images=images, points3d=points)
    _check_consistency(model)
    logger.info(
        "Parsed %s: %d cameras, %d images, %d points",
        root,
        len(cameras),
        len(images),
        len(points),
    )
    return model


# === Writing ===
def _fmt(value: float) -> str:
    return repr(float(value))


def write_sparse_model(model: SparseModel, dir_path: Path) -> None:
    """Write a model as COLMAP text; floats round-trip exactly."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    camera_lines = [
        "# Camera list with one line of data per camera:",
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
        f"# Number of cameras: {len(model.cameras)}",
    ]
    for camera_id in sorted(model.cameras):
        camera = model.cameras[camera_id]
        camera_lines.append(
            " ".join(
                [str(camera_id), camera.model]
                + [str(camera.width), str(camera.height)]
                + [_fmt(v) for v in camera.params]
            )
        )
    image_lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
        f"# Number of images: {len(model.images)}",
    ]
    for image_id in sorted(model.images):
        image = model.images[image_id]
        image_lines.append(
            " ".join(
                [str(image_id)]
                + [_fmt(v) for v in image.qvec + image.tvec]
                + [str(image.camera_id), image.name]
            )
        )
        image_lines.append(
            " ".join(
                f"{_fmt(x)} {_fmt(y)} {point_id}"
                for x, y, point_id in image.observations
            )
        )
    point_lines = [
        "# 3D point list with one line of data per point:",
        "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, "
        "TRACK[] as (IMAGE_ID, POINT2D_IDX)",
        f"# Number of points: {len(model.points3d)}",
    ]
    for point_id in sorted(model.points3d):
        point = model.points3d[point_id]
        point_lines.append(
            " ".join(
                [str(point_id)]
                + [_fmt(v) for v in point.xyz]
                + [str(c) for c in point.rgb]
                + [_fmt(point.error)]
                + [f"{i} {j}" for i, j in point.track]
            )
        )
    for name, lines in (
        ("cameras.txt", camera_lines),
        ("images.txt", image_lines),
        ("points3D.txt", point_lines),
    ):
        (root / name).write_text("\n".join(lines) + "\n", encoding="utf-8")


# === Anchors ===
def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile of already sorted values."""
    n = len(sorted_values)
    rank = math.ceil(pct * n - 1e-9)
    return sorted_values[min(max(rank, 1), n) - 1]


def _depth_range(
    depths: Sequence[float], cfg: DepthRangeConfig
) -> Tuple[float, float]:
    ordered = sorted(depths)
    low = nearest_rank(ordered, cfg.lo_pct) / cfg.margin
    high = nearest_rank(ordered, cfg.hi_pct) * cfg.margin
    if not 0 < low < high:
        raise ParameterError(f"degenerate depth range ({low}, {high})")
    return low, high


def _check_range_config(cfg: DepthRangeConfig) -> None:
    if not 0 < cfg.lo_pct <= cfg.hi_pct <= 1:
        raise ParameterError(
            f"need 0 < lo_pct <= hi_pct <= 1, got {cfg.lo_pct}, {cfg.hi_pct}"
        )
    if cfg.margin < 1:
        raise ParameterError(f"margin must be >= 1, got {cfg.margin}")


def compute_depth_range(
    anchors: AnchorSet,
    view_id: str,
    lo_pct: float = 0.01,
    hi_pct: float = 0.99,
    margin: float = 1.2,
) -> Tuple[float, float]:
    """Trusted depth interval of a view from its anchor depths."""
    cfg = DepthRangeConfig(lo_pct=lo_pct, hi_pct=hi_pct, margin=margin)
    _check_range_config(cfg)
    depths = [obs.z for obs in anchors.for_view(view_id)]
    if len(depths) < 2:
        raise InsufficientAnchorError(
            f"view {view_id} has {len(depths)} anchors, need at least 2"
        )
    return _depth_range(depths, cfg)


def global_depth_range(
    anchors: AnchorSet, views: Optional[Sequence[str]] = None
) -> Tuple[float, float]:
    """Union of the per-view depth ranges."""
    names = list(anchors.depth_range) if views is None else list(views)
    ranges = [
        anchors.depth_range[v] for v in names if v in anchors.depth_range
    ]
    if not ranges:
        raise InsufficientAnchorError("no view has a depth range")
    return min(r[0] for r in ranges), max(r[1] for r in ranges)


def build_anchor_set(
    model: SparseModel,
    view_ids: Sequence[str],
    depth_cfg: Optional[DepthRangeConfig] = None,
) -> AnchorSet:
    """Project every tracked point into the requested views."""
    cfg = depth_cfg or DepthRangeConfig()
    _check_range_config(cfg)
    points = {
        pid: np.array(p.xyz, dtype=np.float64)
        for pid, p in sorted(model.points3d.items())
    }
    observations: Dict[str, List[AnchorObservation]] = {}
    depth_range: Dict[str, Tuple[float, float]] = {}
    dropped_behind: Dict[str, int] = {}
    dropped_outside: Dict[str, int] = {}
    for view in view_ids:
        image = model.image_named(view)
        camera = model.view_camera(view)
        behind = outside = 0
        found: List[AnchorObservation] = []
        for pid, point in sorted(model.points3d.items()):
            tracked_in = {image_id for image_id, _ in point.track}
            if image.image_id not in tracked_in:
                continue
            try:
                (x, y), z = anchor_depth(camera, points[pid])
            except BehindCameraError:
                behind += 1
                continue
            if not (
                0 <= x <= camera.width - 1 and 0 <= y <= camera.height - 1
            ):
                outside += 1
                continue
            found.append(AnchorObservation(point_id=pid, x=x, y=y, z=z))
        if behind:
            logger.warning(
                "%s: dropped %d anchors behind camera", view, behind
            )
        if not found:
            raise EmptyAnchorError(f"no anchors survive for view {view}")
        observations[view] = found
        dropped_behind[view] = behind
        dropped_outside[view] = outside
        if len(found) >= 2:
            depth_range[view] = _depth_range([o.z for o in found], cfg)
        logger.info(
            "%s: %d anchors (%d behind camera, %d outside image)",
            view,
            len(found),
            behind,
            outside,
        )
    return AnchorSet(
        points=points,
        observations=observations,
        depth_range=depth_range,
        dropped_behind=dropped_behind,
        dropped_outside=dropped_outside,
    )
