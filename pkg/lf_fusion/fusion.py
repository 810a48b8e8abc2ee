# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Homography warping of rescaled volumes into a target view and fusion."""
from typing import List, Optional, Sequence, Tuple
import itertools
from logging import getLogger

import attr
import numpy as np
from numpy.typing import ArrayLike

from lf_fusion.core import normalize_probs
from lf_fusion.errors import (
    CameraError,
    FrameError,
    FusionError,
    ParameterError,
)
from lf_fusion.models import CameraModel, Dpv, LabelUnit, frozen_array
from lf_fusion.util.image import bilinear_gather
from lf_fusion.util.parallel import parallel_map

logger = getLogger("fusion")

DEFAULT_SIGMA_DIR = 0.2


@attr.s(auto_attribs=True, slots=True, frozen=True)
class FusionConfig:
    """Fusion parameters; ``sigma_pos`` None means the camera spread."""

    n_planes: int = 100
    sigma_pos: Optional[float] = None
    sigma_dir: float = DEFAULT_SIGMA_DIR
    renormalize_per_bin: bool = False

    def __attrs_post_init__(self) -> None:
        if self.n_planes < 2:
            raise ParameterError("fusion needs at least 2 planes")
        if self.sigma_pos is not None and self.sigma_pos <= 0:
            raise ParameterError("sigma_pos must be > 0")
        if self.sigma_dir <= 0:
            raise ParameterError("sigma_dir must be > 0")


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class FusionWeights:
    """Per-source position and direction weights."""

    w_pos: np.ndarray = attr.ib(converter=frozen_array)
    w_dir: np.ndarray = attr.ib(converter=frozen_array)
    sigma_pos: float
    sigma_dir: float

    def __attrs_post_init__(self) -> None:
        for name, w in (("w_pos", self.w_pos), ("w_dir", self.w_dir)):
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ParameterError(f"{name} must be a distribution")

    @property
    def combined(self) -> np.ndarray:
        """w_pos * w_dir per source."""
        return self.w_pos * self.w_dir


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class WarpedVolume:
    """A source volume resampled onto the target planes."""

    labels: np.ndarray = attr.ib(converter=frozen_array)
    probs: np.ndarray = attr.ib(converter=frozen_array)
    coverage: np.ndarray

    @property
    def coverage_fraction(self) -> np.ndarray:
        """Covered fraction of target pixels, per plane."""
        return self.coverage.reshape(self.coverage.shape[0], -1).mean(axis=1)


@attr.s(auto_attribs=True, slots=True, frozen=True)
class RayStats:
    """How many sources cover the (plane, pixel) bins of a fused volume."""

    min_rays: int
    mean_rays: float
    max_rays: int
    zero_fraction: float

    @classmethod
    def of(cls, n_rays: np.ndarray) -> "RayStats":
        return cls(
            min_rays=int(n_rays.min()),
            mean_rays=float(n_rays.mean()),
            max_rays=int(n_rays.max()),
            zero_fraction=float(np.mean(n_rays == 0)),
        )


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class FusionResult:
    """The fused volume plus the pre-normalization diagnostics."""

    volume: Dpv
    raw: np.ndarray
    n_rays: np.ndarray
    zero_mass: int

    @property
    def ray_stats(self) -> RayStats:
        return RayStats.of(self.n_rays)


def plane_induced_homography(
    src: CameraModel, tgt: CameraModel, normal: ArrayLike, offset: float
) -> np.ndarray:
    """
    Homography taking target pixels to source pixels through the world
    plane ``normal . X = offset``.
    """
    n = np.asarray(normal, dtype=np.float64)
    distance = offset - n @ tgt.center
    if distance == 0:
        raise ParameterError("plane passes through the target camera")
    try:
        k_tgt_inv = np.linalg.inv(tgt.intrinsics)
    except np.linalg.LinAlgError as e:
        raise CameraError("target intrinsics are singular") from e
    baseline = src.center - tgt.center
    middle = np.eye(3) - np.outer(baseline, n) / distance
    return (
        src.intrinsics @ src.rotation @ middle @ tgt.rotation.T @ k_tgt_inv
    )


def plane_homography(
    src: CameraModel, tgt: CameraModel, depth: float
) -> np.ndarray:
    """Homography induced by the target's fronto-parallel plane at depth."""
    if depth <= 0:
        raise ParameterError(f"plane depth must be > 0, got {depth}")
    axis = tgt.principal_axis
    return plane_induced_homography(
        src, tgt, axis, depth + axis @ tgt.center
    )


def target_labels(volumes: Sequence[Dpv], n_planes: int) -> np.ndarray:
    """Planes uniform in inverse depth spanning every source volume."""
    if not volumes:
        raise FusionError("no volumes to fuse")
    for dpv in volumes:
        if dpv.label_unit != LabelUnit.INVERSE_DEPTH:
            raise FrameError(
                f"fusion needs inverse-depth volumes, got "
                f"{dpv.label_unit.name}"
            )
    low = min(float(dpv.labels.min()) for dpv in volumes)
    high = max(float(dpv.labels.max()) for dpv in volumes)
    return np.linspace(low, high, n_planes)


def _nearest_bins(
    labels: np.ndarray, query: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Index of the nearest label and whether the query is within reach."""
    order = np.argsort(labels)
    ordered = labels[order]
    pos = np.clip(np.searchsorted(ordered, query), 1, max(ordered.size - 1, 1))
    if ordered.size == 1:
        nearest = np.zeros(query.shape, dtype=np.intp)
        reach = np.abs(query - ordered[0]) <= 0
        return order[nearest], reach
    left = ordered[pos - 1]
    right = ordered[pos]
    nearest = np.where(query - left <= right - query, pos - 1, pos)
    low_half = (ordered[1] - ordered[0]) / 2
    high_half = (ordered[-1] - ordered[-2]) / 2
    reach = (query >= ordered[0] - low_half) & (
        query <= ordered[-1] + high_half
    )
    return order[nearest], reach


def warp_volume(
    dpv: Dpv,
    src: CameraModel,
    tgt: CameraModel,
    labels: ArrayLike,
) -> WarpedVolume:
    """Pull a source volume onto the target camera's planes."""
    if dpv.label_unit != LabelUnit.INVERSE_DEPTH:
        raise FrameError(
            f"warping needs an inverse-depth volume, got "
            f"{dpv.label_unit.name}"
        )
    target = np.asarray(labels, dtype=np.float64)
    if np.any(target <= 0):
        raise ParameterError("target inverse depths must be positive")
    rays = tgt.pixel_rays()
    ys, xs = np.mgrid[0 : tgt.height, 0 : tgt.width].astype(np.float64)
    pixels = np.stack([xs, ys, np.ones_like(xs)], axis=-1)

    def warp_plane(inverse_depth: float) -> Tuple[np.ndarray, np.ndarray]:
        depth = 1.0 / inverse_depth
        mapped = pixels @ plane_homography(src, tgt, depth).T
        w = mapped[..., 2]
        ahead = w > 0
        safe_w = np.where(ahead, w, 1.0)
        src_x = mapped[..., 0] / safe_w
        src_y = mapped[..., 1] / safe_w
        world = tgt.center + depth * rays
        src_z = src.to_camera(world)[..., 2]
        ahead &= src_z > 0
        query = 1.0 / np.where(src_z > 0, src_z, 1.0)
        bins, reach = _nearest_bins(dpv.labels, query)
        values, inside = bilinear_gather(dpv.probs, bins, src_x, src_y)
        covered = ahead & reach & inside
        return np.where(covered, values, 0.0), covered

    planes = parallel_map(warp_plane, target)
    probs = np.stack([p for p, _ in planes])
    coverage = np.stack([c for _, c in planes])
    logger.debug(
        "warped %d planes, mean coverage %.3f", target.size, coverage.mean()
    )
    return WarpedVolume(labels=target, probs=probs, coverage=coverage)


def _softmax_neg(values: np.ndarray, sigma: float) -> np.ndarray:
    logits = -values / sigma
    weights = np.exp(logits - logits.max())
    return weights / weights.sum()


def default_sigma_pos(cameras: Sequence[CameraModel]) -> float:
    """Mean distance between source cameras, or 1 when undefined."""
    distances = [
        float(np.linalg.norm(a.center - b.center))
        for a, b in itertools.combinations(cameras, 2)
    ]
    mean = float(np.mean(distances)) if distances else 0.0
    return mean if mean > 0 else 1.0


def fusion_weights(
    sources: Sequence[CameraModel],
    target: CameraModel,
    sigma_pos: Optional[float] = None,
    sigma_dir: float = DEFAULT_SIGMA_DIR,
) -> FusionWeights:
    """Softmax weights favouring sources close in position and direction."""
    if not sources:
        raise ParameterError("fusion needs at least one source camera")
    sigma_pos_ = default_sigma_pos(sources) if sigma_pos is None else sigma_pos
    if sigma_pos_ <= 0 or sigma_dir <= 0:
        raise ParameterError("sigma_pos and sigma_dir must be > 0")
    distances = np.array(
        [np.linalg.norm(cam.center - target.center) for cam in sources]
    )
    angles = np.array(
        [
            np.arccos(
                np.clip(cam.principal_axis @ target.principal_axis, -1, 1)
            )
            for cam in sources
        ]
    )
    return FusionWeights(
        w_pos=_softmax_neg(distances, sigma_pos_),
        w_dir=_softmax_neg(angles, sigma_dir),
        sigma_pos=sigma_pos_,
        sigma_dir=sigma_dir,
    )


def fuse_volumes(
    warped: Sequence[WarpedVolume],
    weights: FusionWeights,
    renormalize_per_bin: bool = False,
) -> FusionResult:
    """Weighted sum of the warped volumes, divided by the covering count."""
    if not warped:
        raise FusionError("no warped volumes to fuse")
    if len(warped) != weights.w_pos.size:
        raise FusionError(
            f"{len(warped)} volumes but {weights.w_pos.size} weights"
        )
    first = warped[0]
    for other in warped[1:]:
        if other.probs.shape != first.probs.shape:
            raise FusionError("warped volumes differ in shape")
        if not np.array_equal(other.labels, first.labels):
            raise FusionError("warped volumes differ in labels")
    numerator = np.zeros(first.probs.shape)
    covering_weight = np.zeros(first.probs.shape)
    n_rays = np.zeros(first.probs.shape, dtype=np.int64)
    for volume, w in zip(warped, weights.combined):
        numerator += w * volume.probs
        covering_weight += np.where(volume.coverage, w, 0.0)
        n_rays += volume.coverage
    denominator = covering_weight if renormalize_per_bin else n_rays
    raw = np.where(
        denominator > 0,
        numerator / np.where(denominator > 0, denominator, 1.0),
        0.0,
    )
    probs, zero_mass = normalize_probs(raw)
    if zero_mass:
        logger.warning(
            "%d target pixels have no coverage, set uniform", zero_mass
        )
    volume = Dpv.build(first.labels, probs, LabelUnit.INVERSE_DEPTH)
    return FusionResult(
        volume=volume, raw=raw, n_rays=n_rays, zero_mass=zero_mass
    )


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class FusionRun:
    """Everything `fuse_sources` produced."""

    result: FusionResult
    weights: FusionWeights
    warped: List[WarpedVolume]


def fuse_sources(
    volumes: Sequence[Dpv],
    cameras: Sequence[CameraModel],
    target: CameraModel,
    cfg: Optional[FusionConfig] = None,
) -> FusionRun:
    """Warp every source volume to the target and fuse them."""
    cfg = cfg or FusionConfig()
    if len(volumes) != len(cameras):
        raise FusionError(
            f"{len(volumes)} volumes but {len(cameras)} cameras"
        )
    labels = target_labels(volumes, cfg.n_planes)
    warped = [
        warp_volume(dpv, cam, target, labels)
        for dpv, cam in zip(volumes, cameras)
    ]
    weights = fusion_weights(cameras, target, cfg.sigma_pos, cfg.sigma_dir)
    result = fuse_volumes(warped, weights, cfg.renormalize_per_bin)
    logger.info(
        "Fused %d sources onto %d planes (%d zero-mass pixels)",
        len(volumes),
        labels.size,
        result.zero_mass,
    )
    return FusionRun(result=result, weights=weights, warped=warped)
