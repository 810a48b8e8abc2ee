# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Layered-plane scenes, ray cast into light field rigs."""
from typing import Dict, List, Sequence, Tuple
from logging import getLogger
from pathlib import Path

import attr
import numpy as np
from numpy.typing import ArrayLike
from scipy.ndimage import binary_dilation

from lf_fusion.colmap import (
    ColmapCamera,
    ColmapImage,
    ColmapPoint,
    SparseModel,
    build_anchor_set,
    rotation_to_qvec,
    write_sparse_model,
)
from lf_fusion.config import write_sweep_config
from lf_fusion.core import normalize_probs
from lf_fusion.errors import ParameterError, SceneError, UnsupportedGridError
from lf_fusion.models import (
    AnchorSet,
    CameraModel,
    DisparityMap,
    Dpv,
    LabelUnit,
    LightField,
    angular_offsets,
)
from lf_fusion.serde import converter, read_json, register_tagged, write_json
from lf_fusion.util.dpv_file import write_dpv
from lf_fusion.util.image import save_image, save_mask, write_light_field
from lf_fusion.util.parallel import parallel_map
from lf_fusion.util.pfm import write_pfm
from lf_fusion.util.rng import derive_seed, hash_uniform

logger = getLogger("synth")

TARGET_NAME = "target"
# Relative depth mismatch still counted as the same surface
SURFACE_TOLERANCE = 1e-7
EDGE_MARGIN = 2
DEFAULT_MASK_BAND = 3
ORACLE_PLANES = 100


# === Scene description ===
@attr.s(auto_attribs=True, slots=True, frozen=True)
class LayerMask:
    """Which part of a layer's plane is opaque."""

    def contains(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Whether world points (xs, ys) on the plane are opaque."""
        raise NotImplementedError


@attr.s(auto_attribs=True, slots=True, frozen=True)
class FullPlane(LayerMask):
    """The whole plane is opaque."""

    def contains(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(xs), dtype=bool)


@attr.s(auto_attribs=True, slots=True, frozen=True)
class RectMask(LayerMask):
    """An axis-aligned world rectangle."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __attrs_post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ParameterError("rectangle mask is empty")

    def contains(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return (
            (xs >= self.x_min)
            & (xs <= self.x_max)
            & (ys >= self.y_min)
            & (ys <= self.y_max)
        )


mask_types = {cls.__name__: cls for cls in (FullPlane, RectMask)}
register_tagged(LayerMask, mask_types)


@attr.s(auto_attribs=True, slots=True, frozen=True)
class Layer:
    """A textured plane at world Z = depth; ``cell`` is the texture scale."""

    depth: float
    seed: int
    cell: float = 0.2
    mask: LayerMask = attr.ib(factory=FullPlane)

    def __attrs_post_init__(self) -> None:
        if self.cell <= 0:
            raise ParameterError(f"texture cell must be > 0: {self.cell}")


@attr.s(auto_attribs=True, slots=True, frozen=True)
class Rig:
    """A light field camera: its central view, grid and baseline."""

    name: str
    camera: CameraModel
    grid: Tuple[int, int] = (5, 5)
    baseline: float = 0.01

    def __attrs_post_init__(self) -> None:
        if self.baseline <= 0:
            raise ParameterError(f"{self.name}: baseline must be > 0")
        rows, cols = self.grid
        if rows < 1 or cols < 1 or rows % 2 == 0 or cols % 2 == 0:
            raise UnsupportedGridError(
                f"{self.name}: grid must be odd, got {rows}x{cols}"
            )

    @property
    def disparity_scale(self) -> float:
        """Pixels of parallax per angular step at unit inverse depth."""
        return self.camera.fx * self.baseline

    def sai_camera(self, du: int, dv: int) -> CameraModel:
        """The camera of the SAI at angular offset (du, dv)."""
        return self.camera.translated(
            (du * self.baseline, dv * self.baseline, 0.0)
        )


@attr.s(auto_attribs=True, slots=True, frozen=True)
class SceneSpec:
    """Layers front to back, source rigs, the target rig and a seed."""

    layers: List[Layer]
    rigs: List[Rig]
    target: Rig
    seed: int = 42
    anchors_per_rig: int = 200

    def __attrs_post_init__(self) -> None:
        if not self.layers:
            raise SceneError("a scene needs at least one layer")
        depths = [layer.depth for layer in self.layers]
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise SceneError(f"layer depths must increase: {depths}")
        if not self.rigs:
            raise SceneError("a scene needs at least one source rig")
        names = [rig.name for rig in self.rigs]
        if len(set(names)) != len(names) or TARGET_NAME in names:
            raise SceneError(f"rig names must be unique: {names}")
        if self.target.name != TARGET_NAME:
            raise SceneError(f"the target rig must be named {TARGET_NAME}")

    @property
    def all_rigs(self) -> List[Rig]:
        """Source rigs followed by the target."""
        return [*self.rigs, self.target]


# === Generated data ===
@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class Capture:
    """One rig's light field plus the ground truth of its central view."""

    rig: Rig
    light_field: LightField
    depth: np.ndarray
    layer_ids: np.ndarray

    @property
    def disparity(self) -> DisparityMap:
        """f * baseline / z, in pixels per angular step."""
        return DisparityMap(
            values=self.rig.disparity_scale / self.depth,
            unit=LabelUnit.SOURCE_DISPARITY,
        )

    @property
    def inverse_depth(self) -> DisparityMap:
        """1 / z."""
        return DisparityMap(
            values=1.0 / self.depth, unit=LabelUnit.INVERSE_DEPTH
        )


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class SceneBundle:
    """Everything a scene generates."""

    spec: SceneSpec
    captures: Dict[str, Capture]
    target: Capture
    model: SparseModel
    anchors: AnchorSet

    @property
    def target_image(self) -> np.ndarray:
        """Central view of the target rig."""
        return self.target.light_field.central_view

    def cameras(self) -> Dict[str, CameraModel]:
        """Central camera of every rig, target included."""
        return {rig.name: rig.camera for rig in self.spec.all_rigs}


# === Ray casting ===
def _ray_directions(
    camera: CameraModel, xs: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """World directions through pixels, with camera-frame z of 1."""
    cam = np.stack(
        [
            (xs - camera.cx) / camera.fx,
            (ys - camera.cy) / camera.fy,
            np.ones_like(xs),
        ],
        axis=-1,
    )
    return cam @ camera.rotation


def cast_rays(
    layers: Sequence[Layer],
    camera: CameraModel,
    xs: ArrayLike,
    ys: ArrayLike,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Intersect pixel rays with the layers.

    Returns the camera-frame depth of the nearest hit (inf on a miss), the
    index of the layer hit (-1 on a miss) and the world hit points.
    """
    xs_ = np.asarray(xs, dtype=np.float64)
    ys_ = np.asarray(ys, dtype=np.float64)
    dirs = _ray_directions(camera, xs_, ys_)
    center = camera.center
    depth = np.full(xs_.shape, np.inf)
    ids = np.full(xs_.shape, -1, dtype=np.int64)
    for index, layer in enumerate(layers):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (layer.depth - center[2]) / dirs[..., 2]
        t = np.where(np.isfinite(t), t, np.inf)
        hit_x = center[0] + t * dirs[..., 0]
        hit_y = center[1] + t * dirs[..., 1]
        hit = (t > 0) & (t < depth)
        hit &= layer.mask.contains(hit_x, hit_y)
        depth = np.where(hit, t, depth)
        ids = np.where(hit, index, ids)
    safe = np.where(np.isfinite(depth), depth, 0.0)
    points = center + safe[..., None] * dirs
    return depth, ids, points


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def layer_texture(layer: Layer, xs: ArrayLike, ys: ArrayLike) -> np.ndarray:
    """RGB value noise on the layer's plane, in [0.15, 0.85]."""
    u = np.asarray(xs, dtype=np.float64) / layer.cell
    v = np.asarray(ys, dtype=np.float64) / layer.cell
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = _smoothstep(u - i0)
    fv = _smoothstep(v - j0)
    channels = []
    for channel in range(3):
        c00 = hash_uniform(layer.seed, i0, j0, channel)
        c10 = hash_uniform(layer.seed, i0 + 1, j0, channel)
        c01 = hash_uniform(layer.seed, i0, j0 + 1, channel)
        c11 = hash_uniform(layer.seed, i0 + 1, j0 + 1, channel)
        top = c00 + (c10 - c00) * fu
        bottom = c01 + (c11 - c01) * fu
        channels.append(top + (bottom - top) * fv)
    noise = np.stack(channels, axis=-1).reshape(u.shape + (3,))
    return 0.15 + 0.7 * noise


def shade(
    layers: Sequence[Layer], ids: np.ndarray, points: np.ndarray
) -> np.ndarray:
    """Texture color of every hit point."""
    image = np.zeros(ids.shape + (3,))
    for index, layer in enumerate(layers):
        hit = ids == index
        if hit.any():
            image[hit] = layer_texture(
                layer, points[hit][:, 0], points[hit][:, 1]
            )
    return image


def render_view(
    layers: Sequence[Layer], camera: CameraModel
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ray cast a full image: (RGB, depth, layer ids)."""
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width].astype(float)
    depth, ids, points = cast_rays(layers, camera, xs, ys)
    misses = int((ids < 0).sum())
    if misses:
        raise SceneError(f"{misses} rays miss every layer")
    return shade(layers, ids, points), depth, ids


def capture_rig(layers: Sequence[Layer], rig: Rig) -> Capture:
    """Render every SAI of a rig."""
    rows, cols = rig.grid

    def render(cell: Tuple[int, int, int, int]) -> np.ndarray:
        _, _, du, dv = cell
        try:
            image, _, _ = render_view(layers, rig.sai_camera(du, dv))
        except SceneError as e:
            raise e.annotate(f"{rig.name} SAI ({du}, {dv})")
        return image

    views = parallel_map(render, angular_offsets(rows, cols))
    _, depth, ids = render_view(layers, rig.camera)
    shape = (rows, cols, rig.camera.height, rig.camera.width, 3)
    light_field = LightField(views=np.stack(views).reshape(shape))
    return Capture(
        rig=rig, light_field=light_field, depth=depth, layer_ids=ids
    )


# === Visibility and anchors ===
def depth_edges(layer_ids: np.ndarray) -> np.ndarray:
    """Pixels next to a pixel of another layer (4-neighbourhood)."""
    edges = np.zeros(layer_ids.shape, dtype=bool)
    horizontal = layer_ids[:, 1:] != layer_ids[:, :-1]
    vertical = layer_ids[1:, :] != layer_ids[:-1, :]
    edges[:, 1:] |= horizontal
    edges[:, :-1] |= horizontal
    edges[1:, :] |= vertical
    edges[:-1, :] |= vertical
    return edges


def _near_edges(layer_ids: np.ndarray, band: int) -> np.ndarray:
    if band <= 0:
        return np.zeros(layer_ids.shape, dtype=bool)
    return binary_dilation(depth_edges(layer_ids), iterations=band)


def visible_from(
    layers: Sequence[Layer], camera: CameraModel, points: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Whether world points are seen unoccluded by ``camera``.

    Also returns their pixel coordinates (x, y stacked) and camera depths.
    """
    cam = camera.to_camera(points)
    z = cam[..., 2]
    ahead = z > 0
    safe_z = np.where(ahead, z, 1.0)
    xs = camera.fx * cam[..., 0] / safe_z + camera.cx
    ys = camera.fy * cam[..., 1] / safe_z + camera.cy
    inside = (
        ahead
        & (xs >= 0)
        & (xs <= camera.width - 1)
        & (ys >= 0)
        & (ys <= camera.height - 1)
    )
    hit_depth, _, _ = cast_rays(layers, camera, xs, ys)
    unoccluded = np.abs(hit_depth - z) <= SURFACE_TOLERANCE * np.abs(z)
    return inside & unoccluded, np.stack([xs, ys], axis=-1), z


def _sample_points(spec: SceneSpec, rig: Rig) -> np.ndarray:
    """Hash-chosen surface points seen by the rig's central view."""
    seed = derive_seed(spec.seed, f"anchors/{rig.name}")
    index = np.arange(spec.anchors_per_rig)
    xs = hash_uniform(seed, index, 0) * (rig.camera.width - 1)
    ys = hash_uniform(seed, index, 1) * (rig.camera.height - 1)
    _, ids, points = cast_rays(spec.layers, rig.camera, xs, ys)
    return points[ids >= 0]


def _sparse_model(
    spec: SceneSpec, captures: Dict[str, Capture]
) -> SparseModel:
    rigs = spec.all_rigs
    near_edge = {
        name: _near_edges(capture.layer_ids, EDGE_MARGIN)
        for name, capture in captures.items()
    }
    points = np.concatenate([_sample_points(spec, rig) for rig in spec.rigs])
    seen = np.zeros((points.shape[0], len(rigs)), dtype=bool)
    pixels = []
    for column, rig in enumerate(rigs):
        visible, xy, _ = visible_from(spec.layers, rig.camera, points)
        rounded = np.clip(
            np.round(xy).astype(np.int64),
            0,
            [rig.camera.width - 1, rig.camera.height - 1],
        )
        clear = ~near_edge[rig.name][rounded[:, 1], rounded[:, 0]]
        seen[:, column] = visible & clear
        pixels.append(xy)
    keep = np.flatnonzero(seen.sum(axis=1) >= 2)

    observations: Dict[int, List[Tuple[float, float, int]]] = {
        image_id: [] for image_id in range(1, len(rigs) + 1)
    }
    colmap_points: Dict[int, ColmapPoint] = {}
    for point_id, row in enumerate(keep, start=1):
        track = []
        for column in np.flatnonzero(seen[row]):
            image_id = int(column) + 1
            x, y = pixels[column][row]
            track.append((image_id, len(observations[image_id])))
            observations[image_id].append((float(x), float(y), point_id))
        xyz = points[row]
        layer_index = _layer_at(spec.layers, xyz)
        color = layer_texture(spec.layers[layer_index], xyz[:1], xyz[1:2])
        red, green, blue = (int(c) for c in np.round(color[0] * 255))
        colmap_points[point_id] = ColmapPoint(
            point_id=point_id,
            xyz=(float(xyz[0]), float(xyz[1]), float(xyz[2])),
            rgb=(red, green, blue),
            error=0.0,
            track=tuple(track),
        )

    cameras: Dict[int, ColmapCamera] = {}
    images: Dict[int, ColmapImage] = {}
    for image_id, rig in enumerate(rigs, start=1):
        cam = rig.camera
        cameras[image_id] = ColmapCamera(
            camera_id=image_id,
            model="PINHOLE",
            width=cam.width,
            height=cam.height,
            params=(cam.fx, cam.fy, cam.cx, cam.cy),
        )
        images[image_id] = ColmapImage(
            image_id=image_id,
            qvec=rotation_to_qvec(cam.rotation),
            tvec=(float(cam.tau[0]), float(cam.tau[1]), float(cam.tau[2])),
            camera_id=image_id,
            name=rig.name,
            observations=tuple(observations[image_id]),
        )
    return SparseModel(cameras=cameras, images=images, points3d=colmap_points)


def _layer_at(layers: Sequence[Layer], xyz: np.ndarray) -> int:
    """Index of the layer whose plane holds ``xyz``."""
    gaps = [abs(layer.depth - xyz[2]) for layer in layers]
    return int(np.argmin(gaps))


def _check_cameras(spec: SceneSpec) -> None:
    centers = [rig.camera.center for rig in spec.all_rigs]
    for layer in spec.layers:
        if all(center[2] >= layer.depth for center in centers):
            raise SceneError(
                f"layer at depth {layer.depth:g} is behind every camera"
            )


def generate_scene(spec: SceneSpec) -> SceneBundle:
    """Render every rig and derive the sparse model and anchors."""
    _check_cameras(spec)
    captures = {
        rig.name: capture_rig(spec.layers, rig) for rig in spec.all_rigs
    }
    model = _sparse_model(spec, captures)
    anchors = build_anchor_set(model, [rig.name for rig in spec.all_rigs])
    target = captures.pop(TARGET_NAME)
    logger.info(
        "Generated scene: %d layers, %d rigs, %d anchors",
        len(spec.layers),
        len(spec.rigs),
        len(model.points3d),
    )
    return SceneBundle(
        spec=spec,
        captures=captures,
        target=target,
        model=model,
        anchors=anchors,
    )


# === Oracles ===
def oracle_dpv(
    capture: Capture, labels: ArrayLike, sigma: float = 0.05
) -> Dpv:
    """A volume peaked (Gaussian over planes) at the true disparity."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    labels_ = np.asarray(labels, dtype=np.float64)
    truth = capture.disparity.values
    gaps = (labels_[:, None, None] - truth[None]) / sigma
    probs, _ = normalize_probs(np.exp(-0.5 * gaps ** 2))
    return Dpv.build(labels_, probs, LabelUnit.SOURCE_DISPARITY)


def target_mask(
    bundle: SceneBundle, band: int = DEFAULT_MASK_BAND
) -> np.ndarray:
    """
    Target pixels seen by every source rig and at least ``band`` pixels
    from a depth edge.
    """
    camera = bundle.target.rig.camera
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width].astype(float)
    _, _, points = cast_rays(bundle.spec.layers, camera, xs, ys)
    mask = ~_near_edges(bundle.target.layer_ids, band)
    for capture in bundle.captures.values():
        visible, _, _ = visible_from(
            bundle.spec.layers, capture.rig.camera, points
        )
        mask &= visible
    return mask


def sweep_range(capture: Capture) -> Tuple[float, float]:
    """A plane-sweep disparity range bracketing the true disparities."""
    values = capture.disparity.values
    return float(0.8 * values.min()), float(1.2 * values.max())


def oracle_volume(capture: Capture, n_planes: int = ORACLE_PLANES) -> Dpv:
    """`oracle_dpv` over the suggested sweep, two planes wide."""
    low, high = sweep_range(capture)
    labels = np.linspace(low, high, n_planes)
    return oracle_dpv(capture, labels, sigma=2 * (labels[1] - labels[0]))


# === On disk ===
@attr.s(auto_attribs=True, slots=True, frozen=True)
class SceneManifest:
    """The JSON echo of a written scene bundle."""

    spec: SceneSpec
    sweep: Dict[str, Tuple[float, float]]
    target_disparity_scale: float
    anchors: Dict[str, int]


def emit_colmap_fixture(bundle: SceneBundle, dir_path: Path) -> Path:
    """Write the bundle's cameras and anchors as a COLMAP text model."""
    root = Path(dir_path)
    write_sparse_model(bundle.model, root)
    return root


def write_bundle(
    bundle: SceneBundle, root: Path, band: int = DEFAULT_MASK_BAND
) -> None:
    """Write every artifact of a scene under ``root``."""
    root = Path(root)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    (root / "target").mkdir(exist_ok=True)
    (root / "oracle").mkdir(exist_ok=True)
    for name, capture in bundle.captures.items():
        write_light_field(root / "rigs" / name, capture.light_field)
        write_pfm(
            root / "gt" / f"{name}_disparity.pfm", capture.disparity.values
        )
        write_dpv(root / "oracle" / f"{name}.dpv", oracle_volume(capture))
        write_sweep_config(
            root / "config" / f"{name}.toml", *sweep_range(capture)
        )
    write_pfm(
        root / "gt" / "target_inverse_depth.pfm",
        bundle.target.inverse_depth.values,
    )
    save_mask(root / "gt" / "target_mask.png", target_mask(bundle, band))
    save_image(root / "target" / "target.png", bundle.target_image)
    write_light_field(root / "target_lf", bundle.target.light_field)
    emit_colmap_fixture(bundle, root / "sparse")
    manifest = SceneManifest(
        spec=bundle.spec,
        sweep={
            name: sweep_range(capture)
            for name, capture in bundle.captures.items()
        },
        target_disparity_scale=bundle.spec.target.disparity_scale,
        anchors={
            name: len(observations)
            for name, observations in bundle.anchors.observations.items()
        },
    )
    write_json(root / "scene.json", manifest)


def read_manifest(path: Path) -> SceneManifest:
    """Load a scene.json written by `write_bundle`."""
    return converter.structure(read_json(path), SceneManifest)

