# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Named scenes used by the CLI and the tests."""
from typing import Callable, Dict, Optional, Tuple

from scipy.spatial.transform import Rotation

from lf_fusion.errors import ParameterError
from lf_fusion.models import CameraModel
from lf_fusion.synth.scene import (
    TARGET_NAME,
    FullPlane,
    Layer,
    LayerMask,
    RectMask,
    Rig,
    SceneSpec,
)
from lf_fusion.util.rng import derive_seed

PresetType = Callable[[int, int], SceneSpec]
PRESETS: Dict[str, PresetType] = {}

TARGET_FOCAL = 100.0
TARGET_BASELINE = 0.01
TARGET_GRID = (7, 7)
# Texture cells span this many target pixels
TEXTURE_PIXELS = 10.0


def register_preset(name: str) -> Callable[[PresetType], PresetType]:
    """Register a scene builder under ``name``."""

    def decorator(f: PresetType) -> PresetType:
        PRESETS[name] = f
        return f

    return decorator


def scene_preset(name: str, seed: int = 42, size: int = 128) -> SceneSpec:
    """Build the named scene at ``size`` x ``size`` pixels."""
    if name not in PRESETS:
        raise ParameterError(
            f"unknown scene {name!r}, pick one of {sorted(PRESETS)}"
        )
    if size < 16:
        raise ParameterError(f"scene size must be >= 16, got {size}")
    return PRESETS[name](seed, size)


def _target(size: int) -> Rig:
    return Rig(
        name=TARGET_NAME,
        camera=CameraModel.looking_down_z(TARGET_FOCAL, size, size),
        grid=TARGET_GRID,
        baseline=TARGET_BASELINE,
    )


def _rig(
    name: str,
    size: int,
    focal: float,
    baseline: float,
    center: Tuple[float, float, float],
    yaw: float = 0.0,
) -> Rig:
    rotation = Rotation.from_euler("y", yaw, degrees=True).as_matrix()
    return Rig(
        name=name,
        camera=CameraModel.looking_down_z(
            focal, size, size, center=center, rotation=rotation
        ),
        baseline=baseline,
    )


def _half_extent(depth: float, size: int) -> float:
    """Half the target's field of view, in world units, at ``depth``."""
    return depth * (size / 2) / TARGET_FOCAL


def _layer(
    seed: int, index: int, depth: float, mask: Optional[LayerMask] = None
) -> Layer:
    return Layer(
        depth=depth,
        seed=derive_seed(seed, f"layer{index}"),
        cell=TEXTURE_PIXELS * depth / TARGET_FOCAL,
        mask=FullPlane() if mask is None else mask,
    )


def _rect(
    depth: float, size: int, x: Tuple[float, float], y: Tuple[float, float]
) -> RectMask:
    """A rectangle given in fractions of the target's half field of view."""
    half = _half_extent(depth, size)
    return RectMask(
        x_min=x[0] * half,
        x_max=x[1] * half,
        y_min=y[0] * half,
        y_max=y[1] * half,
    )


@register_preset("single-plane")
def single_plane(seed: int, size: int) -> SceneSpec:
    """One textured plane at depth 2."""
    return SceneSpec(
        layers=[_layer(seed, 0, 2.0)],
        rigs=[
            _rig("rig0", size, 100.0, 0.01, (0.05, 0.0, 0.0)),
            _rig("rig1", size, 80.0, 0.015, (-0.05, 0.02, 0.0)),
        ],
        target=_target(size),
        seed=seed,
    )


@register_preset("two-plane")
def two_plane(seed: int, size: int) -> SceneSpec:
    """A foreground card at depth 2 over a background at depth 4."""
    return SceneSpec(
        layers=[
            _layer(seed, 0, 2.0, _rect(2.0, size, (-0.4, 0.3), (-0.35, 0.45))),
            _layer(seed, 1, 4.0),
        ],
        rigs=[
            _rig("rig0", size, 100.0, 0.01, (-0.08, 0.0, 0.0)),
            _rig("rig1", size, 80.0, 0.02, (0.08, 0.03, 0.0)),
        ],
        target=_target(size),
        seed=seed,
    )


@register_preset("three-plane")
def three_plane(seed: int, size: int) -> SceneSpec:
    """
    Two cards at depths 2 and 3 over a background at 4.5, seen by three
    rigs whose focal lengths differ by 2x and baselines by 3x.
    """
    return SceneSpec(
        layers=[
            _layer(seed, 0, 2.0, _rect(2.0, size, (-0.6, -0.05), (-0.5, 0.4))),
            _layer(seed, 1, 3.0, _rect(3.0, size, (0.0, 0.6), (-0.6, 0.3))),
            _layer(seed, 2, 4.5),
        ],
        rigs=[
            _rig("rig0", size, 60.0, 0.01, (-0.12, 0.0, 0.0), yaw=2.0),
            _rig("rig1", size, 120.0, 0.03, (0.1, 0.04, -0.15), yaw=-2.0),
            _rig("rig2", size, 90.0, 0.02, (0.02, -0.08, 0.1)),
        ],
        target=_target(size),
        seed=seed,
    )


def scene_names() -> Tuple[str, ...]:
    """Registered preset names, sorted."""
    return tuple(sorted(PRESETS))

