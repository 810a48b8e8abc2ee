# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Shared fixtures: small synthetic scenes and a smooth test texture."""
from typing import Callable

import numpy as np
import pytest

from lf_fusion.synth.presets import scene_preset
from lf_fusion.synth.scene import SceneBundle, generate_scene
from lf_fusion.util.parallel import set_threads

SMALL = 48

TextureType = Callable[[np.ndarray, np.ndarray], np.ndarray]


def smooth_texture(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """An RGB pattern in [0.2, 0.8] that is smooth at pixel scale."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    return np.stack(
        [
            0.5 + 0.3 * np.sin(0.7 * xs) * np.cos(0.5 * ys),
            0.5 + 0.3 * np.cos(0.45 * xs + 0.3 * ys),
            0.5 + 0.3 * np.sin(0.35 * ys - 0.2 * xs),
        ],
        axis=-1,
    )


@pytest.fixture(autouse=True)
def single_thread():
    """Every test starts (and leaves) the worker pool at one thread."""
    set_threads(1)
    yield
    set_threads(1)


@pytest.fixture
def texture() -> TextureType:
    return smooth_texture


@pytest.fixture(scope="session")
def single_plane_scene() -> SceneBundle:
    return generate_scene(scene_preset("single-plane", size=SMALL))


@pytest.fixture(scope="session")
def two_plane_scene() -> SceneBundle:
    return generate_scene(scene_preset("two-plane", size=SMALL))


@pytest.fixture(scope="session")
def three_plane_scene() -> SceneBundle:
    return generate_scene(scene_preset("three-plane", size=SMALL))
