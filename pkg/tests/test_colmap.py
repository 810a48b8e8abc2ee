# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""COLMAP text models and anchor extraction."""
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lf_fusion.colmap import (
    ColmapCamera,
    ColmapImage,
    ColmapPoint,
    DepthRangeConfig,
    SparseModel,
    build_anchor_set,
    compute_depth_range,
    global_depth_range,
    nearest_rank,
    parse_sparse_model,
    rotation_to_qvec,
    write_sparse_model,
)
from lf_fusion.errors import (
    EmptyAnchorError,
    InputError,
    InsufficientAnchorError,
    ModelConsistencyError,
    ModelIOError,
    ParameterError,
    ParseError,
    UnsupportedModelError,
)
from lf_fusion.models import AnchorObservation, AnchorSet, CameraModel

CAMERAS = """\
# Camera list with one line of data per camera:
1 PINHOLE 64 48 100.0 100.0 31.5 23.5
2 SIMPLE_PINHOLE 64 48 80.0 31.5 23.5
"""

IMAGES = """\
# Image list with two lines of data per image:
1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 left
10.0 20.0 1 30.5 22.0 2

2 1.0 0.0 0.0 0.0 -0.1 0.0 0.0 2 right
25.0 23.5 2
"""

POINTS = """\
# 3D point list with one line of data per point:
1 -0.4 -0.03 2.0 200 10 10 0.5 1 0
2 0.0 0.0 3.0 10 200 10 0.25 1 1 2 0
"""


def _write(root: Path, cameras=CAMERAS, images=IMAGES, points=POINTS):
    root.mkdir(parents=True, exist_ok=True)
    (root / "cameras.txt").write_text(cameras, encoding="utf-8")
    (root / "images.txt").write_text(images, encoding="utf-8")
    (root / "points3D.txt").write_text(points, encoding="utf-8")
    return root


def test_parse_model(tmp_path):
    model = parse_sparse_model(_write(tmp_path))
    assert sorted(model.cameras) == [1, 2]
    assert model.cameras[2].focal == (80.0, 80.0)
    assert model.cameras[1].principal_point == (31.5, 23.5)
    left = model.image_named("left")
    assert left.observations == ((10.0, 20.0, 1), (30.5, 22.0, 2))
    assert model.image_named("right").tvec == (-0.1, 0.0, 0.0)
    assert model.points3d[2].track == ((1, 1), (2, 0))
    assert model.points3d[1].rgb == (200, 10, 10)


def test_view_camera_combines_intrinsics_and_pose(tmp_path):
    camera = parse_sparse_model(_write(tmp_path)).view_camera("right")
    assert (camera.fx, camera.fy, camera.cx) == (80.0, 80.0, 31.5)
    np.testing.assert_allclose(camera.center, [0.1, 0.0, 0.0])
    np.testing.assert_allclose(camera.rotation, np.eye(3))


def test_empty_points2d_line(tmp_path):
    images = (
        "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 left\n"
        "\n"
        "2 1.0 0.0 0.0 0.0 -0.1 0.0 0.0 2 right\n"
        "\n"
    )
    model = parse_sparse_model(_write(tmp_path, images=images, points=""))
    assert model.image_named("left").observations == ()
    assert model.image_named("right").observations == ()


def test_unknown_image_name(tmp_path):
    model = parse_sparse_model(_write(tmp_path))
    with pytest.raises(ModelConsistencyError):
        model.image_named("middle")


def test_missing_file(tmp_path):
    _write(tmp_path)
    (tmp_path / "points3D.txt").unlink()
    with pytest.raises(ModelIOError):
        parse_sparse_model(tmp_path)


def test_unsupported_camera_model(tmp_path):
    cameras = "1 SIMPLE_RADIAL 64 48 100.0 31.5 23.5 0.01\n"
    with pytest.raises(UnsupportedModelError):
        parse_sparse_model(_write(tmp_path, cameras=cameras))


def test_parse_error_names_the_line(tmp_path):
    cameras = "# header\n1 PINHOLE 64 48 100.0 abc 31.5 23.5\n"
    with pytest.raises(ParseError) as info:
        parse_sparse_model(_write(tmp_path, cameras=cameras))
    assert info.value.line_number == 2
    assert isinstance(info.value, InputError)


def test_wrong_parameter_count(tmp_path):
    cameras = "1 PINHOLE 64 48 100.0 31.5 23.5\n"
    with pytest.raises(ParseError):
        parse_sparse_model(_write(tmp_path, cameras=cameras))


def test_dangling_camera_reference(tmp_path):
    images = IMAGES.replace("0.0 0.0 2 right", "0.0 0.0 3 right")
    with pytest.raises(ModelConsistencyError):
        parse_sparse_model(_write(tmp_path, images=images))


def test_dangling_point_reference(tmp_path):
    images = IMAGES.replace("25.0 23.5 2", "25.0 23.5 9")
    with pytest.raises(ModelConsistencyError):
        parse_sparse_model(_write(tmp_path, images=images))


def test_unnormalized_quaternion(tmp_path):
    images = IMAGES.replace("1 1.0 0.0 0.0 0.0", "1 2.0 0.0 0.0 0.0")
    with pytest.raises(ModelConsistencyError):
        parse_sparse_model(_write(tmp_path, images=images))


def test_write_read_write_is_byte_stable(tmp_path):
    model = parse_sparse_model(_write(tmp_path / "in"))
    write_sparse_model(model, tmp_path / "a")
    write_sparse_model(parse_sparse_model(tmp_path / "a"), tmp_path / "b")
    for name in ("cameras.txt", "images.txt", "points3D.txt"):
        first = (tmp_path / "a" / name).read_bytes()
        assert first == (tmp_path / "b" / name).read_bytes()


def test_written_floats_round_trip_exactly(tmp_path):
    qvec = rotation_to_qvec(
        Rotation.from_euler("xyz", [0.3, -1.7, 2.9], degrees=True).as_matrix()
    )
    model = SparseModel(
        cameras={
            1: ColmapCamera(1, "PINHOLE", 64, 48, (99.1, 100.3, 31.7, 23.2))
        },
        images={
            1: ColmapImage(1, qvec, (0.1, -1 / 3, 2 / 7), 1, "view", ())
        },
        points3d={},
    )
    write_sparse_model(model, tmp_path)
    back = parse_sparse_model(tmp_path)
    assert back.images[1].qvec == qvec
    assert back.images[1].tvec == (0.1, -1 / 3, 2 / 7)
    assert back.cameras[1] == model.cameras[1]


def test_identity_rotation_quaternion():
    assert rotation_to_qvec(np.eye(3)) == (1.0, 0.0, 0.0, 0.0)


def test_quaternion_has_non_negative_w():
    rotation = Rotation.from_euler("z", 270, degrees=True).as_matrix()
    qvec = rotation_to_qvec(rotation)
    assert qvec[0] >= 0
    image = ColmapImage(1, qvec, (0.0, 0.0, 0.0), 1, "v")
    np.testing.assert_allclose(image.rotation, rotation, atol=1e-12)


def test_quaternion_of_a_frozen_camera_rotation():
    rotation = Rotation.from_euler("xy", [12, -20], degrees=True).as_matrix()
    camera = CameraModel.looking_down_z(50.0, 16, 16, rotation=rotation)
    assert not camera.rotation.flags.writeable
    qvec = rotation_to_qvec(camera.rotation)
    image = ColmapImage(1, qvec, (0.0, 0.0, 0.0), 1, "v")
    np.testing.assert_allclose(image.rotation, rotation, atol=1e-12)


def test_nearest_rank():
    values = [float(v) for v in range(1, 11)]
    assert nearest_rank(values, 0.01) == 1.0
    assert nearest_rank(values, 0.5) == 5.0
    assert nearest_rank(values, 0.99) == 10.0
    assert nearest_rank(values, 1.0) == 10.0


def _anchor_set(depths, view="v") -> AnchorSet:
    observations = [
        AnchorObservation(point_id=i, x=0.0, y=0.0, z=z)
        for i, z in enumerate(depths)
    ]
    return AnchorSet(points={}, observations={view: observations})


def test_depth_range_from_percentiles():
    anchors = _anchor_set([float(v) for v in range(1, 11)])
    low, high = compute_depth_range(anchors, "v")
    assert low == pytest.approx(1.0 / 1.2)
    assert high == pytest.approx(12.0)


def test_depth_range_ignores_outliers():
    depths = [2.0 + 0.01 * i for i in range(99)] + [50.0]
    low, high = compute_depth_range(_anchor_set(depths), "v", margin=1.0)
    assert low == 2.0
    assert high == pytest.approx(2.98)


def test_depth_range_needs_two_anchors():
    with pytest.raises(InsufficientAnchorError):
        compute_depth_range(_anchor_set([2.0]), "v")
    with pytest.raises(InsufficientAnchorError):
        compute_depth_range(_anchor_set([2.0, 3.0]), "other")


def test_invalid_percentiles():
    with pytest.raises(ParameterError):
        compute_depth_range(_anchor_set([1.0, 2.0]), "v", 0.9, 0.1)
    with pytest.raises(ParameterError):
        compute_depth_range(_anchor_set([1.0, 2.0]), "v", margin=0.5)


def test_build_anchor_set(tmp_path):
    model = parse_sparse_model(_write(tmp_path))
    anchors = build_anchor_set(model, ["left", "right"])
    left = anchors.for_view("left")
    assert [a.point_id for a in left] == [1, 2]
    assert left[0].x == pytest.approx(31.5 + 100.0 * -0.4 / 2.0)
    assert left[0].z == 2.0
    assert left[1].z == 3.0
    assert [a.point_id for a in anchors.for_view("right")] == [2]
    assert anchors.depth_range["left"] == pytest.approx((2 / 1.2, 3 * 1.2))
    assert "right" not in anchors.depth_range
    assert global_depth_range(anchors) == anchors.depth_range["left"]


def test_anchors_behind_and_outside_are_dropped(tmp_path):
    points = (
        "1 0.0 0.0 -1.0 0 0 0 0.0 1 0\n"
        "2 5.0 0.0 2.0 0 0 0 0.0 1 1\n"
        "3 0.0 0.0 2.0 0 0 0 0.0 1 2\n"
    )
    images = (
        "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 left\n"
        "1.0 1.0 1 2.0 2.0 2 3.0 3.0 3\n"
        "2 1.0 0.0 0.0 0.0 -0.1 0.0 0.0 2 right\n"
        "\n"
    )
    model = parse_sparse_model(_write(tmp_path, images=images, points=points))
    anchors = build_anchor_set(model, ["left"])
    assert [a.point_id for a in anchors.for_view("left")] == [3]
    assert anchors.dropped_behind["left"] == 1
    assert anchors.dropped_outside["left"] == 1


def test_view_without_anchors(tmp_path):
    images = (
        "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 left\n"
        "\n"
        "2 1.0 0.0 0.0 0.0 -0.1 0.0 0.0 2 right\n"
        "\n"
    )
    model = parse_sparse_model(_write(tmp_path, images=images, points=""))
    with pytest.raises(EmptyAnchorError):
        build_anchor_set(model, ["left"])


def test_default_depth_range_config():
    cfg = DepthRangeConfig()
    assert (cfg.lo_pct, cfg.hi_pct, cfg.margin) == (0.01, 0.99, 1.2)


def test_point_line_fields():
    point = ColmapPoint(1, (0.0, 0.0, 1.0), (1, 2, 3), 0.5)
    assert point.track == ()
