# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""On-disk formats: DPV1, PFM, PNG light fields, JSON and TOML."""
import numpy as np
import pytest

from lf_fusion.config import (
    Config,
    dumps_config,
    load_config,
    write_default_config,
)
from lf_fusion.errors import ContainerFormatError
from lf_fusion.models import Dpv, LabelUnit, LightField
from lf_fusion.render import FieldMode
from lf_fusion.serde import converter, dumps_json, read_json
from lf_fusion.synth.scene import FullPlane, Layer, LayerMask, RectMask
from lf_fusion.util.dpv_file import dumps_dpv, loads_dpv, read_dpv, write_dpv
from lf_fusion.util.image import (
    load_image,
    read_light_field,
    read_masks,
    save_image,
    write_light_field,
)
from lf_fusion.util.pfm import read_pfm, write_pfm


def _random_dpv(seed: int = 0, unit=LabelUnit.INVERSE_DEPTH) -> Dpv:
    rng = np.random.default_rng(seed)
    probs = rng.random((7, 5, 4))
    probs /= probs.sum(axis=0)
    return Dpv.build(np.linspace(0.2, 0.8, 7), probs, unit)


# === DPV1 ===
def test_dpv_container_is_byte_stable(tmp_path):
    first = dumps_dpv(_random_dpv())
    path = tmp_path / "volume.dpv"
    path.write_bytes(first)
    assert dumps_dpv(read_dpv(path)) == first


def test_dpv_container_keeps_shape_and_unit():
    dpv = _random_dpv(unit=LabelUnit.WORLD_DEPTH)
    back = loads_dpv(dumps_dpv(dpv))
    assert back.label_unit == LabelUnit.WORLD_DEPTH
    assert back.probs.shape == (7, 5, 4)
    assert back.normalized
    np.testing.assert_allclose(back.labels, dpv.labels, rtol=1e-7)
    np.testing.assert_allclose(back.probs, dpv.probs, rtol=1e-6)


def test_dpv_header_layout(tmp_path):
    path = tmp_path / "v.dpv"
    write_dpv(path, _random_dpv())
    data = path.read_bytes()
    assert data[:4] == b"DPV1"
    assert np.frombuffer(data[4:16], dtype="<u4").tolist() == [5, 4, 7]
    assert data[16] == LabelUnit.INVERSE_DEPTH.value
    assert len(data) == 17 + 4 * 7 * (1 + 5 * 4)


@pytest.mark.parametrize(
    "mangle",
    [
        lambda b: b"DPV2" + b[4:],
        lambda b: b[:-4],
        lambda b: b[:10],
        lambda b: b[:16] + bytes([9]) + b[17:],
    ],
)
def test_corrupt_dpv_container(mangle):
    with pytest.raises(ContainerFormatError):
        loads_dpv(mangle(dumps_dpv(_random_dpv())))


# === PFM ===
def test_pfm_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    values = rng.random((6, 9)).astype(np.float32).astype(np.float64)
    path = tmp_path / "map.pfm"
    write_pfm(path, values)
    np.testing.assert_array_equal(read_pfm(path), values)


def test_pfm_rows_are_stored_bottom_up(tmp_path):
    values = np.array([[1.0, 2.0], [3.0, 4.0]])
    path = tmp_path / "map.pfm"
    write_pfm(path, values)
    data = path.read_bytes()
    header = b"Pf\n2 2\n-1.0\n"
    assert data.startswith(header)
    stored = np.frombuffer(data[len(header) :], dtype="<f4")
    assert stored.tolist() == [3.0, 4.0, 1.0, 2.0]


def test_big_endian_color_pfm(tmp_path):
    path = tmp_path / "color.pfm"
    samples = np.arange(6, dtype=">f4")
    path.write_bytes(b"PF\n2 1\n1.0\n" + samples.tobytes())
    image = read_pfm(path)
    assert image.shape == (1, 2, 3)
    assert image[0, 1].tolist() == [3.0, 4.0, 5.0]


def test_truncated_pfm(tmp_path):
    path = tmp_path / "short.pfm"
    path.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\0" * 12)
    with pytest.raises(ContainerFormatError):
        read_pfm(path)


def test_not_a_pfm(tmp_path):
    path = tmp_path / "junk.pfm"
    path.write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(ContainerFormatError):
        read_pfm(path)


def test_color_maps_are_not_written(tmp_path):
    with pytest.raises(ContainerFormatError):
        write_pfm(tmp_path / "c.pfm", np.zeros((2, 2, 3)))


# === PNG light fields ===
def test_png_round_trip_is_exact_on_8bit_values(tmp_path):
    rng = np.random.default_rng(2)
    image = rng.integers(0, 256, size=(5, 7, 3)) / 255.0
    save_image(tmp_path / "i.png", image)
    np.testing.assert_array_equal(load_image(tmp_path / "i.png"), image)


def test_light_field_directory_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    views = rng.integers(0, 256, size=(3, 3, 4, 5, 3)) / 255.0
    masks = rng.random((3, 3, 4, 5)) > 0.5
    write_light_field(tmp_path / "lf", LightField(views=views), masks)
    assert (tmp_path / "lf" / "r2_c0.png").is_file()
    back = read_light_field(tmp_path / "lf")
    np.testing.assert_array_equal(back.views, views)
    np.testing.assert_array_equal(read_masks(tmp_path / "lf", 3, 3), masks)


def test_masks_are_optional(tmp_path):
    write_light_field(tmp_path / "lf", LightField(np.zeros((1, 1, 2, 2, 3))))
    assert read_masks(tmp_path / "lf", 1, 1) is None


def test_incomplete_light_field(tmp_path):
    write_light_field(tmp_path / "lf", LightField(np.zeros((3, 3, 2, 2, 3))))
    (tmp_path / "lf" / "r1_c1.png").unlink()
    with pytest.raises(ContainerFormatError):
        read_light_field(tmp_path / "lf")


def test_missing_light_field(tmp_path):
    with pytest.raises(ContainerFormatError):
        read_light_field(tmp_path / "nowhere")


# === JSON ===
def test_json_is_sorted_with_trailing_newline():
    text = dumps_json({"b": 1, "a": [1.5, 2]})
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')


def test_layer_masks_are_tagged():
    layer = Layer(depth=2.0, seed=7, mask=RectMask(-1.0, 1.0, -0.5, 0.5))
    data = converter.unstructure(layer)
    assert data["mask"]["_t"] == "RectMask"
    assert converter.structure(data, Layer) == layer
    assert converter.structure({"_t": "FullPlane"}, LayerMask) == FullPlane()


def test_unknown_mask_tag():
    with pytest.raises(ContainerFormatError):
        converter.structure({"_t": "Circle"}, LayerMask)


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ContainerFormatError):
        read_json(path)


# === TOML config ===
def test_default_config_round_trip(tmp_path):
    path = tmp_path / "lf_fusion.toml"
    write_default_config(path)
    assert load_config(path) == Config()


def test_config_overrides(tmp_path):
    path = tmp_path / "custom.toml"
    path.write_text(
        "threads = 4\n"
        "[plane_sweep]\nn_planes = 32\nviews = 'full'\n"
        "[render]\ngrid = [5, 5]\nmode = 'reproject'\n"
        "[fusion]\nsigma_pos = 0.5\n",
        encoding="utf-8",
    )
    config = load_config(path)
    assert config.threads == 4
    assert config.plane_sweep.n_planes == 32
    assert config.plane_sweep.views == "full"
    assert config.plane_sweep.d_max == 2.0
    assert config.render.grid == (5, 5)
    assert config.render.mode == FieldMode.FORWARD_REPROJECT
    assert config.fusion.sigma_pos == 0.5


def test_unset_options_are_left_out():
    text = dumps_config(Config())
    assert "sigma_pos" not in text
    assert "n_planes = 100" in text


def test_missing_explicit_config(tmp_path):
    with pytest.raises(ContainerFormatError):
        load_config(tmp_path / "absent.toml")


def test_missing_default_config_gives_defaults(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert load_config() == Config()


@pytest.mark.parametrize(
    "text",
    ["threads = [", "[plane_sweep]\nn_planes = 'many'\n"],
)
def test_malformed_config(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ContainerFormatError):
        load_config(path)
