# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""The command line, from synthetic scene to scored light field."""
from pathlib import Path

import numpy as np
import pytest

from lf_fusion.config import Config, load_config
from lf_fusion.entry_point import main
from lf_fusion.models import LabelUnit
from lf_fusion.serde import read_json
from lf_fusion.util.dpv_file import read_dpv
from lf_fusion.util.image import save_mask
from lf_fusion.util.pfm import write_pfm

RIGS = ("rig0", "rig1", "rig2")


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    """Keep a stray lf_fusion.toml from leaking into the runs."""
    monkeypatch.chdir(tmp_path)


def _run(*argv) -> None:
    assert main([str(a) for a in argv]) == 0


# fmt: off
def _pipeline(root: Path, scene: Path, threads: int) -> None:
    """scvr on every oracle volume, then fuse, refine and render."""
    flags = ("--threads", threads)
    for rig in RIGS:
        _run(
            *flags,
            "scvr",
            "--dpv", scene / "oracle" / f"{rig}.dpv",
            "--sparse", scene / "sparse",
            "--view", rig,
            "--out", root / f"{rig}.dpv",
            "--log", root / f"{rig}_scvr.json",
        )
    _run(
        *flags,
        "fuse",
        "--sparse", scene / "sparse",
        "--target", "target",
        "--dpv", *(root / f"{rig}.dpv" for rig in RIGS),
        "--out", root / "fused.dpv",
        "--report", root / "fusion.json",
    )
    _run(
        *flags,
        "disparity",
        "--dpv", root / "fused.dpv",
        "--guide", scene / "target" / "target.png",
        "--out", root / "disparity.pfm",
    )
    _run(
        *flags,
        "render",
        "--image", scene / "target" / "target.png",
        "--disparity", root / "disparity.pfm",
        "--grid", "7x7",
        "--out", root / "lf",
    )


def _score(root: Path, scene: Path) -> dict:
    _run(
        "eval",
        "--est", root / "disparity.pfm",
        "--gt", scene / "gt" / "target_inverse_depth.pfm",
        "--mask", scene / "gt" / "target_mask.png",
        "--normalize",
        "--json", root / "eval.json",
    )
    return read_json(root / "eval.json")


def test_init_config(tmp_path):
    _run("init-config", "--out", tmp_path / "defaults.toml")
    assert load_config(tmp_path / "defaults.toml") == Config()


def test_eval_report(tmp_path, capsys):
    gt = np.linspace(0.0, 1.0, 20).reshape(4, 5)
    write_pfm(tmp_path / "gt.pfm", gt)
    write_pfm(tmp_path / "est.pfm", gt + 0.07)
    _run(
        "eval",
        "--est", tmp_path / "est.pfm",
        "--gt", tmp_path / "gt.pfm",
        "--json", tmp_path / "eval.json",
    )
    report = read_json(tmp_path / "eval.json")
    assert set(report) >= {"mse", "mae", "ppe_005", "ppe_01", "n_pixels"}
    assert report["n_pixels"] == 20
    assert report["ppe_005"] == 0.0
    assert report["ppe_01"] == 100.0
    assert "MSE" in capsys.readouterr().out


def test_eval_rescales_first(tmp_path):
    gt = np.linspace(0.2, 0.6, 20).reshape(4, 5)
    write_pfm(tmp_path / "gt.pfm", gt)
    write_pfm(tmp_path / "est.pfm", 3.0 * gt + 1.0)
    _run(
        "eval",
        "--est", tmp_path / "est.pfm",
        "--gt", tmp_path / "gt.pfm",
        "--rescale", "linear",
        "--json", tmp_path / "eval.json",
    )
    assert read_json(tmp_path / "eval.json")["ppe_005"] == 100.0


def test_missing_input_is_an_input_error(tmp_path):
    code = main(
        [
            "eval",
            "--est", str(tmp_path / "absent.pfm"),
            "--gt", str(tmp_path / "absent.pfm"),
            "--json", str(tmp_path / "eval.json"),
        ]
    )
    assert code == 2


def test_empty_mask_is_a_numerical_error(tmp_path):
    write_pfm(tmp_path / "map.pfm", np.ones((4, 4)))
    save_mask(tmp_path / "mask.png", np.zeros((4, 4), dtype=bool))
    code = main(
        [
            "eval",
            "--est", str(tmp_path / "map.pfm"),
            "--gt", str(tmp_path / "map.pfm"),
            "--mask", str(tmp_path / "mask.png"),
            "--json", str(tmp_path / "eval.json"),
        ]
    )
    assert code == 3


def test_bad_config_is_an_input_error(tmp_path):
    (tmp_path / "bad.toml").write_text("threads = [", encoding="utf-8")
    code = main(["--config", str(tmp_path / "bad.toml"), "init-config"])
    assert code == 2


@pytest.mark.parametrize(
    "document",
    ["[fusion]\nsigma_dir = 0.0\n", 'log_level = "LOUD"\n'],
)
def test_invalid_config_value_is_an_input_error(tmp_path, document):
    (tmp_path / "bad.toml").write_text(document, encoding="utf-8")
    code = main(["--config", str(tmp_path / "bad.toml"), "init-config"])
    assert code == 2


def test_unknown_log_level_is_a_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["--log-level", "LOUD", "init-config"])
    assert e.value.code == 2


def test_log_level_is_case_insensitive(tmp_path):
    _run("--log-level", "debug", "init-config", "--out", "defaults.toml")
    assert (tmp_path / "defaults.toml").is_file()


def test_estimated_volume_feeds_scvr(tmp_path):
    _run("synth", "--scene", "three-plane", "--size", 48, "--out", "scene")
    _run(
        "--config", "scene/config/rig1.toml",
        "estimate-dpv",
        "--lf", "scene/rigs/rig1",
        "--out", "rig1.dpv",
    )
    _run(
        "scvr",
        "--dpv", "rig1.dpv",
        "--sparse", "scene/sparse",
        "--view", "rig1",
        "--out", "rig1_scvr.dpv",
        "--log", "rig1_scvr.json",
    )
    low, high = read_json(tmp_path / "scene" / "scene.json")["sweep"]["rig1"]
    labels = read_dpv(tmp_path / "rig1.dpv").labels
    assert (labels[0], labels[-1]) == pytest.approx((low, high))
    log = read_json(tmp_path / "rig1_scvr.json")
    assert log["anchors"] > 0
    assert len(log["iterations"]) >= 1
    rescaled = read_dpv(tmp_path / "rig1_scvr.dpv")
    assert rescaled.label_unit == LabelUnit.INVERSE_DEPTH


def test_estimate_dpv_is_deterministic(tmp_path):
    _run("synth", "--scene", "single-plane", "--size", 24, "--out", "scene")
    for threads in (1, 4):
        _run(
            "--threads", threads,
            "estimate-dpv",
            "--lf", "scene/rigs/rig0",
            "--planes", 16,
            "--dmin", 0.2,
            "--dmax", 0.8,
            "--out", f"sweep{threads}.dpv",
        )
    first = (tmp_path / "sweep1.dpv").read_bytes()
    assert first == (tmp_path / "sweep4.dpv").read_bytes()


# fmt: on


def test_pipeline_is_byte_deterministic(tmp_path):
    scene = tmp_path / "scene"
    _run("synth", "--scene", "three-plane", "--size", 40, "--out", scene)
    runs = {"serial": 1, "threaded": 8, "again": 1}
    for name, threads in runs.items():
        (tmp_path / name).mkdir()
        _pipeline(tmp_path / name, scene, threads)
    artifacts = [
        *(f"{rig}.dpv" for rig in RIGS),
        "fused.dpv",
        "fusion.json",
        "disparity.pfm",
        "lf/r0_c0.png",
        "lf/r3_c6.png",
        "lf/masks/r6_c6.png",
    ]
    for artifact in artifacts:
        serial = (tmp_path / "serial" / artifact).read_bytes()
        for name in ("threaded", "again"):
            assert (tmp_path / name / artifact).read_bytes() == serial
    report = read_json(tmp_path / "serial" / "fusion.json")
    rays = report["rays"]
    assert 0 <= rays["min_rays"] <= rays["mean_rays"] <= rays["max_rays"]
    assert rays["max_rays"] <= len(RIGS)
    assert 0.0 <= rays["zero_fraction"] < 1.0
    for source in report["sources"]:
        coverage = source["plane_coverage"]
        assert len(coverage) == report["planes"]
        assert np.mean(coverage) == pytest.approx(source["mean_coverage"])


@pytest.mark.slow
def test_three_plane_acceptance(tmp_path):
    scene = tmp_path / "scene"
    _run("synth", "--scene", "three-plane", "--size", 128, "--out", scene)
    _pipeline(tmp_path, scene, 4)

    fusion = read_json(tmp_path / "fusion.json")
    assert [s["view"] for s in fusion["sources"]] == list(RIGS)
    assert fusion["renormalize_per_bin"] is False
    scvr_log = read_json(tmp_path / "rig1_scvr.json")
    assert scvr_log["anchors"] > 0
    assert len(scvr_log["iterations"]) >= 1

    report = _score(tmp_path, scene)
    assert report["mse"] < 0.01
    assert report["ppe_005"] > 90.0

    # fmt: off
    _run(
        "eval-lf",
        "--est", tmp_path / "lf",
        "--gt", scene / "target_lf",
        "--json", tmp_path / "eval_lf.json",
    )
    # fmt: on
    lf_report = read_json(tmp_path / "eval_lf.json")
    assert len(lf_report["views"]) == 49
    assert lf_report["mean_psnr"] > 25.0
    manifest = read_json(tmp_path / "lf" / "manifest.json")
    assert manifest["grid"] == [7, 7]
    assert manifest["disparity_unit"] == "inverse_depth"
