# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""CLI commands."""
from typing import Any, Callable, Dict, List, Optional, Tuple
import argparse
from logging import getLogger
from pathlib import Path

import attr
import numpy as np

from lf_fusion.cli.helpers import load_sources, override, say, wrote
from lf_fusion.colmap import (
    build_anchor_set,
    compute_depth_range,
    global_depth_range,
    parse_sparse_model,
)
from lf_fusion.config import LOG_LEVELS, Config, write_default_config
from lf_fusion.estimation import estimate_dpv
from lf_fusion.fusion import RayStats, fuse_sources
from lf_fusion.metrics import (
    evaluate_disparity,
    evaluate_light_field,
    linear_rescale_to_reference,
    normalize_range,
)
from lf_fusion.models import DisparityMap, LabelUnit
from lf_fusion.refine import SUBSTITUTE_TAG, refine_disparity
from lf_fusion.render import (
    FieldMode,
    render_light_field,
    synthesize_disparity_field,
)
from lf_fusion.scvr import ScvrIteration, scvr_run
from lf_fusion.serde import write_json
from lf_fusion.synth.presets import scene_names, scene_preset
from lf_fusion.synth.scene import generate_scene, write_bundle
from lf_fusion.util.dpv_file import read_dpv, write_dpv
from lf_fusion.util.image import (
    load_image,
    load_mask,
    read_light_field,
    read_masks,
    tile_views,
    write_light_field,
)
from lf_fusion.util.pfm import read_pfm, write_pfm
from lf_fusion.util.text import parse_grid

CommandType = Callable[[argparse.Namespace, Config], None]
OptionType = Tuple[Tuple[str, ...], Dict[str, Any]]
COMMANDS: Dict[str, CommandType] = {}
logger = getLogger("commands")


PARSER = argparse.ArgumentParser(
    prog="lf-fusion",
    description="Light field geometry fusion and rendering.",
)
PARSER.add_argument(
    "--threads", type=int, help="Worker threads (default: from config)."
)
PARSER.add_argument("--config", type=Path, help="TOML config file.")
PARSER.add_argument(
    "--log-level",
    type=str.upper,
    choices=LOG_LEVELS,
    help="Logging level (default: from config).",
)
_SUBPARSERS = PARSER.add_subparsers(dest="command", metavar="COMMAND")
_SUBPARSERS.required = True


def option(*flags: str, **kwargs: Any) -> OptionType:
    """Arguments for `argparse.ArgumentParser.add_argument`."""
    return flags, kwargs


def register_command(name: str, description: str, *options: OptionType):
    """Register a command and its options under a subcommand name."""

    def decorator(f: CommandType) -> CommandType:
        sub = _SUBPARSERS.add_parser(
            name, help=description, description=description
        )
        for flags, kwargs in options:
            sub.add_argument(*flags, **kwargs)
        COMMANDS[name] = f
        return f

    return decorator


def handle_command(args: argparse.Namespace, config: Config) -> None:
    """Dispatch to the appropriate command."""
    COMMANDS[args.command](args, config)


# === Reports ===
@attr.s(auto_attribs=True, slots=True, frozen=True)
class ScvrLog:
    """What `scvr` did to one volume."""

    view: str
    kappa: Tuple[float, float]
    anchors: int
    converged: bool
    iterations: List[ScvrIteration]


@attr.s(auto_attribs=True, slots=True, frozen=True)
class SourceReport:
    """One fused source."""

    view: str
    w_pos: float
    w_dir: float
    mean_coverage: float
    plane_coverage: List[float]


@attr.s(auto_attribs=True, slots=True, frozen=True)
class FusionReport:
    """What `fuse` did."""

    target: str
    planes: int
    inverse_depth_range: Tuple[float, float]
    sigma_pos: float
    sigma_dir: float
    renormalize_per_bin: bool
    zero_mass: int
    rays: RayStats
    sources: List[SourceReport]


@attr.s(auto_attribs=True, slots=True, frozen=True)
class RenderManifest:
    """Written next to every rendered light field."""

    grid: Tuple[int, int]
    disparity_unit: str
    field_mode: str
    disparity_scale: float
    mask_coverage: float


# === Commands ===
@register_command(
    "synth",
    "Generate a synthetic scene bundle with ground truth.",
    option("--scene", required=True, choices=scene_names()),
    option("--seed", type=int, default=42),
    option("--size", type=int, default=128, help="Image side in pixels."),
    option("--out", type=Path, required=True),
)
def synth(args: argparse.Namespace, config: Config) -> None:
    """Render a preset scene and write it to disk."""
    bundle = generate_scene(scene_preset(args.scene, args.seed, args.size))
    write_bundle(bundle, args.out)
    wrote(
        args.out,
        [
            ("rig", len(bundle.captures)),
            ("anchor", len(bundle.model.points3d)),
        ],
    )


@register_command(
    "estimate-dpv",
    "Estimate a disparity probability volume from a light field.",
    option("--lf", type=Path, required=True, help="SAI directory."),
    option("--planes", type=int),
    option("--dmin", type=float),
    option("--dmax", type=float),
    option("--window", type=int),
    option("--temp", type=float),
    option("--views", choices=("cross", "full")),
    option("--out", type=Path, required=True),
)
def estimate(args: argparse.Namespace, config: Config) -> None:
    """Plane-sweep a light field into a DPV1 file."""
    cfg = override(
        config.plane_sweep,
        n_planes=args.planes,
        d_min=args.dmin,
        d_max=args.dmax,
        window=args.window,
        temperature=args.temp,
        views=args.views,
    )
    dpv = estimate_dpv(read_light_field(args.lf), cfg)
    write_dpv(args.out, dpv)
    wrote(args.out, [("plane", dpv.n_planes)])


@register_command(
    "scvr",
    "Rescale a volume into world-consistent inverse depth.",
    option("--dpv", type=Path, required=True),
    option("--sparse", type=Path, required=True, help="COLMAP text model."),
    option("--view", required=True, help="Image name of the volume's view."),
    option("--iters", type=int),
    option("--eps", type=float),
    option("--planes", type=int, help="Planes after resampling."),
    option(
        "--kappa",
        choices=("view", "global"),
        default="view",
        help="Trust range from this view's anchors or from every view's.",
    ),
    option("--out", type=Path, required=True),
    option("--log", type=Path, help="JSON log of the iterations."),
)
def scvr(args: argparse.Namespace, config: Config) -> None:
    """Run the rescaling loop on one source volume."""
    model = parse_sparse_model(args.sparse)
    depth_cfg = config.depth_range
    if args.kappa == "global":
        names = sorted(image.name for image in model.images.values())
        anchors = build_anchor_set(model, names, depth_cfg)
        kappa = global_depth_range(anchors)
    else:
        anchors = build_anchor_set(model, [args.view], depth_cfg)
        kappa = compute_depth_range(
            anchors,
            args.view,
            depth_cfg.lo_pct,
            depth_cfg.hi_pct,
            depth_cfg.margin,
        )
    cfg = override(
        config.scvr,
        iterations=args.iters,
        convergence_eps=args.eps,
        n_planes=args.planes,
    )
    observations = anchors.for_view(args.view)
    result = scvr_run(read_dpv(args.dpv), observations, kappa, cfg)
    write_dpv(args.out, result.volume)
    if args.log:
        write_json(
            args.log,
            ScvrLog(
                view=args.view,
                kappa=kappa,
                anchors=len(observations),
                converged=result.converged,
                iterations=result.history,
            ),
        )
    wrote(args.out, [("iteration", len(result.history))])


@register_command(
    "fuse",
    "Warp rescaled volumes to a target view and fuse them.",
    option("--sparse", type=Path, required=True),
    option("--target", required=True, help="Image name of the target."),
    option("--dpv", type=Path, nargs="+", required=True),
    option(
        "--views",
        nargs="+",
        help="Image names of the volumes (default: their file stems).",
    ),
    option("--planes", type=int),
    option("--sigma-pos", type=float),
    option("--sigma-dir", type=float),
    option(
        "--renormalize-per-bin",
        action="store_true",
        default=None,
        help="Divide by the covering weight instead of the ray count.",
    ),
    option("--out", type=Path, required=True),
    option("--report", type=Path),
)
def fuse(args: argparse.Namespace, config: Config) -> None:
    """Fuse several sources in the target's frame."""
    model = parse_sparse_model(args.sparse)
    volumes, cameras, views = load_sources(
        args.dpv, args.views, model.view_camera
    )
    cfg = override(
        config.fusion,
        n_planes=args.planes,
        sigma_pos=args.sigma_pos,
        sigma_dir=args.sigma_dir,
        renormalize_per_bin=args.renormalize_per_bin,
    )
    run = fuse_sources(volumes, cameras, model.view_camera(args.target), cfg)
    fused = run.result.volume
    write_dpv(args.out, fused)
    if args.report:
        labels = fused.labels
        write_json(
            args.report,
            FusionReport(
                target=args.target,
                planes=fused.n_planes,
                inverse_depth_range=(float(labels[0]), float(labels[-1])),
                sigma_pos=run.weights.sigma_pos,
                sigma_dir=run.weights.sigma_dir,
                renormalize_per_bin=cfg.renormalize_per_bin,
                zero_mass=run.result.zero_mass,
                rays=run.result.ray_stats,
                sources=[
                    SourceReport(
                        view=view,
                        w_pos=float(w_pos),
                        w_dir=float(w_dir),
                        mean_coverage=float(warped.coverage.mean()),
                        plane_coverage=warped.coverage_fraction.tolist(),
                    )
                    for view, w_pos, w_dir, warped in zip(
                        views,
                        run.weights.w_pos,
                        run.weights.w_dir,
                        run.warped,
                    )
                ],
            ),
        )
    wrote(args.out, [("source", len(volumes)), ("plane", fused.n_planes)])


@register_command(
    "disparity",
    f"Extract and refine the target disparity ({SUBSTITUTE_TAG}).",
    option("--dpv", type=Path, required=True, help="Fused volume."),
    option("--guide", type=Path, required=True, help="Target image."),
    option("--spatial-radius", type=int),
    option("--plane-radius", type=int),
    option("--bilateral-radius", type=int),
    option("--out", type=Path, required=True),
)
def disparity(args: argparse.Namespace, config: Config) -> None:
    """Write the refined inverse-depth map as PFM."""
    cfg = override(
        config.refine,
        spatial_radius=args.spatial_radius,
        plane_radius=args.plane_radius,
        bilateral_radius=args.bilateral_radius,
    )
    refined = refine_disparity(
        read_dpv(args.dpv), load_image(args.guide), cfg
    )
    write_pfm(args.out, refined.values)
    wrote(args.out)


@register_command(
    "render",
    "Render a light field from an image and its disparity.",
    option("--image", type=Path, required=True),
    option("--disparity", type=Path, required=True, help="PFM map."),
    option("--grid", type=parse_grid, help="Angular grid, e.g. 7x7."),
    option("--mode", choices=[mode.value for mode in FieldMode]),
    option(
        "--disparity-scale",
        type=float,
        help="Pixels per angular step at unit map value.",
    ),
    option("--preview", type=Path, help="Contact sheet of the SAIs."),
    option("--out", type=Path, required=True),
)
def render(args: argparse.Namespace, config: Config) -> None:
    """Backward-warp the image into every SAI."""
    cfg = override(
        config.render,
        grid=args.grid,
        mode=FieldMode(args.mode) if args.mode else None,
        disparity_scale=args.disparity_scale,
    )
    disp = DisparityMap(
        values=read_pfm(args.disparity), unit=LabelUnit.INVERSE_DEPTH
    )
    field = synthesize_disparity_field(disp, cfg)
    rendered = render_light_field(load_image(args.image), field, cfg)
    light_field = rendered.light_field
    write_light_field(args.out, light_field, rendered.masks)
    write_json(
        Path(args.out) / "manifest.json",
        RenderManifest(
            grid=cfg.grid,
            disparity_unit=disp.unit.name.lower(),
            field_mode=cfg.mode.value,
            disparity_scale=cfg.disparity_scale,
            mask_coverage=float(rendered.masks.mean()),
        ),
    )
    if args.preview:
        views = light_field.views
        sheet = tile_views(
            list(views.reshape((-1,) + views.shape[2:])), light_field.cols
        )
        if sheet is not None:
            sheet.save(args.preview, format="PNG")
    wrote(args.out, [("SAI", light_field.rows * light_field.cols)])


def _load_eval_pair(
    args: argparse.Namespace,
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    est = read_pfm(args.est)
    gt = read_pfm(args.gt)
    mask = load_mask(args.mask) if args.mask else None
    if args.rescale != "none":
        est = linear_rescale_to_reference(
            est, gt, invert=args.rescale == "inverse", mask=mask
        )
    if args.normalize:
        est = normalize_range(est, gt, mask)
        gt = normalize_range(gt, gt, mask)
    return est, gt, mask


@register_command(
    "eval",
    "Score a disparity map against ground truth.",
    option("--est", type=Path, required=True),
    option("--gt", type=Path, required=True),
    option("--mask", type=Path, help="PNG; nonzero pixels are scored."),
    option(
        "--rescale",
        choices=("none", "linear", "inverse"),
        default="none",
        help="Match est's range to gt first (inverse: reciprocate first).",
    ),
    option(
        "--normalize",
        action="store_true",
        help="Score both maps mapped by gt's range onto [0, 1].",
    ),
    option("--json", type=Path, required=True),
)
def evaluate(args: argparse.Namespace, config: Config) -> None:
    """MSE, MAE and PPE of a disparity map."""
    est, gt, mask = _load_eval_pair(args)
    report = evaluate_disparity(est, gt, mask)
    write_json(args.json, report)
    say(
        f"MSE {report.mse:.6f}, PPE(0.05) {report.ppe_005:.2f}%, "
        f"PPE(0.1) {report.ppe_01:.2f}% over {report.n_pixels} pixels"
    )


@register_command(
    "eval-lf",
    "Score a rendered light field against ground truth.",
    option("--est", type=Path, required=True, help="Rendered SAIs."),
    option("--gt", type=Path, required=True, help="Ground-truth SAIs."),
    option("--json", type=Path, required=True),
)
def evaluate_lf(args: argparse.Namespace, config: Config) -> None:
    """Per-view PSNR and SSIM, honoring the rendered validity masks."""
    est = read_light_field(args.est)
    gt = read_light_field(args.gt)
    masks = read_masks(args.est, est.rows, est.cols)
    report = evaluate_light_field(est, gt, masks)
    write_json(args.json, report)
    say(
        f"mean PSNR {report.mean_psnr:.2f} dB, mean SSIM "
        f"{report.mean_ssim:.4f} over {len(report.views)} views"
    )


@register_command(
    "init-config",
    "Write the default configuration as TOML.",
    option("--out", type=Path, default=Path("lf_fusion.toml")),
)
def init_config(args: argparse.Namespace, config: Config) -> None:
    """Write the built-in defaults."""
    write_default_config(args.out)
    wrote(args.out)
