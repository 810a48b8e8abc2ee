# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Scale-consistent volume rescaling against sparse depth anchors."""
from typing import List, Optional, Sequence, Tuple
from logging import getLogger

import attr
import numpy as np
from numpy.typing import ArrayLike

from lf_fusion.core import expected_label, normalize_dpv, normalize_probs
from lf_fusion.errors import (
    ExcessiveTrimError,
    FrameError,
    InvalidMappingError,
    LfFusionError,
    ParameterError,
    ResampleError,
    SingularSystemError,
)
from lf_fusion.models import AnchorObservation, DisparityMap, Dpv, LabelUnit
from lf_fusion.util.image import bilinear_sample

logger = getLogger("scvr")

# Units whose labels behave like disparity under the mapping
DISPARITY_LIKE = (LabelUnit.SOURCE_DISPARITY, LabelUnit.INVERSE_DEPTH)
RESAMPLE_SPANS = ("kappa", "surviving")
TRIM_TOLERANCE = 1e-9


@attr.s(auto_attribs=True, slots=True, frozen=True)
class ScaleMapping:
    """depth = alpha / label + beta, plus fit diagnostics."""

    alpha: float
    beta: float
    rms_error: float = 0.0
    n_anchors: int = 0

    def __attrs_post_init__(self) -> None:
        if self.alpha == 0:
            raise ParameterError("alpha must be nonzero")
        if self.rms_error < 0:
            raise ParameterError("rms_error must be >= 0")

    @property
    def distance_from_identity(self) -> float:
        """|alpha - 1| + |beta|."""
        return abs(self.alpha - 1.0) + abs(self.beta)


@attr.s(auto_attribs=True, slots=True, frozen=True)
class ScvrConfig:
    """Iteration controls."""

    iterations: int = 7
    convergence_eps: float = 1e-6
    min_surviving_planes: int = 4
    resample_span: str = "kappa"
    n_planes: Optional[int] = None

    def __attrs_post_init__(self) -> None:
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1: {self.iterations}")
        if self.convergence_eps <= 0:
            raise ParameterError("convergence_eps must be > 0")
        if self.min_surviving_planes < 2:
            raise ParameterError("min_surviving_planes must be >= 2")
        if self.resample_span not in RESAMPLE_SPANS:
            raise ParameterError(
                f"resample_span must be one of {RESAMPLE_SPANS}"
            )
        if self.n_planes is not None and self.n_planes < 2:
            raise ParameterError("n_planes must be >= 2")


@attr.s(auto_attribs=True, slots=True, frozen=True)
class ScvrIteration:
    """What one rescaling round did."""

    iteration: int
    mapping: ScaleMapping
    planes_kept: int


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class ScvrResult:
    """Rescaled volume (inverse depth) and the per-round history."""

    volume: Dpv
    history: List[ScvrIteration]
    converged: bool


def solve_scale_mapping(
    disparities: ArrayLike, depths: ArrayLike
) -> ScaleMapping:
    """Least squares fit of depth = alpha / disparity + beta."""
    d = np.asarray(disparities, dtype=np.float64).ravel()
    z = np.asarray(depths, dtype=np.float64).ravel()
    usable = np.isfinite(d) & (d != 0)
    if not usable.all():
        logger.debug(
            "skipping %d anchors with zero disparity", (~usable).sum()
        )
    d, z = d[usable], z[usable]
    if np.unique(d).size < 2:
        raise SingularSystemError(
            f"need 2 anchors with distinct disparities, got {d.size} "
            f"usable anchors"
        )
    system = np.stack([1.0 / d, np.ones_like(d)], axis=1)
    (alpha, beta), *_ = np.linalg.lstsq(system, z, rcond=None)
    if alpha == 0:
        raise SingularSystemError("fit degenerated to alpha = 0")
    residual = system @ np.array([alpha, beta]) - z
    return ScaleMapping(
        alpha=float(alpha),
        beta=float(beta),
        rms_error=float(np.sqrt(np.mean(residual ** 2))),
        n_anchors=int(d.size),
    )


def fit_scale_mapping(
    disparity: DisparityMap, anchors: Sequence[AnchorObservation]
) -> ScaleMapping:
    """Fit the mapping between a disparity map and anchor depths."""
    if disparity.unit not in DISPARITY_LIKE:
        raise FrameError(
            f"cannot fit a mapping on {disparity.unit.name} values"
        )
    xs = np.array([a.x for a in anchors], dtype=np.float64)
    ys = np.array([a.y for a in anchors], dtype=np.float64)
    sampled, _ = bilinear_sample(disparity.values, xs, ys)
    return solve_scale_mapping(sampled, [a.z for a in anchors])


def apply_mapping(dpv: Dpv, mapping: ScaleMapping) -> Dpv:
    """Relabel every plane with its world depth; probabilities are kept."""
    if dpv.label_unit not in DISPARITY_LIKE:
        raise FrameError(f"cannot map {dpv.label_unit.name} labels")
    zero = np.flatnonzero(dpv.labels == 0)
    if zero.size:
        raise InvalidMappingError(
            "plane label 0 has no depth", plane_index=int(zero[0])
        )
    depths = mapping.alpha / dpv.labels + mapping.beta
    bad = np.flatnonzero(~(depths > 0))
    if bad.size:
        k = int(bad[0])
        raise InvalidMappingError(
            f"plane {k} (label {dpv.labels[k]:g}) maps to depth "
            f"{depths[k]:g}",
            plane_index=k,
        )
    return Dpv(
        labels=depths,
        probs=dpv.probs,
        label_unit=LabelUnit.WORLD_DEPTH,
        normalized=dpv.normalized,
    )


def trim_planes(
    dpv: Dpv, kappa: Tuple[float, float], min_planes: int = 2
) -> Dpv:
    """Drop planes whose depth lies outside the trusted range."""
    if dpv.label_unit != LabelUnit.WORLD_DEPTH:
        raise FrameError(f"trimming needs depths, got {dpv.label_unit.name}")
    low, high = kappa
    tol = TRIM_TOLERANCE * max(abs(low), abs(high))
    keep = (dpv.labels >= low - tol) & (dpv.labels <= high + tol)
    kept = int(keep.sum())
    if kept < min_planes:
        raise ExcessiveTrimError(
            f"{kept} planes inside ({low:g}, {high:g}), need {min_planes}"
        )
    logger.debug("trim kept %d of %d planes", kept, dpv.n_planes)
    return Dpv.build(dpv.labels[keep], dpv.probs[keep], LabelUnit.WORLD_DEPTH)


def resample_planes(
    dpv: Dpv,
    n_planes: int,
    span: Optional[Tuple[float, float]] = None,
) -> Dpv:
    """
    Interpolate a depth-labelled volume onto planes uniform in inverse
    depth.

    Without ``span`` the new planes run from the first to the last input
    plane. With ``span`` they run from ``span[0]`` to ``span[1]`` and planes
    outside the input support get no mass before renormalization.
    """
    if dpv.label_unit != LabelUnit.WORLD_DEPTH:
        raise FrameError(
            f"resampling needs depths, got {dpv.label_unit.name}"
        )
    if dpv.n_planes < 2:
        raise ResampleError(f"cannot interpolate {dpv.n_planes} plane(s)")
    if n_planes < 2:
        raise ParameterError(f"need at least 2 target planes: {n_planes}")
    inverse = 1.0 / dpv.labels
    if span is None:
        grid = np.linspace(inverse[0], inverse[-1], n_planes)
    else:
        grid = np.linspace(span[0], span[1], n_planes)
    order = np.argsort(inverse)
    knots = inverse[order]
    values = dpv.probs[order]
    idx = np.clip(
        np.searchsorted(knots, grid, side="right") - 1, 0, knots.size - 2
    )
    t = (grid - knots[idx]) / (knots[idx + 1] - knots[idx])
    tol = 1e-12 * max(abs(knots[0]), abs(knots[-1]))
    inside = (grid >= knots[0] - tol) & (grid <= knots[-1] + tol)
    t = np.clip(t, 0.0, 1.0)[:, None, None]
    probs = (1.0 - t) * values[idx] + t * values[idx + 1]
    probs[~inside] = 0.0
    probs, zero_mass = normalize_probs(probs)
    if zero_mass:
        logger.warning(
            "%d pixels lost all mass in resampling, set uniform", zero_mass
        )
    return Dpv.build(grid, probs, LabelUnit.INVERSE_DEPTH)


def scvr_run(
    dpv: Dpv,
    anchors: Sequence[AnchorObservation],
    kappa: Tuple[float, float],
    cfg: Optional[ScvrConfig] = None,
) -> ScvrResult:
    """Iteratively rescale a volume into world-consistent inverse depth."""
    cfg = cfg or ScvrConfig()
    n_planes = cfg.n_planes or dpv.n_planes
    span = None
    if cfg.resample_span == "kappa":
        span = (1.0 / kappa[1], 1.0 / kappa[0])
    current = dpv if dpv.normalized else normalize_dpv(dpv)
    history: List[ScvrIteration] = []
    converged = False
    for iteration in range(1, cfg.iterations + 1):
        try:
            mapping = fit_scale_mapping(expected_label(current), anchors)
            trimmed = trim_planes(
                apply_mapping(current, mapping),
                kappa,
                cfg.min_surviving_planes,
            )
            current = resample_planes(trimmed, n_planes, span)
        except LfFusionError as e:
            raise e.annotate(f"iteration {iteration}")
        history.append(
            ScvrIteration(
                iteration=iteration,
                mapping=mapping,
                planes_kept=trimmed.n_planes,
            )
        )
        logger.debug(
            "iteration %d: alpha=%.6g beta=%.6g rms=%.3g kept=%d",
            iteration,
            mapping.alpha,
            mapping.beta,
            mapping.rms_error,
            trimmed.n_planes,
        )
        if mapping.distance_from_identity < cfg.convergence_eps:
            converged = True
            break
    logger.info(
        "SCVR finished after %d iterations (%s)",
        len(history),
        "converged" if converged else "iteration cap",
    )
    return ScvrResult(volume=current, history=history, converged=converged)
