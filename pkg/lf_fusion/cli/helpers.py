# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Utilities shared by the CLI commands."""
from typing import Any, Callable, List, Optional, Sequence, Tuple, TypeVar
from logging import getLogger
from pathlib import Path

import attr

from lf_fusion.errors import FusionError
from lf_fusion.models import CameraModel, Dpv
from lf_fusion.util.dpv_file import read_dpv
from lf_fusion.util.text import capfirst, describe_counts

logger = getLogger("cli_helpers")

T = TypeVar("T")


def override(cfg: T, **values: Any) -> T:
    """Copy of an attrs config with every non-None value replaced."""
    changes = {k: v for k, v in values.items() if v is not None}
    return attr.evolve(cfg, **changes) if changes else cfg


def say(message: str) -> None:
    """Print a one-line summary for the user."""
    print(capfirst(message))


def wrote(path: Path, counts: Sequence[Tuple[str, int]] = ()) -> None:
    """Announce an artifact, optionally with what it holds."""
    if counts:
        say(f"wrote {describe_counts(counts)} to {path}")
    else:
        say(f"wrote {path}")


def view_name(path: Path) -> str:
    """The view a per-view artifact belongs to: its file stem."""
    return Path(path).stem


def load_sources(
    paths: Sequence[Path],
    names: Optional[Sequence[str]],
    camera_of: Callable[[str], CameraModel],
) -> Tuple[List[Dpv], List[CameraModel], List[str]]:
    """Read source volumes and look up their cameras by view name."""
    views = list(names) if names else [view_name(p) for p in paths]
    if len(views) != len(paths):
        raise FusionError(
            f"{len(paths)} volumes but {len(views)} view names given"
        )
    volumes = [read_dpv(Path(p)) for p in paths]
    cameras = [camera_of(name) for name in views]
    logger.debug("loaded sources %s", ", ".join(views))
    return volumes, cameras, views
