# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Application config."""
from typing import Any, Optional
import os
from pathlib import Path

import attr
import tomlkit
from cattr.preconf.tomlkit import make_converter
from tomlkit.exceptions import ParseError as TomlParseError

try:
    from cattrs.errors import BaseValidationError
except ImportError:  # cattrs < 22 raises the underlying error
    BaseValidationError = ValueError

from lf_fusion.colmap import DepthRangeConfig
from lf_fusion.errors import ContainerFormatError, LfFusionError
from lf_fusion.estimation import PlaneSweepConfig
from lf_fusion.fusion import FusionConfig
from lf_fusion.refine import RefineConfig
from lf_fusion.render import RenderConfig
from lf_fusion.scvr import ScvrConfig

_converter = make_converter()

CONFIG_PATH = os.getenv("LF_FUSION_CONFIG_PATH", "lf_fusion.toml")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@attr.s(auto_attribs=True)
class Config:
    """Application wide config."""

    log_level: str = attr.ib(
        default="INFO", validator=attr.validators.in_(LOG_LEVELS)
    )
    threads: int = 1
    plane_sweep: PlaneSweepConfig = attr.ib(factory=PlaneSweepConfig)
    scvr: ScvrConfig = attr.ib(factory=ScvrConfig)
    fusion: FusionConfig = attr.ib(factory=FusionConfig)
    refine: RefineConfig = attr.ib(factory=RefineConfig)
    render: RenderConfig = attr.ib(factory=RenderConfig)
    depth_range: DepthRangeConfig = attr.ib(factory=DepthRangeConfig)


def _tomlable(value: Any) -> Any:
    """TOML has no null: leave unset options out. Tuples become arrays."""
    if isinstance(value, dict):
        return {k: _tomlable(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_tomlable(v) for v in value]
    return value


def dumps_config(config: Config) -> str:
    """The config as a TOML document."""
    return tomlkit.dumps(_tomlable(_converter.unstructure(config)))


def write_default_config(path: Path) -> None:
    """Write the built-in defaults to ``path``."""
    Path(path).write_text(dumps_config(Config()), encoding="utf-8")


def load_config(path: Optional[Path] = None) -> Config:
    """Load the config from ``path`` (or CONFIG_PATH); defaults if absent."""
    config_path = Path(path or CONFIG_PATH)
    if not config_path.is_file():
        if path is not None:
            raise ContainerFormatError(f"config file {path} does not exist")
        return Config()
    with open(config_path, encoding="utf-8") as f:
        try:
            document = tomlkit.loads(f.read())
        except TomlParseError as e:
            raise ContainerFormatError(f"{config_path}: {e}") from e
    try:
        return _converter.structure(document, Config)
    except (
        KeyError,
        TypeError,
        ValueError,
        LfFusionError,
        BaseValidationError,
    ) as e:
        raise ContainerFormatError(f"{config_path}: {e}") from e


def write_sweep_config(path: Path, d_min: float, d_max: float) -> None:
    """Write the defaults with the plane sweep limited to [d_min, d_max]."""
    config = Config()
    config.plane_sweep = attr.evolve(
        config.plane_sweep, d_min=d_min, d_max=d_max
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps_config(config), encoding="utf-8")
