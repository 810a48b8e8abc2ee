# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""JSON serialization of reports, manifests and scene descriptions."""
from typing import Any, Dict, Optional, Type
from pathlib import Path

import numpy as np
import rapidjson
from cattr import GenConverter
from cattr.preconf.json import make_converter

from lf_fusion.errors import ContainerFormatError

converter: GenConverter = make_converter()


def unstructure_array(a: np.ndarray) -> Any:
    """Nested lists of Python scalars."""
    return a.tolist()


def structure_array(obj: Any, _: Any) -> np.ndarray:
    """Nested lists back into a float64 array."""
    return np.asarray(obj, dtype=np.float64)


converter.register_unstructure_hook(np.ndarray, unstructure_array)
converter.register_structure_hook(np.ndarray, structure_array)


def register_tagged(base: Type[Any], types: Dict[str, Type[Any]]) -> None:
    """Serialize subclasses of ``base`` with a ``_t`` type tag."""

    def unstructure(o: Any) -> Dict[str, Any]:
        return {
            "_t": o.__class__.__name__,
            **converter.unstructure_attrs_asdict(o),
        }

    def structure(obj: Dict[str, Any], _: Any) -> Any:
        fields = dict(obj)
        tag = fields.pop("_t", None)
        if tag not in types:
            raise ContainerFormatError(
                f"unknown {base.__name__} type {tag!r}"
            )
        return converter.structure_attrs_fromdict(fields, types[tag])

    converter.register_structure_hook(base, structure)
    converter.register_unstructure_hook(base, unstructure)


def dumps_json(obj: Any, unstructure_as: Optional[Any] = None) -> str:
    """Sorted, indented JSON with a trailing newline."""
    data = converter.unstructure(obj, unstructure_as=unstructure_as)
    return rapidjson.dumps(data, indent=2, sort_keys=True) + "\n"


def write_json(
    path: Path, obj: Any, unstructure_as: Optional[Any] = None
) -> None:
    """Write `dumps_json` output to ``path``."""
    Path(path).write_text(dumps_json(obj, unstructure_as), encoding="utf-8")


def read_json(path: Path) -> Any:
    """Parse a JSON file."""
    try:
        return rapidjson.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as e:
        raise ContainerFormatError(f"{path}: invalid JSON: {e}") from e
