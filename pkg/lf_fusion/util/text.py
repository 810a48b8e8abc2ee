# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Utilities for building human-readable summaries."""
from typing import Sequence, Tuple

from inflect import engine

p = engine()


def capfirst(s: str) -> str:
    """Capitalize the first character of a string."""
    if not s:
        return s
    return s[0].upper() + s[1:]


def count_of(noun: str, count: int) -> str:
    """'no planes', '1 plane', '12 planes'."""
    return str(p.no(noun, count))


def describe_counts(counts: Sequence[Tuple[str, int]]) -> str:
    """Join counted nouns into one phrase, e.g. '3 views and 1 anchor'."""
    if not counts:
        return "nothing"
    return str(p.join([count_of(noun, n) for noun, n in counts]))


def parse_grid(text: str) -> Tuple[int, int]:
    """Parse an angular grid written as 'MxN'."""
    rows, sep, cols = text.lower().partition("x")
    if not sep:
        raise ValueError(f"grid must look like 7x7, got {text!r}")
    return int(rows), int(cols)


def view_file_name(row: int, col: int) -> str:
    """PNG file name of SAI (row, col)."""
    return f"r{row}_c{col}.png"
