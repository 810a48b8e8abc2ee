# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Thread pool helpers; results always come back in input order."""
from typing import Callable, Iterable, List, TypeVar
from concurrent.futures import ThreadPoolExecutor

from lf_fusion.errors import ParameterError

T = TypeVar("T")
R = TypeVar("R")

_threads = 1


def set_threads(threads: int) -> None:
    """Bound the number of worker threads used by `parallel_map`."""
    global _threads  # pylint: disable=global-statement
    if threads < 1:
        raise ParameterError(f"thread count must be >= 1, got {threads}")
    _threads = threads


def get_threads() -> int:
    """Current worker thread bound."""
    return _threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """Apply ``fn`` to every item, in parallel when threads allow."""
    items_ = list(items)
    if _threads == 1 or len(items_) < 2:
        return [fn(item) for item in items_]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, items_))
