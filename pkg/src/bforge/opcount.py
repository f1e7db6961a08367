"""Tallies of the array work done by the sampler's hot path.

Every vectorized operation in the sampler processes an extent that depends
only on the problem sizes (number of points, predictors, trees, and the
maximum tree depth), never on data values or random outcomes.  Tests and
benchmarks assert that property by running `collect` around two differently
seeded runs and comparing the tallies.

Granularity: tallies cover the vectorized array operations.  O(1) scalar
bookkeeping per tree (writing a cutpoint, flipping a node flag) is below
the tally threshold and is not counted.
"""

from collections import Counter
from contextlib import contextmanager
from typing import Iterator

_collectors: list[Counter] = []


def tally(site: str, elements: int) -> None:
    """Record that `site` processed `elements` array elements."""
    if _collectors:
        for counter in _collectors:
            counter[site] += int(elements)


@contextmanager
def collect() -> Iterator[Counter]:
    """Collect (site -> element count) tallies for the enclosed block."""
    counter: Counter = Counter()
    _collectors.append(counter)
    try:
        yield counter
    finally:
        _collectors.remove(counter)
