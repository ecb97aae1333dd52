"""Named random substreams derived from a single run seed.

Every stage of a run (weight init, augmentation, splits, ...) draws from its
own substream so that changing the number of draws in one stage cannot shift
the randomness seen by another. Substreams are derived through
``numpy.random.SeedSequence`` keyed on (run seed, stream tag, *extra ints).
"""

from __future__ import annotations

import numpy as np

# Fixed tags; never renumber, or old runs stop being reproducible.
STREAM_TAGS = {
    "init": 1,
    "augment": 2,
    "mask": 3,
    "split": 4,
    "probe": 5,
    "theory": 6,
    "sbm": 7,
}


def _entropy(seed: int, stream: str, extra: tuple[int, ...]) -> list[int]:
    if seed < 0:
        raise ValueError("run seed must be non-negative")
    tag = STREAM_TAGS[stream]
    return [seed, tag, *extra]


def substream(seed: int, stream: str, *extra: int) -> np.random.Generator:
    """Generator for the named substream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, stream, extra)))


def substream_seed(seed: int, stream: str, *extra: int) -> int:
    """Integer seed for the named substream (for APIs that record a seed)."""
    ss = np.random.SeedSequence(_entropy(seed, stream, extra))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def node_rng(view_seed: int, node: int) -> np.random.Generator:
    """Per-node generator inside one augmented view.

    Derived from (view seed, node index) only, so per-node sampling is
    independent of the order nodes are processed in.
    """
    return np.random.default_rng(np.random.SeedSequence([view_seed, node]))
