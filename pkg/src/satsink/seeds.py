"""Named random sub-streams derived from one master seed."""

import numpy as np

STREAMS = {"patches": 1, "holdout": 2, "folds": 3, "corpus": 4, "sampling": 5}


def derive_seed(master: int, stream: str) -> int:
    """Stable per-component seed so components can be re-seeded independently."""
    if stream not in STREAMS:
        raise ValueError(f"unknown seed stream {stream!r}")
    seq = np.random.SeedSequence([int(master), STREAMS[stream]])
    return int(seq.generate_state(1, np.uint64)[0])
