"""Counter-based random streams keyed by (master seed, stream, replicate, ...).

Each key spawns an independent Philox generator, so replicates can be produced
in any order, or concurrently, and still come out bit-identical.  Within one
stream the Philox counter advances in cell order.
"""
import numpy as np

STREAMS = {
    "field": 0,
    "smoothing": 1,
    "sheet": 2,
    "calibration": 3,
    "calibration_smoothing": 4,
    "verify": 5,
}


def stream(master_seed: int, name: str, replicate: int = 0, *extra: int) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError("master seed must be non-negative")
    key = (STREAMS[name], int(replicate)) + tuple(int(x) for x in extra)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))
