"""Counter-based random streams keyed by ``(seed, replica_id, substream)``.

Each replica draws from its own Philox stream, so the draws a replica sees do
not depend on how replicas are split across workers.
"""

import numpy as np

STREAM_ALGORITHM = "philox4x64-10; key = SeedSequence([seed, replica, substream]).generate_state(2, uint64)"

#: substream used for initial configurations
INIT = 0
#: substream used for Brownian increments
NOISE = 1
#: substream for auxiliary draws (completing initial gaps, standalone samples)
AUX = 2


def stream_key(seed, replica_id, substream):
    """Return the 128-bit Philox key as two uint64 words."""
    if seed < 0 or replica_id < 0 or substream < 0:
        raise ValueError("seed, replica_id and substream must be nonnegative")
    ss = np.random.SeedSequence([int(seed), int(replica_id), int(substream)])
    return ss.generate_state(2, np.uint64)


def replica_stream(seed, replica_id, substream=NOISE):
    """Generator for one replica and substream."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replica_id, substream)))


def stream_map(seed, replica_ids, substream=NOISE):
    """Replica id -> hex key, for provenance records."""
    out = {}
    for r in replica_ids:
        k = stream_key(seed, r, substream)
        out[int(r)] = f"{int(k[0]):016x}{int(k[1]):016x}"
    return out
