"""Seed derivation.

All randomness in the package flows from a single 64-bit run seed through
counter-based Philox streams keyed (seed, domain << 32 | index).  Streams are
independent of scheduling, so parallel or reordered consumers see identical
draws.  Domains keep unrelated consumers (field sampling, path simulation,
estimators) off each other's streams even under the same seed.
"""

import numpy as np

DOMAIN_PATHS = 0
DOMAIN_FIELD = 1
DOMAIN_OBJECTIVE = 2
DOMAIN_FEYNMAN = 3
DOMAIN_GENERATOR = 4
DOMAIN_SAMPLER = 5


def substream(seed, domain, index=0):
    key = np.array(
        [np.uint64(seed), (np.uint64(domain) << np.uint64(32)) | np.uint64(index)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
