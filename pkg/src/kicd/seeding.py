"""Deterministic seed derivation.

Seeds are 63-bit integers; the top bit selects a domain so that training,
validation and evaluation draws come from disjoint seed ranges.
"""

import numpy as np

TRAIN, EVAL = 0, 1
_DOMAIN_BITS = 62


def derive_seed(domain: int, *keys: int) -> int:
    if domain not in (TRAIN, EVAL):
        raise ValueError(f"unknown seed domain {domain}")
    state = np.random.SeedSequence([domain, *(int(k) for k in keys)]).generate_state(2, np.uint32)
    low = (int(state[0]) << 32 | int(state[1])) & ((1 << _DOMAIN_BITS) - 1)
    return domain << _DOMAIN_BITS | low


def seed_domain(seed: int) -> int:
    return seed >> _DOMAIN_BITS
