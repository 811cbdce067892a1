"""Deterministic derivation of independent random streams.

Every random draw in this package comes from a numpy ``Generator`` backed
by the PCG64 bit generator.  Sub-streams (one per trial, per fold, ...)
are seeded by hashing the master seed together with a tag and integer
components:

    material = "trajid|<master>|<tag>|<c0>|<c1>|..."   (ASCII, '|'-joined)
    seed     = first 8 bytes of SHA-256(material), big-endian unsigned

This makes any stream reconstructable in isolation, so trials and folds
can be generated in parallel or on their own without replaying the whole
sequence.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, tag: str, *components: int) -> int:
    """Derive a 64-bit sub-seed from a master seed, a tag, and components."""
    parts = ["trajid", str(int(master_seed)), tag]
    parts.extend(str(int(c)) for c in components)
    digest = hashlib.sha256("|".join(parts).encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def generator(master_seed: int, tag: str, *components: int) -> np.random.Generator:
    """A PCG64 generator seeded with :func:`derive_seed` of the arguments."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, tag, *components)))


def round_half_up(x: float) -> int:
    """Round to the nearest integer, halves away from zero upward.

    Python's built-in ``round`` rounds halves to even; the conventions in
    this package (subset selection, percentage rendering, sample counts)
    all use half-up so independent implementations agree.
    """
    return int(np.floor(x + 0.5))
