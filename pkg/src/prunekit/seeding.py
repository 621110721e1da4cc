"""Deterministic per-trial seed derivation."""

from __future__ import annotations

import hashlib
import struct

import numpy as np


def seed_stream(master_seed: int, trial_index: int) -> int:
    """64-bit child seed for ``trial_index`` under ``master_seed``.

    Counter-mode BLAKE2b of the (seed, index) pair, so children for distinct
    indices are independent and do not depend on evaluation order.
    """
    payload = struct.pack("<qq", int(master_seed), int(trial_index))
    digest = hashlib.blake2b(payload, digest_size=8, person=b"prunekit-seed").digest()
    return int.from_bytes(digest, "little")


def rng_for(master_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(seed_stream(master_seed, trial_index))
