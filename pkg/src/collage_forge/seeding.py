"""Deterministic seed derivation for reproducible runs.

Seeds are split from one master seed with a hash-based scheme instead of a
shared generator, so every plan (and every substream inside a plan) gets an
independent stream. Rendering order and worker count then cannot perturb
any draw.
"""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, *parts: int | str) -> int:
    """Derive a 64-bit unsigned seed from the master seed and a label path.

    Same inputs always give the same output, across platforms and runs.
    """
    message = ":".join([str(master_seed), *(str(p) for p in parts)])
    digest = hashlib.sha256(message.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
