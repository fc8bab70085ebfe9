"""Stable seed derivation so every component is independently reproducible."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *components: object) -> int:
    """Hash a master seed and component labels into a 32-bit seed."""

    payload = "\x1f".join([str(master), *(str(c) for c in components)])
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def make_rng(master: int, *components: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *components))
