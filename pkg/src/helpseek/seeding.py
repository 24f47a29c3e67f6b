"""Stable keys and per-rollout RNG streams."""

from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np


def stable_int(value: Any) -> int:
    """64-bit key that is stable across processes (unlike ``hash``)."""
    if isinstance(value, (int, np.integer)) and value >= 0:
        return int(value)
    digest = hashlib.blake2b(str(value).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *keys: Any) -> np.random.Generator:
    """Independent generator for one (seed, keys) tuple.

    Every rollout draws from its own stream, so results do not depend on the
    order in which rollouts are scheduled.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([stable_int(seed)] + [stable_int(k) for k in keys])))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]
