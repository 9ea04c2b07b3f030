"""Seeded noise: SHA-256 of (salt, tag, payload) turned into a Gaussian.

Payload encodings are fixed so two implementations agree bit for bit:
user ids are little-endian 64-bit integers, tags are UTF-8 strings and
the hash input is ``salt || 0x00 || tag || 0x00 || payload``.
"""

from __future__ import annotations

import hashlib
import math
import struct

import numpy as np

from qbs_audit_core.protocol import NOISE_STD, THRESHOLD_MEAN, THRESHOLD_STD

THRESHOLD_TAG = "threshold"
STATIC_TAG = "static"
DYNAMIC_TAG = "dynamic"
NO_CONDITIONS_TAG = "no-conditions"

_U64_SPAN = float(2**64 + 1)


def _to_bytes(value: str | bytes) -> bytes:
    return value.encode("utf-8") if isinstance(value, str) else value


def seeded_gaussian(
    salt: bytes,
    tag: str | bytes,
    payload: bytes,
    mu: float = 0.0,
    sigma: float = 1.0,
) -> float:
    """Deterministic N(mu, sigma**2) draw keyed by (salt, tag, payload)."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}.")
    if sigma == 0:
        return float(mu)
    digest = hashlib.sha256(salt + b"\x00" + _to_bytes(tag) + b"\x00" + payload).digest()
    first, second = struct.unpack("<QQ", digest[:16])
    u1 = (first + 1) / _U64_SPAN
    u2 = (second + 1) / _U64_SPAN
    z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
    return mu + sigma * z


def ids_bytes(sorted_ids: np.ndarray) -> bytes:
    return np.ascontiguousarray(sorted_ids, dtype="<u8").tobytes()


def userset_digest(sorted_ids: np.ndarray, stats: bool = False) -> bytes:
    """8-byte XOR of the ids, or (min, max, count) as three u64 when *stats*."""
    ids = np.asarray(sorted_ids, dtype=np.uint64)
    if stats:
        if not len(ids):
            return struct.pack("<QQQ", 0, 0, 0)
        return struct.pack("<QQQ", int(ids.min()), int(ids.max()), len(ids))
    xor = int(np.bitwise_xor.reduce(ids)) if len(ids) else 0
    return struct.pack("<Q", xor)


def noisy_threshold(salt: bytes, sorted_ids: np.ndarray) -> float:
    return seeded_gaussian(salt, THRESHOLD_TAG, ids_bytes(sorted_ids), THRESHOLD_MEAN, THRESHOLD_STD)


def condition_noise(salt: bytes, condition_key: bytes, digest: bytes) -> tuple[float, float]:
    """(static, dynamic) noise of one condition given its canonical bytes."""
    static = seeded_gaussian(salt, STATIC_TAG, condition_key, 0.0, NOISE_STD)
    dynamic = seeded_gaussian(salt, DYNAMIC_TAG, condition_key + digest, 0.0, NOISE_STD)
    return static, dynamic


def no_conditions_noise(salt: bytes, digest: bytes) -> tuple[float, float]:
    """The single noise pair added to a condition-free query."""
    static = seeded_gaussian(salt, NO_CONDITIONS_TAG, b"", 0.0, NOISE_STD)
    dynamic = seeded_gaussian(salt, NO_CONDITIONS_TAG, digest, 0.0, NOISE_STD)
    return static, dynamic
