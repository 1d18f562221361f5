"""Stable hashing for seed derivation; independent of PYTHONHASHSEED."""

import hashlib


def stable_int(*parts, bits: int = 32) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (1 << bits)


def stable_uniform(*parts) -> float:
    """Deterministic value in [0, 1)."""
    return stable_int(*parts, bits=53) / float(1 << 53)


def config_hash(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
