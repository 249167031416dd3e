"""Deterministic seed and id derivation.

Every pipeline job gets its own 64-bit seed derived from the master seed and
the job's coordinates, so parallel and serial runs produce identical output.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1


def _digest(parts: tuple[object, ...]) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")  # separator so ("ab","c") != ("a","bc")
    return h.digest()


def derive_seed(*parts: object) -> int:
    """Derive a stable unsigned 64-bit seed from arbitrary parts."""
    return int.from_bytes(_digest(parts)[:8], "big") & _MASK64


def stable_id(*parts: object, length: int = 12) -> str:
    """Derive a short stable hex id from arbitrary parts."""
    return _digest(parts).hex()[:length]
