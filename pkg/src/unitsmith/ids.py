"""Stable content identifiers.

All ids in the pipeline are 128-bit BLAKE2b hex digests so that identical
inputs always map to identical ids across runs and machines. The algorithm
name is recorded in output manifests as ``blake2b-128``.
"""

from __future__ import annotations

import hashlib

HASH_ALGORITHM = "blake2b-128"

_SEP = b"\x1f"


def content_id(*parts: str) -> str:
    """Hash one or more text parts into a stable hex id.

    Parts are length-prefix separated so ("ab", "c") and ("a", "bc")
    never collide.
    """
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        raw = part.encode("utf-8")
        h.update(str(len(raw)).encode("ascii"))
        h.update(_SEP)
        h.update(raw)
    return h.hexdigest()
