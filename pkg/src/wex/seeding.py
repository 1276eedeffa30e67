"""Stable per-call seed derivation so reruns hit backends with identical requests."""

import hashlib


def derive_seed(root: int, *tags) -> int:
    """Fold a root seed and string/int tags into a uint32, stable across runs."""
    text = str(int(root)) + "/" + "/".join(str(t) for t in tags)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")
