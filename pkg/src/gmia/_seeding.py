import hashlib
import struct

import numpy as np


def hash64(*parts: int | str) -> int:
    """Derive a 64-bit seed from an ordered tuple of ints/strings."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode())
        else:
            h.update(b"i" + struct.pack("<q", int(part) & 0x7FFFFFFFFFFFFFFF))
    return int.from_bytes(h.digest(), "little") & 0x7FFFFFFFFFFFFFFF


def rng(*parts: int | str) -> np.random.Generator:
    return np.random.default_rng(hash64(*parts))
