"""Small shared helpers: seed derivation and tensor coercion."""

import zlib

import torch


def derive_seed(base, *parts):
    """Derive a stable sub-seed from a base seed and a tag sequence.

    Uses crc32 over the repr of the parts so derived streams (mask sampling,
    patch sampling, per-image partitions, ...) never collide just because
    their step counters happen to coincide. Stable across processes and
    platforms, unlike the builtin ``hash``.
    """
    h = zlib.crc32(repr((int(base),) + tuple(parts)).encode("utf-8"))
    return int(h) & 0x7FFFFFFF


def generator(seed):
    """CPU torch generator seeded with ``seed``."""
    g = torch.Generator(device="cpu")
    g.manual_seed(int(seed))
    return g


def chw(img):
    """Coerce an image-like object to its raw (c, h, w) float tensor."""
    data = getattr(img, "data", img)
    if not torch.is_tensor(data):
        data = torch.as_tensor(data)
    if data.dim() != 3:
        raise ValueError(f"expected a (c, h, w) image tensor, got shape {tuple(data.shape)}")
    return data
