"""Binary keep/mask sampling.

Training uses one freshly sampled mask set per step; inference uses a k-way
complementary partition in which every pixel of every sub-image is restored
by exactly one branch. Masks are per-pixel (a single keep/mask decision
broadcast over channels): masking channels independently would leak a pixel
through its surviving channels and defeat the isolation the scheme relies on.

Convention: mask value 1 = kept pixel, 0 = masked (zeroed, to be restored).
"""

from dataclasses import dataclass

import torch

from .core import SubSampleSet
from .util import generator


@dataclass
class MaskSet:
    """One mask per sub-image, stacked (s*s, 1, h, w); broadcasts over channels."""

    masks: torch.Tensor

    def __post_init__(self):
        if self.masks.dim() != 4 or self.masks.shape[1] != 1:
            raise ValueError(f"masks must be (n, 1, h, w), got shape {tuple(self.masks.shape)}")

    def __len__(self):
        return self.masks.shape[0]


@dataclass
class MaskPartition:
    """k complementary MaskSets: per pixel, exactly one branch has mask 0.

    Satisfies sum_i masks_i == (k-1) and sum_i (1 - masks_i) == 1 elementwise.
    """

    branch_masks: list

    def __post_init__(self):
        if len(self.branch_masks) < 2:
            raise ValueError(f"a partition needs k >= 2 branches, got {len(self.branch_masks)}")

    @property
    def k(self):
        return len(self.branch_masks)

    def validate(self):
        total = torch.stack([ms.masks for ms in self.branch_masks]).sum(dim=0)
        if not torch.equal(total, torch.full_like(total, float(self.k - 1))):
            raise ValueError("invalid partition: branch masks do not cover each pixel exactly once")
        return self


def _exact_count_mask(shape, ratio, gen, dtype=torch.float32):
    """(1, h, w) mask with exactly round(ratio*h*w) zeros, uniform without replacement."""
    h, w = shape
    n = h * w
    n_masked = int(round(ratio * n))
    flat = torch.ones(n, dtype=dtype)
    if n_masked > 0:
        idx = torch.randperm(n, generator=gen)[:n_masked]
        flat[idx] = 0.0
    return flat.view(1, h, w)


def sample_mask(shape, ratio, seed):
    """Sample a (1, h, w) keep/mask tensor masking exactly round(ratio*h*w) pixels.

    Deterministic given seed. ratio=0 keeps everything, ratio=1 masks everything.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    if len(shape) != 2 or min(shape) < 1:
        raise ValueError(f"shape must be a positive (h, w) pair, got {shape}")
    return _exact_count_mask(tuple(shape), ratio, generator(seed))


def sample_mask_set(shape, count, ratio, seed):
    """Independent exact-count masks for ``count`` sub-images -> MaskSet."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    gen = generator(seed)
    masks = torch.stack([_exact_count_mask(tuple(shape), ratio, gen) for _ in range(count)])
    return MaskSet(masks)


def sample_partition(shape, s, k, seed):
    """Sample a k-way complementary mask partition over s*s sub-images.

    Every pixel of every sub-image lands in exactly one branch's restored
    (mask==0) set; per-branch restored counts within one sub-image differ by
    at most 1. Deterministic given seed.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if s < 1:
        raise ValueError(f"stride must be >= 1, got {s}")
    h, w = shape
    n = h * w
    gen = generator(seed)
    branch_masks = torch.ones(k, s * s, 1, h, w)
    for sub in range(s * s):
        perm = torch.randperm(n, generator=gen)
        # k contiguous chunks of the permutation, sizes differing by at most 1
        for i, chunk in enumerate(torch.tensor_split(perm, k)):
            branch_masks[i, sub, 0].view(-1)[chunk] = 0.0
    return MaskPartition([MaskSet(branch_masks[i]) for i in range(k)])


def apply_mask(subs, mask_set):
    """Zero the masked pixels of every sub-image: returns masks * subs."""
    if len(subs) != len(mask_set) or subs.subs.shape[-2:] != mask_set.masks.shape[-2:]:
        raise ValueError(
            f"mask/sub-image shape mismatch: subs {tuple(subs.subs.shape)} "
            f"vs masks {tuple(mask_set.masks.shape)}"
        )
    return SubSampleSet(subs.subs * mask_set.masks, subs.stride)


def complement(m):
    """Elementwise 1 - m; accepts a mask tensor, MaskSet, or MaskPartition."""
    if isinstance(m, MaskPartition):
        return MaskPartition([complement(ms) for ms in m.branch_masks])
    if isinstance(m, MaskSet):
        return MaskSet(1.0 - m.masks)
    return 1.0 - m
