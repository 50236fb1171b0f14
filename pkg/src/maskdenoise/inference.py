"""Full-image denoising by complementary multi-branch masking.

Each of k branches zeroes its own share of pixels, denoises the masked
sub-images, and keeps only the restored positions; the branch outputs sum to
a full image in which every pixel was predicted while hidden from the
network, so the pipeline structurally cannot pass input pixels through.
An optional random-replacement refinement re-denoises T randomly spliced
noisy/intermediate mixtures at full resolution and averages.
"""

from dataclasses import dataclass, field, replace

import torch

from .core import ImageTensor, SubSampleSet, crop, pad_reflect, pd_merge_batch, pd_split_batch
from .masking import MaskPartition, sample_partition
from .util import chw, derive_seed, generator


@dataclass
class RefineConfig:
    enabled: bool = False
    T: int = 8
    p: float = 0.16

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"refinement replication count must be >= 1, got {self.T}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"replacement probability must lie in [0, 1], got {self.p}")


@dataclass
class InferConfig:
    s_inf: int = 2
    k: int = 2
    seed: int = 0
    refine: RefineConfig = field(default_factory=RefineConfig)
    tile: int | None = None
    tile_overlap: int = 32

    def __post_init__(self):
        if self.s_inf < 1:
            raise ValueError(f"inference stride must be >= 1, got {self.s_inf}")
        if self.k < 2:
            raise ValueError(f"branch count k must be >= 2, got {self.k}")
        if self.tile is not None and self.tile <= self.tile_overlap:
            raise ValueError("tile size must exceed the tile overlap")


def _size_multiple(d):
    return getattr(d, "size_multiple", 1)


def forward_full(d, x):
    """Run the denoiser on a (c, h, w) image at full resolution, padding to
    its size multiple and cropping back."""
    m = _size_multiple(d)
    padded, spec = pad_reflect(chw(x), m)
    out = d(padded.unsqueeze(0))[0]
    return crop(out, spec)


def branch_denoise(d, subs, mask_set):
    """One branch: denoise the masked sub-images, keep restored positions only.

    Output is masks-complement * d(masks * subs): exactly zero wherever the
    branch kept the input pixel.
    """
    if subs.subs.shape[-2:] != mask_set.masks.shape[-2:] or len(subs) != len(mask_set):
        raise ValueError(
            f"branch_denoise: sub-images {tuple(subs.subs.shape)} do not align "
            f"with masks {tuple(mask_set.masks.shape)}"
        )
    out = d(subs.subs * mask_set.masks)
    return SubSampleSet((1.0 - mask_set.masks) * out, subs.stride)


def mmdb_denoise(d, subs, partition):
    """Sum of all branch outputs; every pixel written by exactly one branch."""
    if not isinstance(partition, MaskPartition):
        raise ValueError("mmdb_denoise needs a MaskPartition")
    partition.validate()
    total = None
    for mask_set in partition.branch_masks:
        o = branch_denoise(d, subs, mask_set).subs
        total = o if total is None else total + o
    return SubSampleSet(total, subs.stride)


def _denoise_once(d, x, cfg, seed):
    """pad -> split -> partition -> multi-branch denoise -> merge -> crop."""
    s = cfg.s_inf
    padded, spec = pad_reflect(x, s * _size_multiple(d))
    subs = SubSampleSet(pd_split_batch(padded, s), s)
    partition = sample_partition(subs.sub_shape[-2:], s, cfg.k, seed)
    composed = mmdb_denoise(d, subs, partition)
    merged = pd_merge_batch(composed.subs, s)
    return crop(merged, spec)


def _tile_starts(dim, tile, step):
    if dim <= tile:
        return [0]
    starts = list(range(0, dim - tile, step))
    starts.append(dim - tile)
    return starts


def _denoise_tiled(d, x, cfg):
    c, h, w = x.shape
    tile, step = cfg.tile, cfg.tile - cfg.tile_overlap
    acc = torch.zeros_like(x)
    weight = torch.zeros(1, h, w, dtype=x.dtype)
    for ti in _tile_starts(h, tile, step):
        for tj in _tile_starts(w, tile, step):
            seed = derive_seed(cfg.seed, "tile", ti, tj)
            th, tw = min(tile, h), min(tile, w)
            out = _denoise_once(d, x[:, ti : ti + th, tj : tj + tw], cfg, seed)
            acc[:, ti : ti + th, tj : tj + tw] += out
            weight[:, ti : ti + th, tj : tj + tw] += 1.0
    return acc / weight


def denoise_image(d, img, cfg, clamp=True):
    """Denoise one image with the complementary multi-branch scheme.

    Deterministic given (parameters, image, cfg.seed). With ``clamp=False``
    the raw composition is returned (useful for stacking refinement on top;
    the pipeline clamps to [0, 1] exactly once, at its very end).
    """
    x = chw(img)
    with torch.no_grad():
        if cfg.tile is not None and (x.shape[-2] > cfg.tile or x.shape[-1] > cfg.tile):
            out = _denoise_tiled(d, x, cfg)
        else:
            out = _denoise_once(d, x, cfg, derive_seed(cfg.seed, "partition"))
    if clamp:
        out = out.clamp(0.0, 1.0)
    return ImageTensor(out, color_space=getattr(img, "color_space", "srgb"))


def refine_r3(d, noisy, intermediate, T, p, seed):
    """Random-replacement refinement.

    For t = 1..T, splice noisy pixels into the intermediate result with
    probability p per element, re-denoise at full resolution (no phase
    downsampling, no masks), and average the T outputs. p=0 degenerates to
    a plain re-denoise of the intermediate; p=1 to one of the noisy input.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    xn = chw(noisy)
    xi = chw(intermediate)
    if xn.shape != xi.shape:
        raise ValueError(f"shape mismatch: noisy {tuple(xn.shape)} vs intermediate {tuple(xi.shape)}")
    with torch.no_grad():
        if p == 0.0 or p == 1.0:
            # every replicate sees the same input; the mean of T equal
            # outputs is that output, so skip the loop (and keep it bit-exact)
            out = forward_full(d, xn if p == 1.0 else xi)
        else:
            gen = generator(seed)
            acc = torch.zeros_like(xi)
            for _ in range(T):
                take_noisy = torch.rand(xn.shape, generator=gen, dtype=xn.dtype) < p
                mixed = torch.where(take_noisy, xn, xi)
                acc += forward_full(d, mixed)
            out = acc / T
    return ImageTensor(out, color_space=getattr(noisy, "color_space", "srgb"))


VARIANTS = ("B", "P", "B-E", "P-E")


def check_variant(handle, variant):
    """Reject variant/checkpoint pairings whose training tags disagree."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}'; expected one of {VARIANTS}")
    base = variant.split("-")[0]
    tag = getattr(handle, "meta", {}).get("variant")
    if tag is not None and tag != base:
        raise ValueError(
            f"variant '{variant}' needs a '{base}'-trained checkpoint, "
            f"but this one is tagged '{tag}'"
        )


def denoise_variant(d, img, variant, cfg):
    """Dispatch: B/P run the multi-branch pipeline; B-E/P-E add refinement."""
    check_variant(d, variant)
    refined = variant.endswith("-E") or cfg.refine.enabled
    if not refined:
        return denoise_image(d, img, cfg)
    intermediate = denoise_image(d, img, cfg)
    out = refine_r3(
        d,
        img,
        intermediate.data,
        T=cfg.refine.T,
        p=cfg.refine.p,
        seed=derive_seed(cfg.seed, "refine"),
    )
    return ImageTensor(
        out.data.clamp(0.0, 1.0), color_space=getattr(img, "color_space", "srgb")
    )
