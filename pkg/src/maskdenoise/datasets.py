"""Folder ingestion, seeded patch sampling, and synthetic noise.

Noise is stored unclamped so zero-mean assumptions hold exactly in tests and
training; clamping happens only on PNG export. ``synth_correlated`` box-filters
an iid Gaussian field to manufacture spatially-correlated noise whose
correlation length is set by the kernel width, which is what stride-s phase
downsampling is there to break.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import uniform_filter

from .core import ImageTensor, load_png
from .util import chw, derive_seed


@dataclass
class ImageRef:
    """Lazy-loadable reference to one on-disk image."""

    name: str
    path: Path

    def load(self):
        return load_png(self.path)


class NoisyDataset:
    """A folder of noisy PNGs, iterated in sorted-name order."""

    def __init__(self, items):
        self.items = sorted(items, key=lambda r: r.name)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i].load()

    def manifest(self):
        return [{"name": r.name, "path": str(r.path)} for r in self.items]


class PairedDataset:
    """Aligned (noisy, clean) reference pairs matched by filename stem."""

    def __init__(self, pairs):
        self.pairs = sorted(pairs, key=lambda p: p[0].name)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        noisy, clean = self.pairs[i]
        return noisy.load(), clean.load()

    def manifest(self):
        return [
            {"name": n.name, "noisy": str(n.path), "clean": str(c.path)}
            for n, c in self.pairs
        ]


def _png_refs(folder):
    folder = Path(folder)
    return [ImageRef(p.stem, p) for p in sorted(folder.glob("*.png"))]


def load_folder(path, paired=False):
    """Build a dataset from a folder of PNGs.

    Flat folder -> NoisyDataset. With ``paired=True`` the folder must contain
    ``noisy/`` and ``clean/`` subdirs whose files match by stem; any orphan
    stems are reported explicitly. A manifest JSON is cached beside the folder
    contents for quick inspection.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset folder not found: {root}")
    if not paired:
        ds = NoisyDataset(_png_refs(root))
    else:
        noisy = {r.name: r for r in _png_refs(root / "noisy")}
        clean = {r.name: r for r in _png_refs(root / "clean")}
        orphans = sorted(set(noisy) ^ set(clean))
        if orphans:
            raise ValueError(
                f"paired dataset at {root} has {len(orphans)} orphan stem(s) "
                f"without a counterpart: {', '.join(orphans)}"
            )
        ds = PairedDataset([(noisy[k], clean[k]) for k in sorted(noisy)])
    try:
        (root / "manifest.json").write_text(json.dumps(ds.manifest(), indent=2))
    except OSError:
        pass  # read-only dataset dirs are fine
    return ds


def sample_patches(ds, patch, batch, seed, augment=False):
    """Uniformly random (batch, c, patch, patch) crops, deterministic given seed.

    ``augment`` adds seeded horizontal flips and 90-degree rotations.
    """
    if len(ds) == 0:
        raise ValueError("cannot sample patches from an empty dataset")
    gen = np.random.default_rng(seed)
    out = []
    for _ in range(batch):
        idx = int(gen.integers(len(ds)))
        item = ds[idx]
        img = chw(item[0] if isinstance(item, tuple) else item)
        c, h, w = img.shape
        if patch > h or patch > w:
            raise ValueError(f"patch {patch} exceeds image dims ({h}, {w})")
        top = int(gen.integers(h - patch + 1))
        left = int(gen.integers(w - patch + 1))
        crop = img[:, top : top + patch, left : left + patch]
        if augment:
            if gen.integers(2):
                crop = torch.flip(crop, dims=[-1])
            crop = torch.rot90(crop, k=int(gen.integers(4)), dims=(-2, -1))
        out.append(crop)
    return torch.stack(out)


def synth_gaussian(clean, sigma, seed):
    """clean + iid zero-mean Gaussian noise of std ``sigma`` (unclamped)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    x = chw(clean)
    if sigma == 0:
        return x.clone()
    gen = torch.Generator().manual_seed(int(seed))
    noise = torch.randn(x.shape, generator=gen, dtype=x.dtype) * sigma
    return x + noise


def synth_correlated(clean, sigma, kernel_size, seed):
    """clean + spatially-correlated zero-mean noise of std ``sigma``.

    An iid Gaussian field is averaged with a kernel_size x kernel_size box
    filter (per channel) and rescaled so the marginal std is sigma again.
    Neighboring pixels then share most of their noise; pixels at least
    kernel_size apart share none, so phase downsampling at stride >=
    kernel_size restores (near-)independence.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd and >= 3, got {kernel_size}")
    x = chw(clean)
    if sigma == 0:
        return x.clone()
    gen = np.random.default_rng(seed)
    field = gen.standard_normal(size=tuple(x.shape)).astype(np.float64)
    smooth = uniform_filter(field, size=(1, kernel_size, kernel_size), mode="wrap")
    # box averaging divides the variance by kernel_size^2; scale it back
    noise = torch.from_numpy(smooth * kernel_size * sigma).to(x.dtype)
    return x + noise


def toy_clean_images(n, size, seed, channels=3):
    """Procedural smooth 'clean' images for desk-scale runs and tests.

    Each image is a bicubic upsampling of a coarse random grid plus a faint
    finer-scale field, squashed into [0.05, 0.95] so synthetic noise rarely
    clips on export.
    """
    gen = torch.Generator().manual_seed(int(seed))
    images = []
    for _ in range(n):
        coarse = torch.rand((1, channels, 6, 6), generator=gen)
        fine = torch.rand((1, channels, 12, 12), generator=gen)
        img = torch.nn.functional.interpolate(
            coarse, size=(size, size), mode="bicubic", align_corners=False
        ) + 0.15 * torch.nn.functional.interpolate(
            fine, size=(size, size), mode="bicubic", align_corners=False
        )
        img = img[0]
        lo, hi = img.min(), img.max()
        img = 0.05 + 0.9 * (img - lo) / (hi - lo + 1e-12)
        images.append(ImageTensor(img).validate())
    return images


def lag1_autocorrelation(x):
    """Mean lag-1 Pearson autocorrelation along both spatial axes."""
    a = chw(x).double()
    a = a - a.mean(dim=(-2, -1), keepdim=True)
    var = (a * a).mean()
    if var == 0:
        return 0.0
    rho_h = (a[..., :, 1:] * a[..., :, :-1]).mean() / var
    rho_v = (a[..., 1:, :] * a[..., :-1, :]).mean() / var
    return float((rho_h + rho_v) / 2)


class InMemoryDataset:
    """List-of-tensors dataset with the same sampling interface as folders."""

    def __init__(self, images, names=None):
        self.images = [chw(im) for im in images]
        self.names = names or [f"img{i:04d}" for i in range(len(images))]

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i]


def make_toy_noisy_dataset(n, size, sigma, seed, kernel_size=None, channels=3):
    """(noisy InMemoryDataset, clean images) with iid or correlated noise."""
    cleans = toy_clean_images(n, size, seed, channels=channels)
    noisy = []
    for i, im in enumerate(cleans):
        s = derive_seed(seed, "noise", i)
        if kernel_size:
            noisy.append(synth_correlated(im, sigma, kernel_size, s))
        else:
            noisy.append(synth_gaussian(im, sigma, s))
    return InMemoryDataset(noisy), cleans
