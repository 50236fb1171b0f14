"""Identity-mapping ablation harness.

Trains a 2x2 grid of desk-scale cells on synthetic spatially-correlated
noise: {masked scheme, plain self-reconstruction} x {receptive-field-
restricted blindspot net, same net with standard convs}. Plain
self-reconstruction with an unconstrained net collapses to copying its
input (high PSNR against the noisy image, none against the clean one);
the masked scheme keeps denoising with the very same unconstrained net.
"""

import time
from dataclasses import dataclass

import torch

from .core import crop, pad_reflect, pd_merge_batch, pd_split_batch
from .datasets import make_toy_noisy_dataset, InMemoryDataset, sample_patches
from .denoisers import DenoiserSpec, build_denoiser
from .evaluation import psnr
from .inference import InferConfig, denoise_image
from .training import _exact_count_masks_batch
from .util import chw, derive_seed, generator

SCHEMES = ("masked", "plain-l1")
ARCHS = ("blindspot-a", "blindspot-as")


@dataclass
class AblationConfig:
    steps: int = 1000
    patch_size: int = 63
    batch_size: int = 4
    lr: float = 3e-4
    sigma: float = 25.0 / 255.0
    kernel_size: int = 3
    stride: int = 3
    mask_ratio: float = 0.5
    k: int = 2
    seed: int = 0
    width: int = 48
    depth: int = 5
    n_train: int = 10
    n_val: int = 4
    train_image_size: int = 96
    val_image_size: int = 64

    def validate(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        return self


def _train_cell(cfg, scheme, arch, train_ds):
    spec = DenoiserSpec(
        arch=arch, width=cfg.width, depth=cfg.depth,
        seed=derive_seed(cfg.seed, "init", scheme, arch),
    )
    handle = build_denoiser(spec)
    opt = torch.optim.AdamW(handle.parameters(), lr=cfg.lr)
    handle.train()
    s = cfg.stride
    for step in range(cfg.steps):
        batch = sample_patches(
            train_ds, cfg.patch_size, cfg.batch_size,
            seed=derive_seed(cfg.seed, "patch", scheme, arch, step),
        )
        padded, _ = pad_reflect(batch, s)
        subs = pd_split_batch(padded, s)
        b, nsub, c, h, w = subs.shape
        flat = subs.reshape(b * nsub, c, h, w)
        if scheme == "masked":
            gen = generator(derive_seed(cfg.seed, "mask", scheme, arch, step))
            masks = _exact_count_masks_batch(b, nsub, (h, w), cfg.mask_ratio, gen)
            masks = masks.reshape(b * nsub, 1, h, w)
            out = handle(flat * masks)
            loss = ((1.0 - masks) * (out - flat)).abs().sum()
        else:
            out = handle(flat)
            loss = (out - flat).abs().sum()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    handle.eval()
    return handle


def _plain_denoise(handle, img, s):
    """Sub-sample, denoise every sub-image directly (no masks), recombine."""
    padded, spec = pad_reflect(chw(img), s)
    subs = pd_split_batch(padded, s)
    with torch.no_grad():
        out = handle(subs)
    return crop(pd_merge_batch(out, s), spec).clamp(0.0, 1.0)


def _eval_cell(cfg, scheme, handle, val_noisy, val_clean):
    out_vs_noisy, out_vs_clean, baseline = [], [], []
    for i, (noisy, clean) in enumerate(zip(val_noisy, val_clean)):
        if scheme == "masked":
            icfg = InferConfig(s_inf=cfg.stride, k=cfg.k,
                               seed=derive_seed(cfg.seed, "val", scheme, i))
            out = denoise_image(handle, noisy, icfg).data
        else:
            out = _plain_denoise(handle, noisy, cfg.stride)
        out_vs_noisy.append(psnr(out, noisy))
        out_vs_clean.append(psnr(out, clean))
        baseline.append(psnr(noisy, clean))
    mean = lambda xs: sum(xs) / len(xs)
    return mean(out_vs_noisy), mean(out_vs_clean), mean(baseline)


def run_identity_ablation(cfg=None, progress=None):
    """Train and score all four cells; returns the report dict."""
    cfg = (cfg or AblationConfig()).validate()
    train_noisy, _ = make_toy_noisy_dataset(
        cfg.n_train, cfg.train_image_size, cfg.sigma,
        derive_seed(cfg.seed, "train-data"), kernel_size=cfg.kernel_size,
    )
    # ingest like the PNG path would: clamped to [0, 1]
    train_ds = InMemoryDataset([im.clamp(0, 1) for im in train_noisy.images])
    vn, vc = make_toy_noisy_dataset(
        cfg.n_val, cfg.val_image_size, cfg.sigma,
        derive_seed(cfg.seed, "val-data"), kernel_size=cfg.kernel_size,
    )
    val_noisy = [im.clamp(0, 1) for im in vn.images]
    val_clean = [chw(c) for c in vc]

    cells = []
    for scheme in SCHEMES:
        for arch in ARCHS:
            t0 = time.time()
            handle = _train_cell(cfg, scheme, arch, train_ds)
            pn, pc, base = _eval_cell(cfg, scheme, handle, val_noisy, val_clean)
            cell = {
                "scheme": scheme,
                "denoiser": arch,
                "psnr_out_noisy": pn,
                "psnr_out_clean": pc,
                "psnr_noisy_clean": base,
                "identity_mapping": bool(pn > pc),
                "train_seconds": time.time() - t0,
            }
            cells.append(cell)
            if progress:
                progress(cell)
    return {
        "config": {
            "steps": cfg.steps, "sigma": cfg.sigma, "kernel_size": cfg.kernel_size,
            "stride": cfg.stride, "mask_ratio": cfg.mask_ratio, "k": cfg.k,
            "seed": cfg.seed, "patch_size": cfg.patch_size,
        },
        "cells": cells,
    }
