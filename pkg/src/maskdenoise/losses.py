"""Training objectives.

All losses are sums (not means) of absolute residuals, so the masked
per-branch losses of a complementary partition add up exactly to the L1
distance between the composed full output and the noisy input. The
smoothness term gets a tiny epsilon inside its square root so it stays
differentiable on flat regions.
"""

from dataclasses import dataclass, field

import torch

TV_EPS = 1e-8


@dataclass
class LossValue:
    """A scalar loss tensor plus its named sub-terms (also tensors)."""

    value: torch.Tensor
    components: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)

    def item(self):
        return float(self.value)


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def mask_loss(mask_set, subs, outputs):
    """L1 between denoiser outputs and noisy sub-images, restricted to the
    masked (restored) positions, summed over all sub-images."""
    _check_same_shape(subs.subs, outputs.subs, "mask_loss")
    if mask_set.masks.shape[-2:] != subs.subs.shape[-2:] or len(mask_set) != len(subs):
        raise ValueError(
            f"mask_loss: masks {tuple(mask_set.masks.shape)} do not align with "
            f"sub-images {tuple(subs.subs.shape)}"
        )
    restored = 1.0 - mask_set.masks
    value = (restored * (outputs.subs - subs.subs)).abs().sum()
    return LossValue(value, {"masked_l1": value})


def tv_loss(img):
    """Smoothness prior: sum of sqrt(dx^2 + dy^2 + eps) over interior pixels.

    Accepts (c, h, w) or a batch (n, c, h, w); batched input sums over items.
    """
    x = getattr(img, "data", img)
    if x.shape[-2] < 2 or x.shape[-1] < 2:
        raise ValueError(f"tv_loss needs h, w >= 2, got {tuple(x.shape)}")
    dy = x[..., 1:, :-1] - x[..., :-1, :-1]
    dx = x[..., :-1, 1:] - x[..., :-1, :-1]
    value = torch.sqrt(dy * dy + dx * dx + TV_EPS).sum()
    return LossValue(value, {"tv": value})


def total_loss(denoised, noisy, lam):
    """Fine-tuning objective: lam * smoothness(denoised) + ||denoised - noisy||_1."""
    if lam < 0:
        raise ValueError(f"smoothness weight must be non-negative, got {lam}")
    a = getattr(denoised, "data", denoised)
    b = getattr(noisy, "data", noisy)
    _check_same_shape(a, b, "total_loss")
    l1 = (a - b).abs().sum()
    tv = tv_loss(a).value
    value = lam * tv + l1
    return LossValue(value, {"l1": l1, "tv": tv, "lam": torch.as_tensor(float(lam))})


def bsn_loss(output, noisy):
    """Plain self-supervised L1 to the noisy image (no masking); the objective
    whose unconstrained minimizer is the identity map."""
    a = getattr(output, "data", output)
    b = getattr(noisy, "data", noisy)
    _check_same_shape(a, b, "bsn_loss")
    value = (a - b).abs().sum()
    return LossValue(value, {"l1": value})
