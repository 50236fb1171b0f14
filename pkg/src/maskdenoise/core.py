"""Image tensor data model, stride-s pixel downsampling with its exact
inverse, reflection padding, and 8-bit PNG I/O.

Images are float tensors of shape (c, h, w) with intensities in [0, 1].
Downsampling with stride s rearranges an image into s*s phase sub-images
(phase order row-major over (row offset, col offset)); merging is the exact,
bit-identical inverse.
"""

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .util import chw


@dataclass
class ImageTensor:
    """A (c, h, w) image in [0, 1]. c must be 1 (luma) or 3 (sRGB).

    Range is enforced at ingestion/export only: intermediates produced
    during optimization may transiently leave [0, 1].
    """

    data: torch.Tensor
    color_space: str = "srgb"

    def __post_init__(self):
        if not torch.is_tensor(self.data):
            self.data = torch.as_tensor(self.data, dtype=torch.float32)
        if self.data.dim() != 3:
            raise ValueError(f"image must be (c, h, w), got shape {tuple(self.data.shape)}")
        if self.data.shape[0] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {self.data.shape[0]}")

    @property
    def shape(self):
        return tuple(self.data.shape)

    def validate(self):
        """Check the ingestion invariants (finite, inside [0, 1])."""
        if not torch.isfinite(self.data).all():
            raise ValueError("image contains non-finite values")
        if self.data.min() < 0 or self.data.max() > 1:
            raise ValueError(
                f"image values outside [0, 1]: min={float(self.data.min()):.4f} "
                f"max={float(self.data.max()):.4f}"
            )
        return self


@dataclass
class PadSpec:
    """Per-side pad amounts recorded so a later crop restores the original size."""

    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def __post_init__(self):
        if min(self.top, self.bottom, self.left, self.right) < 0:
            raise ValueError("pad amounts must be non-negative")

    @property
    def is_zero(self):
        return self.top == self.bottom == self.left == self.right == 0


@dataclass
class SubSampleSet:
    """The s*s phase sub-images of one image, stacked as (s*s, c, h/s, w/s).

    Index a * s + b holds the sub-image at phase (row offset a, col offset b).
    """

    subs: torch.Tensor
    stride: int

    def __post_init__(self):
        if self.subs.dim() != 4:
            raise ValueError(f"subs must be (s*s, c, h, w), got shape {tuple(self.subs.shape)}")
        if self.subs.shape[0] != self.stride**2:
            raise ValueError(
                f"expected {self.stride ** 2} sub-images for stride {self.stride}, "
                f"got {self.subs.shape[0]}"
            )

    def __len__(self):
        return self.subs.shape[0]

    @property
    def sub_shape(self):
        return tuple(self.subs.shape[1:])


def pd_split_batch(x, s):
    """Stride-s phase split of a (..., c, h, w) tensor -> (..., s*s, c, h/s, w/s)."""
    if s < 1:
        raise ValueError(f"stride must be >= 1, got {s}")
    h, w = x.shape[-2], x.shape[-1]
    if h % s or w % s:
        raise ValueError(
            f"image dims ({h}, {w}) not divisible by stride {s} "
            f"(remainders {h % s}, {w % s}); pad first"
        )
    phases = [x[..., a::s, b::s] for a in range(s) for b in range(s)]
    return torch.stack(phases, dim=-4)


def pd_merge_batch(subs, s):
    """Exact inverse of :func:`pd_split_batch` on a (..., s*s, c, h, w) tensor."""
    if s < 1:
        raise ValueError(f"stride must be >= 1, got {s}")
    if subs.shape[-4] != s * s:
        raise ValueError(f"expected {s * s} sub-images for stride {s}, got {subs.shape[-4]}")
    c, hs, ws = subs.shape[-3], subs.shape[-2], subs.shape[-1]
    out = subs.new_empty(subs.shape[:-4] + (c, hs * s, ws * s))
    for a in range(s):
        for b in range(s):
            out[..., a::s, b::s] = subs[..., a * s + b, :, :, :]
    return out


def pd_split(img, s):
    """Split an image into its s*s stride-s sub-images.

    Sub-image at phase (a, b) holds pixels img[:, a::s, b::s]. s=1 returns a
    singleton containing the image unchanged. Dims must be divisible by s.
    """
    return SubSampleSet(pd_split_batch(chw(img), s), s)


def pd_merge(subset, s=None):
    """Recombine a :class:`SubSampleSet` into the original image, bit-exactly."""
    if s is None:
        s = subset.stride
    if s != subset.stride:
        raise ValueError(f"stride mismatch: set has {subset.stride}, asked for {s}")
    return pd_merge_batch(subset.subs, s)


def _pad_lrtb(x, left, right, top, bottom):
    # reflect padding needs pad < dim; fall back to replicate on tiny images
    h, w = x.shape[-2], x.shape[-1]
    mode = "reflect" if max(left, right) < w and max(top, bottom) < h else "replicate"
    batched = x.dim() == 3
    if batched:
        x = x.unsqueeze(0)
    out = torch.nn.functional.pad(x, (left, right, top, bottom), mode=mode)
    return out.squeeze(0) if batched else out


def pad_reflect(img, s):
    """Reflection-pad bottom/right so both spatial dims divide by s.

    Returns the padded tensor and the PadSpec that undoes it. Divisible
    input comes back unchanged with a zero PadSpec.
    """
    if s <= 0:
        raise ValueError(f"stride must be positive, got {s}")
    x = img if torch.is_tensor(img) else chw(img)
    h, w = x.shape[-2], x.shape[-1]
    pad_h = (-h) % s
    pad_w = (-w) % s
    spec = PadSpec(top=0, bottom=pad_h, left=0, right=pad_w)
    if spec.is_zero:
        return x, spec
    return _pad_lrtb(x, 0, pad_w, 0, pad_h), spec


def crop(img, spec):
    """Undo :func:`pad_reflect`: crop back to the original region."""
    x = img if torch.is_tensor(img) else chw(img)
    h, w = x.shape[-2], x.shape[-1]
    return x[..., spec.top : h - spec.bottom, spec.left : w - spec.right]


def load_png(path):
    """Read an 8-bit PNG into an ImageTensor ([0,1] floats, c first)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None, :, :]
        space = "linear-luma"
    else:
        arr = arr.transpose(2, 0, 1)
        space = "srgb"
    return ImageTensor(torch.from_numpy(arr.copy()), color_space=space).validate()


def save_png(img, path):
    """Write an image as 8-bit PNG (round(x*255), clamped)."""
    x = chw(img).detach().cpu().float()
    arr = torch.round(x.clamp(0.0, 1.0) * 255.0).to(torch.uint8).numpy()
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
