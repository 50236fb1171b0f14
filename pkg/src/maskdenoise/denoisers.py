"""Pluggable denoiser registry and checkpoint container.

Four desk-scale backbones:

* ``unet-small``   - ~1M-param two-level UNet (spatial dims must divide by 4).
* ``dncnn``        - 17-layer residual CNN, 64 channels, batch norm.
* ``blindspot-a``  - centrally-masked 3x3 conv followed by dilation-2 convs;
                     by construction output(p) never depends on input(p).
* ``blindspot-as`` - same layout with standard convs in place of dilated ones
                     (identical parameter count); the center-pixel exclusion
                     no longer survives past the first layer.

Any same-shape image-to-image ``nn.Module`` can be registered as an
additional backbone; the training/inference code only relies on the handle
interface (callable on (n, c, h, w) batches, ``size_multiple`` attribute).
"""

from dataclasses import dataclass, asdict, field

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_MAGIC = "MASKDENOISE-CKPT"
CHECKPOINT_VERSION = 1

ARCH_DEFAULTS = {
    "unet-small": dict(width=48, depth=2),
    "dncnn": dict(width=64, depth=17),
    "blindspot-a": dict(width=48, depth=5),
    "blindspot-as": dict(width=48, depth=5),
}

# accepted aliases for the two receptive-field ablation variants
_ARCH_ALIASES = {"blindspot-A": "blindspot-a", "blindspot-AS": "blindspot-as"}


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass
class DenoiserSpec:
    """Fully determines a denoiser's architecture shape."""

    arch: str
    channels_in: int = 3
    channels_out: int = 3
    width: int = 0
    depth: int = 0
    seed: int = 0

    def __post_init__(self):
        self.arch = _ARCH_ALIASES.get(self.arch, self.arch)
        if self.arch not in ARCH_DEFAULTS:
            raise ValueError(
                f"unknown architecture '{self.arch}'; known: {sorted(ARCH_DEFAULTS)}"
            )
        if self.channels_in != self.channels_out:
            raise ValueError("input and output channel counts must match")
        defaults = ARCH_DEFAULTS[self.arch]
        self.width = self.width or defaults["width"]
        self.depth = self.depth or defaults["depth"]


class _DoubleConv(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            nn.ReLU(inplace=True),
        )


class UNetSmall(nn.Module):
    """Two-level UNet. Input dims must be divisible by 4."""

    size_multiple = 4

    def __init__(self, channels=3, width=48):
        super().__init__()
        w = width
        self.enc1 = _DoubleConv(channels, w)
        self.enc2 = _DoubleConv(w, 2 * w)
        self.bott = _DoubleConv(2 * w, 4 * w)
        self.pool = nn.MaxPool2d(2)
        self.up2 = nn.ConvTranspose2d(4 * w, 2 * w, 2, stride=2)
        self.dec2 = _DoubleConv(4 * w, 2 * w)
        self.up1 = nn.ConvTranspose2d(2 * w, w, 2, stride=2)
        self.dec1 = _DoubleConv(2 * w, w)
        self.head = nn.Conv2d(w, channels, 1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        b = self.bott(self.pool(e2))
        d2 = self.dec2(torch.cat([self.up2(b), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.head(d1)


class DnCNN(nn.Module):
    """Residual denoising CNN: predicts the noise, output = input - noise."""

    size_multiple = 1

    def __init__(self, channels=3, width=64, depth=17):
        super().__init__()
        layers = [nn.Conv2d(channels, width, 3, padding=1), nn.ReLU(inplace=True)]
        for _ in range(depth - 2):
            layers += [
                nn.Conv2d(width, width, 3, padding=1, bias=False),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
            ]
        layers.append(nn.Conv2d(width, channels, 3, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return x - self.body(x)


class CenterMaskedConv2d(nn.Conv2d):
    """3x3 conv whose kernel center is forced to zero."""

    def __init__(self, cin, cout):
        super().__init__(cin, cout, 3, padding=1)
        mask = torch.ones(1, 1, 3, 3)
        mask[..., 1, 1] = 0.0
        self.register_buffer("center_mask", mask)

    def forward(self, x):
        return F.conv2d(x, self.weight * self.center_mask, self.bias, padding=1)


class BlindSpotNet(nn.Module):
    """Centrally-masked 3x3 conv followed by ``depth`` 3x3 convs and two 1x1s.

    With dilation=2 the middle convs only move information by even offsets, so
    the center-pixel exclusion of the first layer is preserved end to end.
    With dilation=1 (standard convs, same parameter count) the exclusion is
    broken after the second layer and the net can reconstruct its own input.
    """

    size_multiple = 1

    def __init__(self, channels=3, width=48, depth=5, dilation=2):
        super().__init__()
        layers = [CenterMaskedConv2d(channels, width), nn.ReLU(inplace=True)]
        for _ in range(depth):
            layers += [
                nn.Conv2d(width, width, 3, padding=dilation, dilation=dilation),
                nn.ReLU(inplace=True),
            ]
        layers += [
            nn.Conv2d(width, width, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, channels, 1),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


def _construct(spec):
    if spec.arch == "unet-small":
        return UNetSmall(spec.channels_in, spec.width)
    if spec.arch == "dncnn":
        return DnCNN(spec.channels_in, spec.width, spec.depth)
    if spec.arch == "blindspot-a":
        return BlindSpotNet(spec.channels_in, spec.width, spec.depth, dilation=2)
    if spec.arch == "blindspot-as":
        return BlindSpotNet(spec.channels_in, spec.width, spec.depth, dilation=1)
    raise ValueError(f"unknown architecture '{spec.arch}'")


@dataclass
class DenoiserHandle:
    """A parameterized denoiser plus its spec, step counter, and tag metadata.

    Calling the handle on an (n, c, h, w) batch validates shapes and runs the
    network; gradient flow is controlled by the caller's grad mode.
    """

    spec: DenoiserSpec
    net: nn.Module
    step_count: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def size_multiple(self):
        return getattr(self.net, "size_multiple", 1)

    @property
    def param_count(self):
        return sum(p.numel() for p in self.net.parameters())

    def __call__(self, x):
        if x.dim() != 4:
            raise ValueError(f"expected an (n, c, h, w) batch, got shape {tuple(x.shape)}")
        n, c, h, w = x.shape
        if n < 1:
            raise ValueError("empty batch")
        if c != self.spec.channels_in:
            raise ValueError(f"channel mismatch: denoiser expects {self.spec.channels_in}, got {c}")
        m = self.size_multiple
        if h % m or w % m:
            raise ValueError(
                f"spatial dims ({h}, {w}) must divide by {m} for arch '{self.spec.arch}'; "
                "pad upstream"
            )
        return self.net(x)

    def train(self):
        self.net.train()
        return self

    def eval(self):
        self.net.eval()
        return self

    def parameters(self):
        return self.net.parameters()


def build_denoiser(spec, seed=None):
    """Construct a denoiser with parameters initialized deterministically.

    ``seed`` overrides ``spec.seed``. Same spec + seed gives bit-identical
    parameters; the handle reports its parameter count via ``param_count``.
    """
    if seed is not None:
        spec = DenoiserSpec(**{**asdict(spec), "seed": int(seed)})
    torch.manual_seed(spec.seed)
    net = _construct(spec)
    net.eval()
    return DenoiserHandle(spec=spec, net=net)


def save_checkpoint(handle, path, meta=None):
    """Write a single-file versioned checkpoint (spec, parameters, metadata).

    Entries already on the handle's meta are kept; the ``meta`` argument
    overrides key-by-key.
    """
    merged = dict(handle.meta)
    if meta:
        merged.update(meta)
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(handle.spec),
        "state_dict": handle.net.state_dict(),
        "step_count": handle.step_count,
        "meta": merged,
    }
    torch.save(payload, path)
    return path


def _read_payload(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"corrupt or unreadable checkpoint '{path}': {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"'{path}' is not a denoiser checkpoint (bad magic)")
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch in '{path}': file has {version}, "
            f"this build reads {CHECKPOINT_VERSION}"
        )
    return payload


def load_checkpoint(path):
    """Load a checkpoint; forward outputs reproduce the saved model bit-exactly."""
    payload = _read_payload(path)
    spec = DenoiserSpec(**payload["spec"])
    net = _construct(spec)
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return DenoiserHandle(
        spec=spec,
        net=net,
        step_count=int(payload.get("step_count", 0)),
        meta=dict(payload.get("meta", {})),
    )
