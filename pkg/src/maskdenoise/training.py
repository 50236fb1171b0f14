"""Training loops: single-mask base training and full-composition fine-tuning.

Base training draws one fresh mask set per step and optimizes the masked
self-supervised L1 on the restored positions only. Fine-tuning starts from a
base checkpoint, runs all k complementary branches, composes the full output
image, and optimizes lam * smoothness + L1-to-noisy, whose L1 term equals the
sum of per-branch masked losses over the same partition.

Everything a step consumes (patches, masks, partitions) is derived
statelessly from (seed, step), so two runs with the same config produce
bit-identical parameter trajectories and an interrupted run resumed from its
last checkpoint rejoins the uninterrupted trajectory exactly.
"""

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import torch
import yaml

from .core import pad_reflect, pd_split_batch, pd_merge_batch, crop
from .datasets import sample_patches
from .denoisers import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    DenoiserSpec,
    DenoiserHandle,
    _construct,
    _read_payload,
    build_denoiser,
    load_checkpoint,
    save_checkpoint,
)
from .losses import tv_loss
from .util import derive_seed, generator


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a NaN/inf loss; training aborts
    with a state snapshot rather than silently skipping the step."""

    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path


@dataclass
class TrainConfig:
    arch: str = "unet-small"
    s_train: int = 5
    mask_ratio: float = 0.5
    patch_size: int = 64
    batch_size: int = 4
    lr: float = 1e-4
    steps: int = 2000
    seed: int = 0
    lam: float = 0.1  # fine-tune smoothness weight
    k: int = 2  # fine-tune branch count
    channels: int = 3
    width: int = 0  # 0 = arch default
    depth: int = 0
    checkpoint_every: int = 500
    augment: bool = False

    def validate(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(
                f"mask_ratio must lie strictly inside (0, 1), got {self.mask_ratio} "
                "(1.0 leaves no kept context, 0.0 restores nothing)"
            )
        if self.s_train < 1:
            raise ValueError(f"s_train must be >= 1, got {self.s_train}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.patch_size < self.s_train:
            raise ValueError(
                f"patch_size {self.patch_size} smaller than training stride {self.s_train}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        return self


@dataclass
class TrainState:
    handle: DenoiserHandle
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    mode: str = "base"
    step: int = 0
    loss_history: list = field(default_factory=list)


def init_train_state(config, mode="base", base_handle=None):
    """Fresh state for base training, or fine-tune state on top of a base model."""
    config.validate()
    if mode == "base":
        spec = DenoiserSpec(
            arch=config.arch,
            channels_in=config.channels,
            channels_out=config.channels,
            width=config.width,
            depth=config.depth,
            seed=config.seed,
        )
        handle = build_denoiser(spec)
    elif mode == "finetune":
        if base_handle is None:
            raise ValueError("fine-tuning needs a base-trained checkpoint to start from")
        tag = base_handle.meta.get("variant")
        if tag is not None and tag != "B":
            raise ValueError(f"fine-tuning expects a 'B'-tagged base checkpoint, got '{tag}'")
        handle = base_handle
    else:
        raise ValueError(f"unknown training mode '{mode}'")
    optimizer = torch.optim.AdamW(handle.parameters(), lr=config.lr)
    return TrainState(handle=handle, optimizer=optimizer, config=config, mode=mode)


def _exact_count_masks_batch(b, count, shape, ratio, gen):
    """(b, count, 1, h, w) stack of independent exact-count keep masks."""
    h, w = shape
    n = h * w
    n_masked = int(round(ratio * n))
    masks = torch.ones(b, count, 1, h, w)
    for i in range(b):
        for j in range(count):
            idx = torch.randperm(n, generator=gen)[:n_masked]
            masks[i, j, 0].view(-1)[idx] = 0.0
    return masks


def _partition_masks_batch(b, count, shape, k, gen):
    """(k, b, count, 1, h, w) complementary partition per item and sub-image."""
    h, w = shape
    n = h * w
    masks = torch.ones(k, b, count, 1, h, w)
    for i in range(b):
        for j in range(count):
            perm = torch.randperm(n, generator=gen)
            for br, chunk in enumerate(torch.tensor_split(perm, k)):
                masks[br, i, j, 0].view(-1)[chunk] = 0.0
    return masks


def _prepare_batch(state, noisy_batch):
    if not torch.is_tensor(noisy_batch) or noisy_batch.dim() != 4:
        raise ValueError("expected a (b, c, h, w) batch of noisy patches")
    if noisy_batch.shape[0] < 1:
        raise ValueError("empty batch")
    cfg = state.config
    s = cfg.s_train
    padded, _ = pad_reflect(noisy_batch, s * state.handle.size_multiple)
    subs = pd_split_batch(padded, s)  # (b, s^2, c, h', w')
    return padded, subs


def _finish_step(state, loss, extra):
    if not torch.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite loss {float(loss)} at step {state.step}; aborting with snapshot"
        )
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.step += 1
    state.handle.step_count = state.step
    metrics = {"step": state.step, "loss": float(loss), **extra}
    state.loss_history.append(metrics)
    return metrics


def train_step_base(state, noisy_batch):
    """One single-mask optimization step on a batch of noisy patches."""
    cfg = state.config
    _, subs = _prepare_batch(state, noisy_batch)
    b, nsub, c, h, w = subs.shape
    gen = generator(derive_seed(cfg.seed, "mask", state.step))
    masks = _exact_count_masks_batch(b, nsub, (h, w), cfg.mask_ratio, gen)

    state.handle.train()
    out = state.handle(subs.reshape(b * nsub, c, h, w) * masks.reshape(b * nsub, 1, h, w))
    out = out.reshape(b, nsub, c, h, w)
    loss = ((1.0 - masks) * (out - subs)).abs().sum()
    return _finish_step(state, loss, {"l1": float(loss), "tv": 0.0})


def compose_full_output(handle, subs, branch_masks):
    """Run every branch and sum the restored parts -> (b, s^2, c, h, w).

    Differentiable; shared by the fine-tune step and by tests of the
    sum-of-branch-losses identity.
    """
    b, nsub, c, h, w = subs.shape
    k = branch_masks.shape[0]
    composed = None
    for i in range(k):
        m = branch_masks[i]
        out = handle(subs.reshape(b * nsub, c, h, w) * m.reshape(b * nsub, 1, h, w))
        contrib = (1.0 - m) * out.reshape(b, nsub, c, h, w)
        composed = contrib if composed is None else composed + contrib
    return composed


def train_step_finetune(state, noisy_batch):
    """One fine-tuning step: compose the full image from all k branches and
    optimize lam * smoothness + L1 to the noisy input."""
    cfg = state.config
    padded, subs = _prepare_batch(state, noisy_batch)
    b, nsub, c, h, w = subs.shape
    gen = generator(derive_seed(cfg.seed, "partition", state.step))
    branch_masks = _partition_masks_batch(b, nsub, (h, w), cfg.k, gen)

    state.handle.train()
    composed = compose_full_output(state.handle, subs, branch_masks)
    denoised = pd_merge_batch(composed, cfg.s_train)  # padded-domain composition
    l1 = (denoised - padded).abs().sum()
    tv = tv_loss(denoised).value
    loss = cfg.lam * tv + l1
    return _finish_step(state, loss, {"l1": float(l1), "tv": float(tv)})


def save_train_checkpoint(state, path, meta=None):
    """Checkpoint carrying both the model and the full training state."""
    merged = dict(state.handle.meta)
    if meta:
        merged.update(meta)
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(state.handle.spec),
        "state_dict": state.handle.net.state_dict(),
        "step_count": state.step,
        "meta": merged,
        "train_state": {
            "mode": state.mode,
            "step": state.step,
            "optimizer": state.optimizer.state_dict(),
            "loss_history": [dict(m) for m in state.loss_history],
            "config": asdict(state.config),
        },
    }
    torch.save(payload, path)
    return path


def load_train_checkpoint(path):
    """Restore a TrainState saved by :func:`save_train_checkpoint`."""
    payload = _read_payload(path)
    ts = payload.get("train_state")
    if ts is None:
        raise ValueError(f"checkpoint '{path}' carries no training state; cannot resume")
    spec = DenoiserSpec(**payload["spec"])
    net = _construct(spec)
    net.load_state_dict(payload["state_dict"])
    handle = DenoiserHandle(
        spec=spec, net=net, step_count=int(payload["step_count"]), meta=dict(payload["meta"])
    )
    config = TrainConfig(**ts["config"])
    optimizer = torch.optim.AdamW(handle.parameters(), lr=config.lr)
    optimizer.load_state_dict(ts["optimizer"])
    return TrainState(
        handle=handle,
        optimizer=optimizer,
        config=config,
        mode=ts["mode"],
        step=int(ts["step"]),
        loss_history=[dict(m) for m in ts["loss_history"]],
    )


def _latest_step_checkpoint(run_dir):
    ckpts = sorted(Path(run_dir).glob("step_*.ckpt"))
    return ckpts[-1] if ckpts else None


def run_training(config, dataset, mode="base", out_dir="run", base_ckpt=None, resume=False):
    """Drive a full run: sample, step, checkpoint, and write the loss curve.

    Returns the final checkpoint path. The run directory ends up holding the
    config snapshot, step checkpoints, ``final.ckpt`` tagged with the variant
    ('B' for base, 'P' for fine-tuned), and the loss curve as CSV + figure.
    """
    from .report import write_loss_curve  # deferred: pulls in matplotlib

    config.validate()
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump({"mode": mode, **asdict(config)}))

    state = None
    if resume:
        last = _latest_step_checkpoint(out)
        if last is not None:
            state = load_train_checkpoint(last)
            state.config = config  # resume honors the caller's config (e.g. more steps)
    if state is None:
        base_handle = None
        if mode == "finetune":
            if base_ckpt is None:
                raise ValueError("fine-tuning requires --base-ckpt pointing at a 'B' checkpoint")
            base_handle = load_checkpoint(base_ckpt)
        state = init_train_state(config, mode=mode, base_handle=base_handle)

    step_fn = train_step_base if mode == "base" else train_step_finetune
    variant = "B" if mode == "base" else "P"
    meta = {
        "variant": variant,
        "arch": state.handle.spec.arch,
        "s_train": config.s_train,
        "mask_ratio": config.mask_ratio,
        "k": config.k,
        "lam": config.lam,
        "seed": config.seed,
    }

    t0 = time.time()
    while state.step < config.steps:
        batch = sample_patches(
            dataset,
            config.patch_size,
            config.batch_size,
            seed=derive_seed(config.seed, "patch", state.step),
            augment=config.augment,
        )
        try:
            step_fn(state, batch)
        except NonFiniteLossError as err:
            snapshot = out / "abort.ckpt"
            save_train_checkpoint(state, snapshot, meta=meta)
            err.snapshot_path = snapshot
            raise
        if config.checkpoint_every and state.step % config.checkpoint_every == 0:
            save_train_checkpoint(state, out / f"step_{state.step:07d}.ckpt", meta=meta)

    final = out / "final.ckpt"
    save_train_checkpoint(state, final, meta=meta)
    write_loss_curve(state.loss_history, out / "loss_curve.csv", out / "loss_curve.png")
    elapsed = time.time() - t0
    (out / "run.log").write_text(
        f"mode={mode} steps={state.step} params={state.handle.param_count} "
        f"elapsed_s={elapsed:.1f}\n"
    )
    return final
