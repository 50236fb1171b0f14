"""Command-line interface.

Subcommands: train, finetune, denoise, eval, ablate-identity. Options come
from built-in defaults, overridden by a YAML config file (--config),
overridden by explicit flags, in that order. Every command snapshots its
effective configuration into its output directory. The default run root is
$MASKDENOISE_RUN_ROOT (falling back to ./runs).
"""

import argparse
import os
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import yaml

from .core import load_png, save_png
from .datasets import load_folder
from .denoisers import CheckpointError, load_checkpoint
from .inference import InferConfig, RefineConfig, denoise_variant, check_variant
from .training import NonFiniteLossError, TrainConfig, run_training
from .util import derive_seed

RUN_ROOT_ENV = "MASKDENOISE_RUN_ROOT"


def _run_root():
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _load_config_file(path):
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a key/value mapping")
    return data


def _merge_train_config(args, extra_defaults=None):
    """defaults < config file < explicit flags."""
    cfg = asdict(TrainConfig())
    if extra_defaults:
        cfg.update(extra_defaults)
    file_vals = _load_config_file(args.config)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(file_vals) - known - {"mode", "data", "out"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)} (known: {sorted(known)})")
    cfg.update({k: v for k, v in file_vals.items() if k in known})
    for key in known:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return TrainConfig(**cfg).validate()


def _add_train_flags(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--data", help="folder of noisy PNGs")
    p.add_argument("--out", help="run directory (default: under the run root)")
    p.add_argument("--arch", dest="arch",
                   choices=["unet-small", "dncnn", "blindspot-a", "blindspot-as"])
    p.add_argument("--steps", type=int, dest="steps")
    p.add_argument("--mask-ratio", type=float, dest="mask_ratio")
    p.add_argument("--pd-train", type=int, dest="s_train", help="training-side stride")
    p.add_argument("--patch", type=int, dest="patch_size")
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--lr", type=float, dest="lr")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--width", type=int, dest="width")
    p.add_argument("--depth", type=int, dest="depth")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--augment", action="store_const", const=True, dest="augment")
    p.add_argument("--resume", action="store_true")


def _train_data(args, file_vals):
    data = args.data or file_vals.get("data")
    if not data:
        raise ValueError("no dataset given: pass --data or put 'data:' in the config file")
    return load_folder(data, paired=False)


def cmd_train(args):
    file_vals = _load_config_file(args.config)
    config = _merge_train_config(args)
    dataset = _train_data(args, file_vals)
    out = args.out or file_vals.get("out") or _run_root() / f"train-{int(time.time())}"
    final = run_training(config, dataset, mode="base", out_dir=out, resume=args.resume)
    print(f"wrote {final}")
    return 0


def cmd_finetune(args):
    file_vals = _load_config_file(args.config)
    config = _merge_train_config(args)
    dataset = _train_data(args, file_vals)
    base = args.base_ckpt or file_vals.get("base_ckpt")
    if not base:
        raise ValueError("fine-tuning needs --base-ckpt (a variant-B checkpoint)")
    out = args.out or file_vals.get("out") or _run_root() / f"finetune-{int(time.time())}"
    final = run_training(
        config, dataset, mode="finetune", out_dir=out, base_ckpt=base, resume=args.resume
    )
    print(f"wrote {final}")
    return 0


def _infer_config(args):
    refine = RefineConfig(
        enabled=bool(args.refine),
        T=args.refine_T if args.refine_T is not None else 8,
        p=args.refine_p if args.refine_p is not None else 0.16,
    )
    return InferConfig(
        s_inf=args.s_inf if args.s_inf is not None else 2,
        k=args.k if args.k is not None else 2,
        seed=args.seed if args.seed is not None else 0,
        refine=refine,
        tile=args.tile,
    )


def _add_infer_flags(p):
    p.add_argument("--variant", default="B", choices=["B", "P", "B-E", "P-E"])
    p.add_argument("--pd-infer", type=int, dest="s_inf", help="inference-side stride")
    p.add_argument("--k", type=int, dest="k", help="number of complementary branches")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--refine", action="store_true", default=False,
                   help="apply random-replacement refinement")
    p.add_argument("--no-refine", action="store_false", dest="refine")
    p.add_argument("--refine-T", type=int, dest="refine_T")
    p.add_argument("--refine-p", type=float, dest="refine_p")
    p.add_argument("--tile", type=int, help="tile size for large images (32 px overlap)")


def _collect_inputs(path):
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*.png"))
    if p.is_file():
        return [p]
    raise FileNotFoundError(f"input path not found: {p}")


def cmd_denoise(args):
    handle = load_checkpoint(args.ckpt)
    check_variant(handle, args.variant)
    cfg = _infer_config(args)
    inputs = _collect_inputs(args.input)
    if not inputs:
        raise ValueError(f"no PNG inputs under {args.input}")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "denoise_config.yaml").write_text(yaml.safe_dump({
        "ckpt": str(args.ckpt), "variant": args.variant, "s_inf": cfg.s_inf,
        "k": cfg.k, "seed": cfg.seed, "refine": asdict(cfg.refine), "tile": cfg.tile,
    }))
    failures = 0
    for i, path in enumerate(inputs):
        try:
            img = load_png(path)
            out = denoise_variant(handle, img, args.variant,
                                  replace(cfg, seed=derive_seed(cfg.seed, "image", i)))
            save_png(out, out_dir / f"{path.stem}.png")
        except (OSError, ValueError) as exc:
            failures += 1
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
    if failures == len(inputs):
        raise RuntimeError("all inputs failed")
    print(f"denoised {len(inputs) - failures}/{len(inputs)} image(s) into {out_dir}")
    return 0


def cmd_eval(args):
    from .evaluation import evaluate
    from .report import format_table, write_eval_report

    handle = load_checkpoint(args.ckpt)
    check_variant(handle, args.variant)
    cfg = _infer_config(args)
    dataset = load_folder(args.data, paired=True)
    if len(dataset) == 0:
        raise ValueError(f"paired dataset at {args.data} is empty")
    report = evaluate(handle, dataset, args.variant, cfg)
    out_dir = Path(args.out or _run_root() / f"eval-{int(time.time())}")
    write_eval_report(report, out_dir)
    (out_dir / "eval_config.yaml").write_text(yaml.safe_dump(report.config))
    print(format_table(report.rows, ["name", "psnr_db", "ssim", "checkerboard"]))
    agg = report.aggregate
    print(f"\nmean: psnr={agg['psnr_db']:.3f} dB  ssim={agg['ssim']:.4f}  "
          f"checkerboard={agg['checkerboard']:.5f}  "
          f"images={agg['images']}  skipped={agg['skipped']}")
    print(f"wrote {out_dir / 'report.json'}")
    return 0


def cmd_ablate_identity(args):
    from .ablation import AblationConfig, run_identity_ablation
    from .report import format_table, write_ablation_report

    file_vals = _load_config_file(args.config)
    cfg = AblationConfig()
    for key in ("steps", "sigma", "kernel_size", "stride", "seed", "patch_size",
                "batch_size", "lr", "width", "depth", "n_train", "n_val"):
        if key in file_vals:
            setattr(cfg, key, file_vals[key])
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    cfg.validate()
    out_dir = Path(args.out or _run_root() / f"ablate-{int(time.time())}")

    def progress(cell):
        print(f"cell {cell['scheme']}/{cell['denoiser']}: "
              f"PSNR(out,noisy)={cell['psnr_out_noisy']:.2f} dB "
              f"PSNR(out,clean)={cell['psnr_out_clean']:.2f} dB "
              f"identity={cell['identity_mapping']}")

    result = run_identity_ablation(cfg, progress=progress)
    write_ablation_report(result, out_dir)
    print()
    print(format_table(result["cells"],
                       ["scheme", "denoiser", "psnr_out_noisy", "psnr_out_clean",
                        "psnr_noisy_clean", "identity_mapping"]))
    flagged = [c for c in result["cells"] if c["identity_mapping"]]
    for c in flagged:
        print(f"\nidentity mapping detected: {c['scheme']}/{c['denoiser']}")
    print(f"wrote {out_dir / 'ablation.json'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="maskdenoise",
        description="Self-supervised denoising: masked training, "
                    "complementary multi-branch inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="base training with the single-mask scheme")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="smoothness fine-tuning from a base checkpoint")
    _add_train_flags(p)
    p.add_argument("--base-ckpt", dest="base_ckpt", help="variant-B checkpoint to start from")
    p.add_argument("--lam", type=float, dest="lam", help="smoothness loss weight")
    p.add_argument("--k", type=int, dest="k", help="branches per fine-tune step")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("denoise", help="denoise PNGs with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="PNG file or folder")
    p.add_argument("--output", required=True, help="output folder")
    _add_infer_flags(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="score a checkpoint on a paired noisy/clean folder")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="folder with noisy/ and clean/ subdirs")
    p.add_argument("--out", help="report directory")
    _add_infer_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-identity",
                       help="2x2 identity-mapping ablation on synthetic correlated noise")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--out", help="report directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--kernel-size", type=int, dest="kernel_size")
    p.add_argument("--pd", type=int, dest="stride")
    p.add_argument("--seed", type=int)
    p.add_argument("--patch", type=int, dest="patch_size")
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-val", type=int, dest="n_val")
    p.set_defaults(func=cmd_ablate_identity)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, CheckpointError, NonFiniteLossError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
