"""Run artifacts: delimited outputs and the matplotlib figures rendered
alongside them (loss curves, per-image metric charts, ablation tables)."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def write_loss_curve(history, csv_path, png_path):
    """Loss history -> CSV (step,loss,l1,tv) and a log-scale curve figure."""
    csv_path, png_path = Path(csv_path), Path(png_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "l1", "tv"])
        for m in history:
            writer.writerow([m["step"], m["loss"], m.get("l1", ""), m.get("tv", "")])

    if history:
        steps = [m["step"] for m in history]
        losses = [m["loss"] for m in history]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(steps, losses, lw=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(png_path, dpi=120)
        plt.close(fig)
    return csv_path, png_path


def format_table(rows, columns):
    """Plain fixed-width text table for stdout."""
    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    data = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(d[i]) for d in data)) if data else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for d in data:
        lines.append("  ".join(v.ljust(w) for v, w in zip(d, widths)))
    return "\n".join(lines)


def write_eval_report(report, out_dir):
    """EvalReport -> report.json + report.csv + metrics.png in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))

    columns = ["name", "psnr_db", "ssim", "checkerboard"]
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in report.rows:
            writer.writerow({c: row[c] for c in columns})

    if report.rows:
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
        idx = range(len(report.rows))
        for ax, key in zip(axes, ("psnr_db", "ssim", "checkerboard")):
            vals = [r[key] for r in report.rows]
            ax.bar(idx, vals, color="#4878b0")
            ax.axhline(report.aggregate[key], color="#c44e52", lw=1, ls="--",
                       label=f"mean {report.aggregate[key]:.3f}")
            ax.set_title(key)
            ax.set_xlabel("image")
            ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "metrics.png", dpi=120)
        plt.close(fig)
    return out / "report.json"


def write_ablation_report(result, out_dir):
    """Identity-mapping ablation -> ablation.json + ablation.csv + ablation.png."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(result, indent=2))

    cells = result["cells"]
    columns = ["scheme", "denoiser", "psnr_out_noisy", "psnr_out_clean",
               "psnr_noisy_clean", "identity_mapping"]
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for cell in cells:
            writer.writerow({c: cell[c] for c in columns})

    fig, ax = plt.subplots(figsize=(7, 3.5))
    labels = [f"{c['scheme']}\n{c['denoiser']}" for c in cells]
    x = range(len(cells))
    w = 0.35
    ax.bar([i - w / 2 for i in x], [c["psnr_out_noisy"] for c in cells], w,
           label="PSNR(out, noisy)", color="#c44e52")
    ax.bar([i + w / 2 for i in x], [c["psnr_out_clean"] for c in cells], w,
           label="PSNR(out, clean)", color="#4878b0")
    ax.axhline(cells[0]["psnr_noisy_clean"], color="gray", lw=1, ls=":",
               label="PSNR(noisy, clean)")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "ablation.png", dpi=120)
    plt.close(fig)
    return out / "ablation.json"
