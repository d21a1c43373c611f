"""Plots, qualitative panels and text tables from a sweep CSV."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from PIL import Image  # noqa: E402

from .harness import CSV_HEADER, FINAL_CHECKPOINT, cell_name, runs_dir_for  # noqa: E402

log = logging.getLogger(__name__)

PANEL_IMAGES = 3


class ReportParseError(ValueError):
    pass


def read_sweep_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ReportParseError(f"{path}: line 1: empty file") from None
        if tuple(header) != CSV_HEADER:
            raise ReportParseError(f"{path}: line 1: unexpected header {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(CSV_HEADER):
                raise ReportParseError(f"{path}: line {lineno}: expected {len(CSV_HEADER)} fields, got {len(rec)}")
            d = dict(zip(CSV_HEADER, rec))
            try:
                row = {
                    "dataset": d["dataset"],
                    "architecture": d["architecture"],
                    "latent_dim": int(d["latent_dim"]),
                    "seed": int(d["seed"]),
                    "steps_to_goal": int(d["steps_to_goal"]),
                }
                for k in ("ari_mean", "ari_std", "msc_mean", "msc_std", "recon_err_final"):
                    row[k] = float(d[k])
                if d["collapsed"] not in ("true", "false"):
                    raise ValueError(f"collapsed must be true/false, got {d['collapsed']!r}")
                row["collapsed"] = d["collapsed"] == "true"
            except ValueError as e:
                raise ReportParseError(f"{path}: line {lineno}: {e}") from e
            rows.append(row)
    return rows


def _group(rows):
    groups = defaultdict(list)
    for r in rows:
        groups[(r["dataset"], r["architecture"])].append(r)
    return groups


def _seed_stats(rows, key):
    by_ld = defaultdict(list)
    for r in rows:
        if not math.isnan(r[key]):
            by_ld[r["latent_dim"]].append(r[key])
    lds = sorted(by_ld)
    mean = [float(np.mean(by_ld[ld])) for ld in lds]
    std = [float(np.std(by_ld[ld])) for ld in lds]
    return lds, mean, std


def _line_plot(path, title, series, ylabel):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for label, (lds, mean, std) in series.items():
        ax.errorbar(lds, mean, yerr=std, marker="o", capsize=3, label=label)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("component latent dimension")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)


@torch.no_grad()
def qualitative_panel(ckpt_path, out_path, num_images: int = PANEL_IMAGES, seed: int = 0) -> Path | None:
    """Rows: validation images. Columns: input, reconstruction, pi_k * mu_k for each k."""
    from .checkpoint import load_model
    from .data import load_dataset

    model, meta = load_model(ckpt_path)
    run = meta.get("run_config", {})
    ds = load_dataset(run["dataset_dir"])
    val = list(ds.val_indices)[:num_images]
    if not val:
        return None
    model.eval()
    x = torch.from_numpy(ds.images(val))
    out = model(x, generator=torch.Generator().manual_seed(seed))
    recon = out.reconstruction.numpy()
    parts = (out.masks.pi * out.appearances).numpy()
    gap = 2
    rows = []
    for i in range(len(val)):
        tiles = [x[i].numpy(), recon[i]] + [parts[i, k] for k in range(parts.shape[1])]
        row = []
        for t in tiles:
            row.append(_to_uint8(t))
            row.append(np.full((t.shape[1], gap, 3), 255, np.uint8))
        rows.append(np.concatenate(row[:-1], axis=1))
        rows.append(np.full((gap, rows[-1].shape[1], 3), 255, np.uint8))
    Image.fromarray(np.concatenate(rows[:-1], axis=0)).save(out_path, format="PNG")
    return Path(out_path)


def bottleneck_table(rows) -> str:
    """Text table in the style of 'Goal iter / final err' per latent dim.

    A cell shows the mean steps-to-goal when every seed reached the goal,
    otherwise the mean final moving-average error.
    """
    groups = _group(rows)
    lines = []
    for (dataset, arch), rs in sorted(groups.items()):
        lines.append(f"{dataset} / {arch}")
        lines.append(f"{'latent':>8} {'goal iter':>10} {'final err':>10}")
        by_ld = defaultdict(list)
        for r in rs:
            by_ld[r["latent_dim"]].append(r)
        for ld in sorted(by_ld):
            cell = by_ld[ld]
            if all(r["steps_to_goal"] >= 0 for r in cell):
                it = np.mean([r["steps_to_goal"] for r in cell])
                lines.append(f"{ld:>8} {_fmt_iters(it):>10} {'-':>10}")
            else:
                errs = [r["recon_err_final"] for r in cell if not math.isnan(r["recon_err_final"])]
                err = f"{np.mean(errs):.4f}" if errs else "failed"
                lines.append(f"{ld:>8} {'-':>10} {err:>10}")
        lines.append("")
    return "\n".join(lines)


def _fmt_iters(it: float) -> str:
    return f"{it / 1000:.0f}k" if it >= 1000 else f"{it:.0f}"


def report(csv_path, out_dir) -> list[Path]:
    """Write plots, panels and the text table for a sweep CSV; returns written paths."""
    rows = read_sweep_csv(csv_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (dataset, arch), rs in sorted(_group(rows).items()):
        tag = f"{dataset}_{arch}"
        p = out / f"segmentation_{tag}.svg"
        _line_plot(p, f"{dataset}: {arch}",
                   {"ARI": _seed_stats(rs, "ari_mean"), "MSC": _seed_stats(rs, "msc_mean")},
                   "score")
        written.append(p)
        p = out / f"recon_err_{tag}.svg"
        _line_plot(p, f"{dataset}: {arch}", {"recon": _seed_stats(rs, "recon_err_final")},
                   "NLL per pixel-channel")
        written.append(p)

    runs = runs_dir_for(csv_path)
    for r in rows:
        name = cell_name(r["architecture"], r["latent_dim"], r["seed"])
        ckpt = runs / r["dataset"] / name / FINAL_CHECKPOINT
        if not ckpt.is_file():
            log.info("no checkpoint for %s; skipping panel", name)
            continue
        p = qualitative_panel(ckpt, out / f"panel_{r['dataset']}_{name}.png")
        if p is not None:
            written.append(p)

    p = out / "bottleneck_table.txt"
    p.write_text(bottleneck_table(rows))
    written.append(p)
    return written
