"""Segmentation metrics: adjusted Rand index and mean segmentation covering."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch

from ._kernels import label_contingency


class UndefinedMetricError(ValueError):
    pass


class InvalidDatasetError(ValueError):
    pass


@dataclass
class Segmentation:
    labels: np.ndarray
    num_labels: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_labels):
            raise ValueError("labels must lie in [0, num_labels)")

    @classmethod
    def from_labels(cls, labels) -> "Segmentation":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(labels, int(labels.max()) + 1 if labels.size else 0)


def _labels(s) -> np.ndarray:
    return s.labels if isinstance(s, Segmentation) else np.asarray(s, dtype=np.int64)


def predict_segmentation(masks) -> list[Segmentation]:
    """Arg-max readout of B x K x 1 x H x W mixture masks (ties go to the lowest k)."""
    pi = masks.pi if hasattr(masks, "pi") else masks
    if isinstance(pi, torch.Tensor):
        pi = pi.detach().cpu().numpy()
    pi = pi[:, :, 0]
    k = pi.shape[1]
    return [Segmentation(np.argmax(p, axis=0), k) for p in pi]


def _comb2(n):
    n = np.asarray(n, dtype=np.float64)
    return n * (n - 1) / 2


def ari(gt, pred, exclude_background: bool = True) -> float:
    """Adjusted Rand index between two pixel partitions.

    With ``exclude_background`` the pixels where ``gt == 0`` are dropped.
    Two single-cluster partitions score 1.
    """
    g = _labels(gt).ravel()
    p = _labels(pred).ravel()
    if g.shape != p.shape:
        raise ValueError("segmentations must have the same size")
    if exclude_background:
        keep = g != 0
        g, p = g[keep], p[keep]
    if g.size == 0:
        raise UndefinedMetricError("no pixels left after background exclusion")
    table = label_contingency(g, p)
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(g.size)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions are single clusters (or a single pixel)
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def msc(gt, pred, weighted: bool = False) -> float:
    """Mean over ground-truth foreground segments of the best IoU with any predicted segment.

    ``weighted=True`` weights each segment by its pixel count.
    """
    g = _labels(gt).ravel()
    p = _labels(pred).ravel()
    if g.shape != p.shape:
        raise ValueError("segmentations must have the same size")
    table = label_contingency(g, p).astype(np.float64)
    gt_sizes = table.sum(axis=1)
    pred_sizes = table.sum(axis=0)
    union = gt_sizes[:, None] + pred_sizes[None, :] - table
    iou = np.divide(table, union, out=np.zeros_like(table), where=union > 0)
    segs = [i for i in range(1, table.shape[0]) if gt_sizes[i] > 0]
    if not segs:
        raise UndefinedMetricError("ground truth has no foreground segments")
    best = iou[segs].max(axis=1)
    if weighted:
        w = gt_sizes[segs]
        return float((best * w).sum() / w.sum())
    return float(best.mean())


@dataclass
class MetricsReport:
    ari_mean: float
    ari_std: float
    msc_mean: float
    msc_std: float
    recon_err_mean: float
    num_images: int
    component_usage: list

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @property
    def collapsed(self) -> bool:
        return max(self.component_usage) > COLLAPSE_THRESHOLD


COLLAPSE_THRESHOLD = 0.95


@torch.no_grad()
def evaluate(model, dataset, num_images: int = 300, seed: int = 0, batch_size: int = 32) -> MetricsReport:
    """Score ``model`` on ``num_images`` validation images picked deterministically from ``seed``.

    ``dataset`` must expose ``val_indices`` and ``__getitem__`` returning
    ``(image, instance_mask)``.
    """
    val = list(getattr(dataset, "val_indices", range(len(dataset))))
    if num_images < 1 or num_images > len(val):
        raise ValueError(f"num_images={num_images} but only {len(val)} validation images")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(val, size=num_images, replace=False).tolist())
    gen = torch.Generator().manual_seed(seed)
    was_training = model.training
    model.eval()
    aris, mscs, errs, usage = [], [], [], []
    try:
        for start in range(0, num_images, batch_size):
            idx = chosen[start:start + batch_size]
            items = [dataset[i] for i in idx]
            for _, m in items:
                if m is None:
                    raise InvalidDatasetError("dataset lacks ground-truth instance masks")
            x = torch.stack([torch.as_tensor(im) for im, _ in items]).float()
            out = model(x, generator=gen)
            errs.extend((out.nll_per_image / x[0].numel()).tolist())
            usage.append(out.masks.pi.sum(dim=(2, 3, 4)).numpy())
            for seg, (_, m) in zip(predict_segmentation(out.masks), items):
                m = np.asarray(m)
                aris.append(ari(m, seg))
                mscs.append(msc(m, seg))
    finally:
        model.train(was_training)
    mass = np.concatenate(usage).sum(axis=0)
    return MetricsReport(
        ari_mean=float(np.mean(aris)),
        ari_std=float(np.std(aris)),
        msc_mean=float(np.mean(mscs)),
        msc_std=float(np.std(mscs)),
        recon_err_mean=float(np.mean(errs)),
        num_images=num_images,
        component_usage=(mass / mass.sum()).tolist(),
    )
