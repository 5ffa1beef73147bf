"""Evaluation suite: accuracy, mean recall/precision/IoU, boundary F1.

Void ground-truth cells are excluded everywhere. Predicted void counts as a
distinct wrong column in the confusion matrix. Class means run over classes
with a nonzero union (present in prediction or ground truth); classes absent
from both are excluded rather than averaged as 0/0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .categories import NUM_CLASSES, VOID


def _as_ids(m) -> np.ndarray:
    data = getattr(m, "data", m)
    return np.asarray(data, dtype=np.uint8)


def confusion(pred, gt, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """(K, K+1) counts over non-void ground-truth cells; column K is
    predicted-void."""
    p = _as_ids(pred)
    g = _as_ids(gt)
    if p.shape != g.shape:
        raise ValueError(f"extent mismatch: pred {p.shape} vs gt {g.shape}")
    keep = g != VOID
    g = g[keep].astype(np.int64)
    p = p[keep].astype(np.int64)
    if (g >= num_classes).any():
        raise ValueError("ground-truth ids exceed the class count")
    p = np.where(p == VOID, num_classes, p)
    if (p > num_classes).any():
        raise ValueError("prediction ids exceed the class count")
    mat = np.zeros((num_classes, num_classes + 1), dtype=np.int64)
    np.add.at(mat, (g, p), 1)
    return mat


@dataclass
class MetricsReport:
    acc: float
    m_recall: float
    m_precision: float
    m_iou: float
    m_bf1: float
    confusion: np.ndarray
    per_class: dict[str, np.ndarray] = field(default_factory=dict)
    degenerate: bool = False


def summarize(conf: np.ndarray):
    """acc / mRecall / mPrecision / mIoU plus per-class vectors."""
    conf = np.asarray(conf, dtype=np.int64)
    k = conf.shape[0]
    total = conf.sum()
    diag = np.diag(conf[:, :k]).astype(np.float64)
    row = conf.sum(axis=1).astype(np.float64)
    col = conf[:, :k].sum(axis=0).astype(np.float64)
    union = row + col - diag
    present = (row + col) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(row > 0, diag / row, 0.0)
        precision = np.where(col > 0, diag / col, 0.0)
        iou = np.where(union > 0, diag / union, 0.0)
    if total == 0:
        return {
            "acc": 0.0, "m_recall": 0.0, "m_precision": 0.0, "m_iou": 0.0,
            "recall": recall, "precision": precision, "iou": iou,
            "present": present, "degenerate": True,
        }
    return {
        "acc": float(diag.sum() / total),
        "m_recall": float(recall[present].mean()),
        "m_precision": float(precision[present].mean()),
        "m_iou": float(iou[present].mean()),
        "recall": recall, "precision": precision, "iou": iou,
        "present": present, "degenerate": False,
    }


def _boundaries(ids: np.ndarray, cls: int) -> np.ndarray:
    """Cells of a class with a 4-neighbor of another label (the map border
    counts as different)."""
    own = ids == cls
    padded = np.pad(ids, 1, constant_values=VOID)
    differs = np.zeros_like(own)
    for dj, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = padded[1 + dj:1 + dj + ids.shape[0], 1 + di:1 + di + ids.shape[1]]
        differs |= nb != ids
    return own & differs


def _dilate(mask: np.ndarray, tol: int) -> np.ndarray:
    """Chebyshev-ball dilation by shifting."""
    if tol == 0:
        return mask
    h, w = mask.shape
    out = np.zeros_like(mask)
    padded = np.pad(mask, tol)
    for dj in range(-tol, tol + 1):
        for di in range(-tol, tol + 1):
            out |= padded[tol + dj:tol + dj + h, tol + di:tol + di + w]
    return out


def boundary_f1(pred, gt, tolerance: int = 2, num_classes: int = NUM_CLASSES):
    """Mean boundary F1: contour matching within a Chebyshev distance."""
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    p = _as_ids(pred)
    g = _as_ids(gt)
    if p.shape != g.shape:
        raise ValueError(f"extent mismatch: pred {p.shape} vs gt {g.shape}")
    f1s = np.zeros(num_classes)
    present = np.zeros(num_classes, bool)
    for cls in range(num_classes):
        pb = _boundaries(p, cls)
        gb = _boundaries(g, cls)
        np_, ng = pb.sum(), gb.sum()
        if np_ == 0 and ng == 0:
            continue
        present[cls] = True
        matched_p = (pb & _dilate(gb, tolerance)).sum()
        matched_g = (gb & _dilate(pb, tolerance)).sum()
        prec = matched_p / np_ if np_ else 0.0
        rec = matched_g / ng if ng else 0.0
        f1s[cls] = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    mbf1 = float(f1s[present].mean()) if present.any() else 0.0
    return mbf1, f1s, present


def evaluate(pred, gt, tolerance: int = 2,
             num_classes: int = NUM_CLASSES) -> MetricsReport:
    conf = confusion(pred, gt, num_classes)
    s = summarize(conf)
    mbf1, f1s, bf_present = boundary_f1(pred, gt, tolerance, num_classes)
    return MetricsReport(
        acc=s["acc"], m_recall=s["m_recall"], m_precision=s["m_precision"],
        m_iou=s["m_iou"], m_bf1=mbf1, confusion=conf,
        per_class={
            "recall": s["recall"], "precision": s["precision"],
            "iou": s["iou"], "bf1": f1s, "present": s["present"],
            "bf1_present": bf_present,
        },
        degenerate=s["degenerate"],
    )


def masked_prediction(pred: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Prediction restricted to observed cells (rest void) for
    observed-cell evaluation."""
    out = _as_ids(pred).copy()
    out[~observed] = VOID
    return out


def mask_map(ids, observed: np.ndarray) -> np.ndarray:
    out = _as_ids(ids).copy()
    out[~observed] = VOID
    return out


def format_report(report: MetricsReport, names=None) -> str:
    from .categories import CATEGORIES

    names = names or CATEGORIES
    lines = [
        f"{'metric':<12}{'value':>10}",
        f"{'acc':<12}{report.acc:>10.4f}",
        f"{'mRecall':<12}{report.m_recall:>10.4f}",
        f"{'mPrecision':<12}{report.m_precision:>10.4f}",
        f"{'mIoU':<12}{report.m_iou:>10.4f}",
        f"{'mBF1':<12}{report.m_bf1:>10.4f}",
        "",
        f"{'class':<12}{'recall':>8}{'prec':>8}{'iou':>8}{'bf1':>8}",
    ]
    for k, name in enumerate(names):
        if not report.per_class["present"][k] and not report.per_class["bf1_present"][k]:
            continue
        lines.append(
            f"{name:<12}"
            f"{report.per_class['recall'][k]:>8.4f}"
            f"{report.per_class['precision'][k]:>8.4f}"
            f"{report.per_class['iou'][k]:>8.4f}"
            f"{report.per_class['bf1'][k]:>8.4f}"
        )
    if report.degenerate:
        lines.append("NOTE: no non-void ground-truth cells (degenerate)")
    return "\n".join(lines)


def report_lines(report: MetricsReport) -> list[str]:
    """Machine-readable `key=value` lines."""
    return [
        f"acc={report.acc:.6f}",
        f"m_recall={report.m_recall:.6f}",
        f"m_precision={report.m_precision:.6f}",
        f"m_iou={report.m_iou:.6f}",
        f"m_bf1={report.m_bf1:.6f}",
        f"degenerate={int(report.degenerate)}",
    ]
