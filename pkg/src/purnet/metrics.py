"""Evaluation metrics for saliency maps.

All functions take numpy arrays: predictions in [0, 1], ground truth binary
{0, 1}. Conventions, fixed here and relied on by the curve endpoints:
binarization is strict ``>`` against the threshold, precision of an empty
prediction is 0, and F is 0 whenever its denominator is 0.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

BETA2 = 0.3


def _check_pair(p: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return p, g


def mae(p: np.ndarray, g: np.ndarray) -> float:
    p, g = _check_pair(p, g)
    return float(np.abs(p - g).mean())


def precision_recall(p_bin: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    p_bin, g = _check_pair(p_bin, g)
    tp = float((p_bin * g).sum())
    pred = float(p_bin.sum())
    pos = float(g.sum())
    precision = tp / pred if pred > 0 else 0.0
    recall = tp / pos if pos > 0 else 0.0
    return precision, recall


def f_beta(p_bin: np.ndarray, g: np.ndarray, beta2: float = BETA2) -> float:
    precision, recall = precision_recall(p_bin, g)
    return _f_from_pr(precision, recall, beta2)


def _f_from_pr(precision: float, recall: float, beta2: float) -> float:
    denom = beta2 * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


def adaptive_threshold(p: np.ndarray) -> float:
    """Twice the map's mean on the 8-bit scale, capped at 255."""
    return min(2.0 * float(np.asarray(p, dtype=np.float64).mean()), 1.0) * 255.0


def adaptive_f_beta(p: np.ndarray, g: np.ndarray, beta2: float = BETA2) -> float:
    p, g = _check_pair(p, g)
    t = min(2.0 * float(p.mean()), 1.0)
    return f_beta(p > t, g, beta2)


@dataclass
class FMeasureCurve:
    """Dataset-level precision/recall/F over the 256 integer thresholds."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        for name in ("thresholds", "precision", "recall", "f"):
            if len(getattr(self, name)) != 256:
                raise ValueError(f"{name} must have length 256")


def f_curve(pairs, beta2: float = BETA2) -> FMeasureCurve:
    """F-measure curve over thresholds 0..255.

    Per threshold t, each map is binarized at ``value > t/255``; precision
    and recall are averaged over the dataset first, then combined into F.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("f_curve needs at least one (prediction, mask) pair")
    thresholds = np.arange(256)
    cuts = thresholds / 255.0
    precision_sum = np.zeros(256)
    recall_sum = np.zeros(256)
    for p, g in pairs:
        p, g = _check_pair(p, g)
        fg = g > 0.5
        n_pos = int(fg.sum())
        all_sorted = np.sort(p.ravel())
        fg_sorted = np.sort(p[fg])
        n_pred = p.size - np.searchsorted(all_sorted, cuts, side="right")
        tp = n_pos - np.searchsorted(fg_sorted, cuts, side="right")
        with np.errstate(invalid="ignore", divide="ignore"):
            prec = np.where(n_pred > 0, tp / n_pred, 0.0)
            rec = tp / n_pos if n_pos > 0 else np.zeros(256)
        precision_sum += prec
        recall_sum += rec
    precision = precision_sum / len(pairs)
    recall = recall_sum / len(pairs)
    denom = beta2 * precision + recall
    f = np.where(denom > 0, (1.0 + beta2) * precision * recall / np.maximum(denom, 1e-300), 0.0)
    return FMeasureCurve(thresholds=thresholds, precision=precision, recall=recall, f=f)


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def weighted_f_beta(p: np.ndarray, g: np.ndarray, beta2: float = 1.0) -> float:
    """Weighted F-measure: errors are propagated from foreground into the
    background via the nearest-foreground assignment, smoothed, and decayed
    with distance so that mistakes near the object count more."""
    p, g = _check_pair(p, g)
    gt = g > 0.5
    if not gt.any():
        return 0.0
    e = np.abs(p - g)

    dst, (iy, ix) = ndimage.distance_transform_edt(~gt, return_indices=True)
    et = e.copy()
    et[~gt] = et[iy[~gt], ix[~gt]]

    ea = ndimage.convolve(et, _gaussian_kernel(), mode="constant", cval=0.0)
    min_e_ea = e.copy()
    replace = gt & (ea < e)
    min_e_ea[replace] = ea[replace]

    b = np.ones_like(e)
    b[~gt] = 2.0 - np.exp(np.log(0.5) / 5.0 * dst[~gt])
    ew = min_e_ea * b

    eps = np.finfo(np.float64).eps
    tpw = float(gt.sum()) - float(ew[gt].sum())
    fpw = float(ew[~gt].sum())
    recall = 1.0 - float(ew[gt].mean())
    precision = tpw / (eps + tpw + fpw)
    return float((1.0 + beta2) * recall * precision / (eps + recall + beta2 * precision))


def evaluate_pairs(pairs, beta2: float = BETA2) -> tuple[dict, FMeasureCurve]:
    """Dataset-level report: mean MAE, adaptive F, weighted F, plus the curve."""
    pairs = list(pairs)
    maes = [mae(p, g) for p, g in pairs]
    adaptive = [adaptive_f_beta(p, g, beta2) for p, g in pairs]
    weighted = [weighted_f_beta(p, g) for p, g in pairs]
    curve = f_curve(pairs, beta2)
    report = {
        "n_images": len(pairs),
        "mae": float(np.mean(maes)),
        "adaptive_f_beta": float(np.mean(adaptive)),
        "weighted_f_beta": float(np.mean(weighted)),
        "max_curve_f": float(curve.f.max()),
    }
    return report, curve


def write_report(report: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curve(curve: FMeasureCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f"])
        for i in range(256):
            writer.writerow(
                [
                    int(curve.thresholds[i]),
                    f"{curve.precision[i]:.10f}",
                    f"{curve.recall[i]:.10f}",
                    f"{curve.f[i]:.10f}",
                ]
            )


def read_curve(path: str | Path) -> FMeasureCurve:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    if len(rows) != 256:
        raise ValueError(f"curve table must have 256 rows, found {len(rows)}")
    return FMeasureCurve(
        thresholds=np.array([int(r["threshold"]) for r in rows]),
        precision=np.array([float(r["precision"]) for r in rows]),
        recall=np.array([float(r["recall"]) for r in rows]),
        f=np.array([float(r["f"]) for r in rows]),
    )
