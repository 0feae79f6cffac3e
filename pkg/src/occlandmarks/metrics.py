"""Pure metric kernels: NME, visibility classification scores and error-curve statistics.

Occluded is the positive class throughout; scores are occlusion scores 1 - v_hat.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _errors(pred, gt, d) -> tuple[np.ndarray, np.ndarray]:
    """Per-point normalized errors, shape (N, P), and d as (N,)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"point count mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    d = np.broadcast_to(np.asarray(d, dtype=np.float64), pred.shape[:1])
    if not np.all(d > 0):
        raise ValueError("normalization factor d must be positive")
    return np.linalg.norm(pred - gt, axis=-1) / d[:, None], d


def per_sample_nme(pred, gt, d) -> np.ndarray:
    return _errors(pred, gt, d)[0].mean(axis=1)


def nme(pred, gt, d) -> float:
    """Mean over samples of (1/P) sum_p ||pred_p - gt_p|| / d."""
    return float(per_sample_nme(pred, gt, d).mean())


def nme_split(pred, gt, visibility, d) -> tuple[float | None, float | None]:
    """Mean normalized error over visible and over occluded points (pooled); None when empty."""
    err, _ = _errors(pred, gt, d)
    vis = np.asarray(visibility).reshape(err.shape)
    if not np.isin(vis, (0, 1)).all():
        raise ValueError("visibility must be 0/1")
    out = []
    for sel in (vis == 1, vis == 0):
        out.append(float(err[sel].mean()) if sel.any() else None)
    return out[0], out[1]


def _scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y.astype(np.int64)


def has_ties(scores) -> bool:
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    return bool(np.any(s[1:] == s[:-1]))


def ranking(scores) -> np.ndarray:
    """Descending score order, ties kept in input order."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    return np.argsort(-s, kind="stable")


def precision_recall_points(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after each rank position of the stable descending ranking."""
    s, y = _scores_labels(scores, labels)
    hits = y[ranking(s)]
    tp = np.cumsum(hits)
    k = np.arange(1, len(hits) + 1)
    pos = max(int(y.sum()), 1)
    return tp / k, tp / pos


def occ_ap(scores, labels, interpolation: str = "finite") -> float | None:
    """Average precision of the occluded class.

    ``finite``: mean of precision at the rank of each positive.
    ``101``: mean over recall levels 0, 0.01, ..., 1 of the best precision at recall >= level.
    """
    s, y = _scores_labels(scores, labels)
    if y.sum() == 0:
        return None
    precision, recall = precision_recall_points(s, y)
    if interpolation == "finite":
        hits = y[ranking(s)] == 1
        return float(precision[hits].sum() / hits.sum())
    if interpolation == "101":
        envelope = np.maximum.accumulate(precision[::-1])[::-1]
        levels = np.linspace(0.0, 1.0, 101)
        pos = np.searchsorted(recall, levels - 1e-12, side="left")
        vals = np.where(pos < len(envelope), envelope[np.minimum(pos, len(envelope) - 1)], 0.0)
        return float(vals.mean())
    raise ValueError(f"unknown AP interpolation '{interpolation}'")


def confusion(scores, labels, tau: float) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) when predicting occluded iff score >= tau."""
    s, y = _scores_labels(scores, labels)
    pred = s >= tau
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return tp, fp, fn, len(y) - tp - fp - fn


def f1_at_threshold(scores, labels, tau: float = 0.5) -> float:
    tp, fp, fn, _ = confusion(scores, labels, tau)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def roc_auc(scores, labels) -> float | None:
    """P(score of a random positive > score of a random negative), ties count one half."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ced_curve(per_sample_nmes, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of the piecewise-linear CED on [0, cutoff]: (0, 0), (e_i, i/N), ..., (cutoff, F)."""
    e = np.sort(np.asarray(per_sample_nmes, dtype=np.float64).ravel())
    if e.size == 0:
        raise ValueError("empty NME list")
    if not cutoff > 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    frac = np.arange(1, e.size + 1) / e.size
    keep = e <= cutoff
    xs = np.concatenate([[0.0], e[keep], [cutoff]])
    ys = np.concatenate([[0.0], frac[keep], [frac[keep][-1] if keep.any() else 0.0]])
    return xs, ys


def error_curve_stats(per_sample_nmes, cutoff: float = 0.1) -> tuple[float, float]:
    """(failure rate, CED-AUC normalized to [0, 1]) with trapezoid integration over sorted NMEs."""
    xs, ys = ced_curve(per_sample_nmes, cutoff)
    e = np.asarray(per_sample_nmes, dtype=np.float64).ravel()
    fr = float(np.mean(e > cutoff))
    auc = float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2.0) / cutoff)
    return fr, auc


def macro_average(fn, scores, labels, **kwargs) -> float | None:
    """Apply ``fn`` per landmark column of (N, P) arrays and average the defined values."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 2 or s.shape != y.shape:
        raise ValueError("macro averaging needs matching (N, P) arrays")
    vals = [fn(s[:, p], y[:, p], **kwargs) for p in range(s.shape[1])]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None
