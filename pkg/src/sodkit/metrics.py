"""Saliency evaluation: PR curves, F-beta, structure measure, MAE.

All functions take 2-d maps (a leading singleton channel is squeezed).
Ground truths with no foreground cannot anchor a PR curve; the dataset
accumulator counts them and leaves them out of the F/PR averages while
still scoring them for S and MAE.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError

N_THRESH = 256
BETA2 = 0.3
EPS = 1e-8
# bin k catches values in [k/255, (k+1)/255), so "pred >= k/255" is the
# tail sum from bin k; the last edge is open to catch exactly 1.0
_EDGES = np.append(np.arange(N_THRESH) / 255.0, np.inf)


def _as2d(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-d map, got shape {a.shape}")
    return a


def _pair(pred, gt):
    p = _as2d(pred, "pred")
    g = _as2d(gt, "gt")
    if p.shape != g.shape:
        raise DimensionError(f"pred {p.shape} vs gt {g.shape}")
    return p, g


def is_degenerate(gt) -> bool:
    """True when the ground truth has no foreground at all."""
    return float(_as2d(gt, "gt").sum()) == 0.0


def confusion_counts(pred, gt):
    """TP/FP/FN at all 256 thresholds t_k = k/255 (pred >= t_k)."""
    p, g = _pair(pred, gt)
    fg = g > 0.5
    tp = np.histogram(p[fg], bins=_EDGES)[0][::-1].cumsum()[::-1].astype(np.float64)
    fp = np.histogram(p[~fg], bins=_EDGES)[0][::-1].cumsum()[::-1].astype(np.float64)
    fn = fg.sum() - tp
    return tp, fp, fn


def pr_curve(pred, gt):
    """Per-image (precision, recall) arrays over the 256 thresholds."""
    tp, fp, fn = confusion_counts(pred, gt)
    precision = tp / (tp + fp + EPS)
    recall = tp / (tp + fn + EPS)
    return precision, recall


def f_beta_curve(precision, recall, beta2: float = BETA2):
    return (1.0 + beta2) * precision * recall / (beta2 * precision + recall + EPS)


def f_measure(pred, gt):
    """(max, mean) of the F-beta curve of one prediction."""
    f = f_beta_curve(*pr_curve(pred, gt))
    return float(f.max()), float(f.mean())


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.abs(p - g).mean())


# -- structure measure --------------------------------------------------


def _object_similarity(vals: np.ndarray) -> float:
    if vals.size == 0:
        return 0.0
    mu = vals.mean()
    sigma = vals.std(ddof=1) if vals.size > 1 else 0.0
    # denominator >= 1, and identical maps must score exactly 1
    return 2.0 * mu / (mu * mu + 1.0 + sigma)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    fg_mask = g > 0.5
    u = g.mean()
    return u * _object_similarity(p[fg_mask]) \
        + (1.0 - u) * _object_similarity(1.0 - p[~fg_mask])


def _gt_centroid(g: np.ndarray):
    """1-based (row, col): round the 0-based foreground mean, add 1."""
    h, w = g.shape
    total = g.sum()
    if total == 0:
        return int(np.round(h / 2)) + 1, int(np.round(w / 2)) + 1
    cy = int(np.round((g.sum(axis=1) * np.arange(h)).sum() / total)) + 1
    cx = int(np.round((g.sum(axis=0) * np.arange(w)).sum() / total)) + 1
    return cy, cx


def _ssim_block(x: np.ndarray, y: np.ndarray) -> float:
    n = x.size
    if n == 0:
        return 1.0
    mx, my = x.mean(), y.mean()
    if n > 1:
        vx = x.var(ddof=1)
        vy = y.var(ddof=1)
        cov = ((x - mx) * (y - my)).sum() / (n - 1)
    else:
        vx = vy = cov = 0.0
    a = 4.0 * mx * my * cov
    b = (mx * mx + my * my) * (vx + vy)
    # a != 0 forces b > 0 (means nonzero, vx + vy >= 2|cov|), so the
    # division is safe without a guard term and self-similarity is exact
    if a != 0:
        return a / b
    return 1.0 if b == 0 else 0.0


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    cy, cx = _gt_centroid(g)
    area = g.size
    score = 0.0
    for gb, pb in zip(
            (g[:cy, :cx], g[:cy, cx:], g[cy:, :cx], g[cy:, cx:]),
            (p[:cy, :cx], p[:cy, cx:], p[cy:, :cx], p[cy:, cx:])):
        score += (gb.size / area) * _ssim_block(pb.ravel(), gb.ravel())
    return score


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """S = alpha*S_object + (1-alpha)*S_region, with all-background and
    all-foreground handled by the mean rules; clamped to [0, 1]."""
    p, g = _pair(pred, gt)
    y = g.mean()
    if y == 0:
        s = 1.0 - p.mean()
    elif y == 1:
        s = p.mean()
    else:
        s = alpha * _s_object(p, g) + (1.0 - alpha) * _s_region(p, g)
    return float(min(1.0, max(0.0, s)))


# -- dataset aggregation --------------------------------------------------


@dataclass
class MetricsReport:
    f_beta_max: float
    f_beta_mean: float
    s_alpha: float
    mae: float
    pr_curve: list          # 256 rows of (threshold, precision, recall)
    n_images: int
    degenerate_count: int
    pooled_pr: bool = False

    def to_dict(self):
        return {"f_beta_max": self.f_beta_max, "f_beta_mean": self.f_beta_mean,
                "s_alpha": self.s_alpha, "mae": self.mae,
                "n_images": self.n_images,
                "degenerate_count": self.degenerate_count,
                "pooled_pr": self.pooled_pr,
                "pr_curve": [{"threshold": t, "precision": p, "recall": r}
                             for t, p, r in self.pr_curve]}


class DatasetMetrics:
    """Streaming accumulator. add() order does not affect the report
    beyond float associativity; reduce in manifest order for bit-equal
    runs."""

    def __init__(self, pooled_pr: bool = False):
        self.pooled_pr = pooled_pr
        self._p_sum = np.zeros(N_THRESH)
        self._r_sum = np.zeros(N_THRESH)
        self._tp = np.zeros(N_THRESH)
        self._fp = np.zeros(N_THRESH)
        self._fn = np.zeros(N_THRESH)
        self._s_sum = 0.0
        self._mae_sum = 0.0
        self._n = 0
        self._n_curves = 0
        self._degenerate = 0

    def add(self, pred, gt):
        self._n += 1
        self._s_sum += s_measure(pred, gt)
        self._mae_sum += mae(pred, gt)
        if is_degenerate(gt):
            self._degenerate += 1
            return
        self._n_curves += 1
        tp, fp, fn = confusion_counts(pred, gt)
        self._tp += tp
        self._fp += fp
        self._fn += fn
        self._p_sum += tp / (tp + fp + EPS)
        self._r_sum += tp / (tp + fn + EPS)

    def merge(self, other: "DatasetMetrics"):
        self._p_sum += other._p_sum
        self._r_sum += other._r_sum
        self._tp += other._tp
        self._fp += other._fp
        self._fn += other._fn
        self._s_sum += other._s_sum
        self._mae_sum += other._mae_sum
        self._n += other._n
        self._n_curves += other._n_curves
        self._degenerate += other._degenerate
        return self

    def report(self) -> MetricsReport:
        if self._n == 0:
            raise UsageError("metrics over an empty dataset")
        if self._n_curves == 0:
            raise UsageError("every ground truth is all-background; no PR curve")
        if self.pooled_pr:
            precision = self._tp / (self._tp + self._fp + EPS)
            recall = self._tp / (self._tp + self._fn + EPS)
        else:
            precision = self._p_sum / self._n_curves
            recall = self._r_sum / self._n_curves
        f = f_beta_curve(precision, recall)
        rows = [(k / 255.0, float(precision[k]), float(recall[k]))
                for k in range(N_THRESH)]
        return MetricsReport(
            f_beta_max=float(f.max()), f_beta_mean=float(f.mean()),
            s_alpha=self._s_sum / self._n, mae=self._mae_sum / self._n,
            pr_curve=rows, n_images=self._n,
            degenerate_count=self._degenerate, pooled_pr=self.pooled_pr)
