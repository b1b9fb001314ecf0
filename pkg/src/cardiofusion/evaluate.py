"""Four-class evaluation and one-way ANOVA with exact F-distribution p-values.

Per-class metrics use one-vs-rest binarization of the confusion matrix:

    accuracy    = (TP + TN) / (TP + TN + FP + FN)
    sensitivity = TP / (TP + FN)
    specificity = TN / (TN + FP)

A zero denominator yields ``None`` (rendered NA downstream), never a silent
zero. P-values come from the regularized incomplete beta function evaluated
with Lentz's continued fraction, switching to the symmetric form at
x > (a + 1) / (a + b + 2) for numerical stability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, ParamError

N_CLASSES = 4
SIGNIFICANCE_ALPHA = 0.05
_BETACF_TOL = 1e-15
_BETACF_MAX_ITER = 400
_TINY = 1e-300


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_CLASSES, N_CLASSES) or np.any(self.counts < 0):
            raise ParamError("confusion matrix must be 4x4 with non-negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    tp: int
    tn: int
    fp: int
    fn: int


@dataclass
class AnovaResult:
    feature_name: str
    f_stat: float
    p_value: float
    df_between: int
    df_within: int
    significant: bool


def confusion(preds, truths) -> ConfusionMatrix:
    """Tally counts[truth][pred] over paired predictions and ground truth."""
    preds = np.asarray(preds, dtype=np.intp)
    truths = np.asarray(truths, dtype=np.intp)
    if preds.size != truths.size or preds.size == 0:
        raise ParamError("predictions and truths must be equal-length and non-empty")
    if np.any((preds < 0) | (preds >= N_CLASSES) | (truths < 0) | (truths >= N_CLASSES)):
        raise ParamError(f"class indices must lie in [0, {N_CLASSES})")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts)


def one_vs_rest_metrics(cm: ConfusionMatrix, class_index: int) -> ClassMetrics:
    """Binarize the matrix for one class and evaluate the three metrics."""
    if not 0 <= class_index < N_CLASSES:
        raise ParamError(f"class index {class_index} out of range")
    if cm.total < 1:
        raise ParamError("confusion matrix is empty")
    c = cm.counts
    tp = int(c[class_index, class_index])
    fn = int(c[class_index, :].sum()) - tp
    fp = int(c[:, class_index].sum()) - tp
    tn = cm.total - tp - fn - fp
    ratio = lambda num, den: (num / den) if den > 0 else None
    return ClassMetrics(
        accuracy=ratio(tp + tn, cm.total),
        sensitivity=ratio(tp, tp + fn),
        specificity=ratio(tn, tn + fp),
        tp=tp, tn=tn, fp=fp, fn=fn,
    )


def overall_metrics(cm: ConfusionMatrix) -> dict[str, float | None]:
    """Multiclass accuracy plus macro-averaged sensitivity/specificity."""
    acc = float(np.trace(cm.counts)) / cm.total
    sens = [m.sensitivity for m in (one_vs_rest_metrics(cm, c) for c in range(N_CLASSES))
            if m.sensitivity is not None]
    spec = [m.specificity for m in (one_vs_rest_metrics(cm, c) for c in range(N_CLASSES))
            if m.specificity is not None]
    return {
        "accuracy": acc,
        "sensitivity": float(np.mean(sens)) if sens else None,
        "specificity": float(np.mean(spec)) if spec else None,
    }


# ---------------------------------------------------------------------------
# F distribution via the regularized incomplete beta function
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) to ~1e-12 relative accuracy."""
    if a <= 0 or b <= 0:
        raise ParamError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(f_value: float, d1: int, d2: int) -> float:
    """Survival function of the F distribution: p = P(F_{d1,d2} > f)."""
    if d1 < 1 or d2 < 1:
        raise ParamError("degrees of freedom must be >= 1")
    if f_value < 0:
        raise ParamError("F statistic must be non-negative")
    if not math.isfinite(f_value):
        return 0.0
    x = d2 / (d2 + d1 * f_value)
    return min(1.0, max(0.0, reg_inc_beta(d2 / 2.0, d1 / 2.0, x)))


def f_isf(p: float, d1: int, d2: int) -> float:
    """Inverse survival: the F value with tail probability p (bisection)."""
    if not 0.0 < p < 1.0:
        raise ParamError("p must lie strictly between 0 and 1")
    lo, hi = 0.0, 1.0
    while f_sf(hi, d1, d2) > p:
        hi *= 2.0
        if hi > 1e12:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_sf(mid, d1, d2) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def anova_f(groups, feature_name: str = "") -> AnovaResult:
    """One-way ANOVA over per-class samples of a single feature."""
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(arrays) < 2:
        raise ParamError("ANOVA needs at least two groups")
    for g in arrays:
        if g.ndim != 1 or g.size < 2:
            raise ParamError("each group needs at least two samples")
        if not np.all(np.isfinite(g)):
            raise ParamError("group samples must be finite")
    n_total = sum(g.size for g in arrays)
    grand = sum(float(g.sum()) for g in arrays) / n_total
    ssb = sum(g.size * (float(g.mean()) - grand) ** 2 for g in arrays)
    ssw = sum(float(np.sum((g - g.mean()) ** 2)) for g in arrays)
    df_b = len(arrays) - 1
    df_w = n_total - len(arrays)
    if ssw <= 0.0:
        raise DegenerateError(
            f"zero within-group variance for {feature_name or 'feature'}; F is infinite"
        )
    f_value = (ssb / df_b) / (ssw / df_w)
    p = f_sf(f_value, df_b, df_w)
    return AnovaResult(
        feature_name=feature_name,
        f_stat=float(f_value),
        p_value=float(p),
        df_between=df_b,
        df_within=df_w,
        significant=p < SIGNIFICANCE_ALPHA,
    )


def quartile_summary(values_per_class: dict[str, np.ndarray]) -> dict[str, dict[str, float]]:
    """min/Q1/median/Q3/max per class, quartiles by linear interpolation
    between order statistics (numpy's default convention)."""
    out: dict[str, dict[str, float]] = {}
    for name, values in values_per_class.items():
        v = np.asarray(values, dtype=np.float64)
        if v.size < 1:
            raise ParamError(f"class {name!r} has no values")
        qs = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
        out[name] = {
            "min": float(qs[0]),
            "q1": float(qs[1]),
            "median": float(qs[2]),
            "q3": float(qs[3]),
            "max": float(qs[4]),
        }
    return out
