"""Small statistical helpers: normal quantile thresholds and Welch's t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy import stats as _st

from .errors import ValidationError


def normal_ppf(q: float) -> float:
    """Inverse standard-normal CDF."""
    if not 0.0 < q < 1.0:
        raise ValidationError(f"quantile {q} not in (0, 1)")
    return float(special.ndtri(q))


@dataclass(frozen=True)
class NormalFit:
    mean: float
    std: float

    def threshold(self, quantile: float) -> float:
        return self.mean + normal_ppf(quantile) * self.std


def fit_normal(scores) -> NormalFit:
    x = np.asarray(scores, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise ValidationError("need at least two scores to fit a normal")
    std = float(np.std(x, ddof=1))
    if std == 0.0:
        raise ValidationError("scores have zero variance")
    return NormalFit(float(np.mean(x)), std)


def fit_normal_threshold(scores, quantile: float) -> float:
    """``mean + z(quantile) * std`` of a normal fitted to ``scores``.

    ``std`` is the sample standard deviation (ddof=1).
    """
    return fit_normal(scores).threshold(quantile)


@dataclass(frozen=True)
class WelchResult:
    t: float
    p: float
    dof: float


def welch_t(a, b) -> WelchResult:
    """Two-sided Welch's t-test for a difference in means."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValidationError("each sample needs at least two values")
    va = np.var(a, ddof=1) / a.size
    vb = np.var(b, ddof=1) / b.size
    se2 = va + vb
    if se2 == 0.0:
        raise ValidationError("both samples have zero variance")
    diff = float(np.mean(a) - np.mean(b))
    t = diff / math.sqrt(se2)
    dof = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    p = 2.0 * float(_st.t.sf(abs(t), dof))
    return WelchResult(t, min(p, 1.0), float(dof))
