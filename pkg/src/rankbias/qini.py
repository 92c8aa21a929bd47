"""Qini curves, their slopes, and detection of ranking bias.

The curve at treated share ``s = k/B`` is the treated-minus-control outcome
mean among the top ``floor(k n / B)`` rows, multiplied by ``s``.  Arm means
are taken separately, so any treatment probability works without weights.

Its slope over a segment estimates the mean effect of the rows ranked in that
segment.  An unbiased ranking gives slopes that fall with ``s`` (a concave
curve); a bottom-of-ranking segment whose effect clearly exceeds the typical
bucket breaks that concavity.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from rankbias._rng import generator

__all__ = [
    "QiniCurve",
    "BiasReport",
    "qini_curve",
    "qini_derivative",
    "auuc",
    "auuc_null_sd",
    "detect_ranking_bias",
    "weighted_median",
    "write_curve_csv",
    "read_curve_csv",
]


@dataclass(frozen=True)
class QiniCurve:
    """Points ``(shares[k], values[k])`` with ``shares[0] == 0``.

    ``missing[k]`` flags grid points whose top set lacked an arm; their values
    are linearly interpolated.
    """

    shares: np.ndarray
    values: np.ndarray
    missing: np.ndarray
    ate: float
    label: str = ""

    @property
    def baseline(self) -> np.ndarray:
        return self.ate * self.shares

    @property
    def auuc(self) -> float:
        return auuc(self)


def qini_curve(scores, y, w, n_points: int = 100, label: str = "") -> QiniCurve:
    """Qini curve on the grid ``s = k / n_points``, ``k = 0..n_points``.

    Rows are ranked by descending score; tied scores keep input order.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    w = np.asarray(w)
    n = s.size
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("scores, y and w must have the same length")
    if n_points < 2:
        raise ValueError("the grid needs at least 2 points")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    t = (w == 1)
    if not t.any() or t.all():
        raise ValueError("both arms must be present")

    order = np.argsort(-s, kind="stable")
    t_o = t[order].astype(np.int64)
    y_o = (y[order] == 1).astype(np.int64)
    n1 = np.cumsum(t_o)
    y1 = np.cumsum(t_o * y_o)
    n0 = np.arange(1, n + 1) - n1
    y0 = np.cumsum(y_o) - y1

    k = np.arange(1, n_points + 1)
    m = (k * n) // n_points
    shares = np.concatenate([[0.0], k / n_points])
    values = np.zeros(n_points + 1)
    missing = np.zeros(n_points + 1, dtype=bool)
    for j, mk in enumerate(m, start=1):
        if mk == 0:
            missing[j] = True
            continue
        a1, a0 = n1[mk - 1], n0[mk - 1]
        if a1 == 0 or a0 == 0:
            missing[j] = True
            continue
        values[j] = (y1[mk - 1] / a1 - y0[mk - 1] / a0) * shares[j]
    if missing.any():
        warnings.warn(
            f"{int(missing.sum())} Qini grid points lack a treatment arm; interpolating",
            stacklevel=2,
        )
        ok = ~missing
        values[missing] = np.interp(shares[missing], shares[ok], values[ok])
    return QiniCurve(shares, values, missing, float(values[-1]), label)


def qini_derivative(curve: QiniCurve) -> np.ndarray:
    """Forward-difference slope of each segment ``[s_k, s_{k+1}]``."""
    if curve.shares.size < 3:
        raise ValueError("need at least 3 curve points")
    return np.diff(curve.values) / np.diff(curve.shares)


def auuc(curve: QiniCurve) -> float:
    """Trapezoidal area between the curve and its baseline chord."""
    d = curve.values - curve.baseline
    return float(np.sum(0.5 * (d[1:] + d[:-1]) * np.diff(curve.shares)))


def auuc_null_sd(y, w, n_points: int = 100, n_perm: int = 200, seed: int = 0) -> float:
    """Standard deviation of the AUUC under randomly permuted scores."""
    y = np.asarray(y)
    w = np.asarray(w)
    rng = generator(seed, 0xA0CC)
    areas = []
    for _ in range(n_perm):
        areas.append(auuc(qini_curve(rng.permutation(y.size).astype(np.float64), y, w, n_points)))
    return float(np.std(areas, ddof=1))


def weighted_median(values, weights) -> float:
    """Lower weighted median: the smallest value whose cumulative weight reaches half."""
    v = np.asarray(values, dtype=np.float64)
    wt = np.asarray(weights, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(wt[order])
    if cum[-1] <= 0:
        raise ValueError("weights must have a positive sum")
    return float(v[order][np.searchsorted(cum, 0.5 * cum[-1])])


def _jnum(v: float) -> float | None:
    return None if v is None or math.isnan(v) else float(v)


@dataclass
class BiasReport:
    """Outcome of :func:`detect_ranking_bias`.

    ``derivatives[j]`` is the slope of curve segment ``j`` (counted from the
    top of the ranking) and ``ses[j]`` the standard error of the matching
    bucket's effect estimate.
    """

    break_detected: bool
    break_location: float | None
    z: float
    tail_window: float
    median_ate: float
    violation_magnitude: float
    derivatives: np.ndarray
    ses: np.ndarray
    tail_buckets: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        B = len(self.derivatives)
        segs = [
            {
                "s_lo": j / B,
                "s_hi": (j + 1) / B,
                "deriv": _jnum(self.derivatives[j]),
                "se": _jnum(self.ses[j]),
            }
            for j in range(B)
        ]
        return {
            "break_detected": bool(self.break_detected),
            "break_location": self.break_location,
            "z": self.z,
            "tail_window": self.tail_window,
            "median_ate": _jnum(self.median_ate),
            "violation_magnitude": _jnum(self.violation_magnitude),
            "tail_buckets": self.tail_buckets,
            "segments": segs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def detect_ranking_bias(
    curve: QiniCurve | None,
    bucket_ate: Sequence[float],
    bucket_se: Sequence[float],
    tail_window: float = 0.10,
    z: float = 3.0,
    bucket_counts: Sequence[int] | None = None,
) -> BiasReport:
    """Flag bottom-of-ranking buckets whose effect beats the median bucket.

    Parameters
    ----------
    curve : QiniCurve or None
        Curve on the same grid as the buckets; supplies the reported slopes.
        When ``None`` the slopes are taken to be the bucket effects.
    bucket_ate, bucket_se : sequences of length B
        Per-bucket effect estimates and standard errors, bucket 0 lowest.
    tail_window : float
        Share of the ranking, counted from the bottom, that is inspected.
    z : float
        Required excess over the median in standard errors.
    bucket_counts : sequence of int, optional
        Rows per bucket.  When given, the reference is the row-weighted
        median, which stays at the typical individual's bucket when tied
        scores pile many rows into one bucket and leave others empty.

    A bucket ``i`` in the tail is a violation when
    ``ate[i] - median(ate) >= z * se[i]`` and the excess is positive.  The
    break location is the treated share at which the highest violating
    bucket starts, ``1 - (i + 1) / B``.
    """
    ate = np.asarray(bucket_ate, dtype=np.float64)
    se = np.asarray(bucket_se, dtype=np.float64)
    B = ate.size
    if se.shape != (B,):
        raise ValueError("bucket_ate and bucket_se must have the same length")
    n_tail = int(math.floor(tail_window * B + 1e-9))
    if B < 3 or n_tail < 1 or n_tail >= B:
        raise ValueError(f"insufficient buckets ({B}) for tail_window={tail_window}")
    ok = ~np.isnan(ate)
    if not ok.any():
        raise ValueError("every bucket effect is missing")
    if bucket_counts is None:
        med = float(np.median(ate[ok]))
    else:
        cnt = np.asarray(bucket_counts, dtype=np.float64)
        if cnt.shape != (B,):
            raise ValueError("bucket_counts must have one entry per bucket")
        med = weighted_median(ate[ok], cnt[ok])

    if curve is not None:
        deriv = qini_derivative(curve)
        if deriv.size != B:
            raise ValueError(f"curve has {deriv.size} segments but {B} buckets were given")
    else:
        deriv = ate[::-1].copy()
    ses = se[::-1].copy()

    tail = []
    worst = 0.0
    top_violation = -1
    for i in range(n_tail):
        excess = ate[i] - med
        zi = excess / se[i] if se[i] > 0 else math.nan
        violated = bool(ok[i] and excess > 0 and se[i] > 0 and excess >= z * se[i])
        if ok[i]:
            worst = max(worst, excess)
        if violated:
            top_violation = i
        tail.append(
            {"bucket": i, "ate": _jnum(ate[i]), "se": _jnum(se[i]), "z": _jnum(zi), "violation": violated}
        )
    detected = top_violation >= 0
    loc = 1.0 - (top_violation + 1) / B if detected else None
    return BiasReport(detected, loc, float(z), float(tail_window), med, worst, deriv, ses, tail)


def write_curve_csv(curve: QiniCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["share", "value", "baseline"])
        for s, v, b in zip(curve.shares, curve.values, curve.baseline):
            wr.writerow([repr(float(s)), repr(float(v)), repr(float(b))])


def read_curve_csv(path: str | Path, label: str = "") -> QiniCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    shares = np.array([float(r["share"]) for r in rows])
    values = np.array([float(r["value"]) for r in rows])
    return QiniCurve(shares, values, np.zeros(len(rows), dtype=bool), float(values[-1]), label)
