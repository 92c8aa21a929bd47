"""Empirical-CDF ranks, quantile buckets and per-bucket diagnostics.

Conventions
-----------
* Ties share the larger CDF value (max-rank), so ``F(i) = #{j: s_j <= s_i} / n``.
* A row with ``F in (i/B, (i+1)/B]`` falls in bucket ``i``; bucket 0 holds the
  lowest scores.
* Quantiles use the lower order statistic (``numpy`` method ``"lower"``).
* Bucket means use exactly rounded summation, so they do not depend on row
  order.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "RankedScores",
    "BucketStats",
    "empirical_cdf",
    "bucketize",
    "bucket_ate",
    "bucket_ate_se",
    "bucket_noise",
    "bucket_prediction_quantiles",
    "bucket_sums",
    "noise_by_rank_profile",
    "bucket_report",
    "write_bucket_report",
    "BUCKET_REPORT_COLUMNS",
]

BUCKET_REPORT_COLUMNS = (
    "bucket", "lo", "hi", "n", "n_treated", "n_control",
    "ate_hat", "noise_hat", "pred_mean", "pred_q05", "pred_q95",
)


@dataclass(frozen=True)
class RankedScores:
    """Scores with their empirical-CDF values.

    ``counts[i]`` is the integer numerator of ``cdf[i]``; bucketing works on it
    so no rounding enters bucket boundaries.
    """

    scores: np.ndarray
    cdf: np.ndarray
    counts: np.ndarray

    @property
    def n(self) -> int:
        return len(self.scores)


def empirical_cdf(scores) -> RankedScores:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a nonempty vector")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    counts = np.searchsorted(np.sort(s, kind="stable"), s, side="right").astype(np.int64)
    return RankedScores(s, counts / s.size, counts)


def bucketize(ranked: RankedScores | Sequence[float], n_buckets: int) -> np.ndarray:
    """Bucket index in ``[0, n_buckets - 1]`` for each row.

    ``ranked`` may also be a plain vector of CDF values in (0, 1].
    """
    if n_buckets < 2:
        raise ValueError(f"need at least 2 buckets, got {n_buckets}")
    if isinstance(ranked, RankedScores):
        if ranked.n < n_buckets:
            warnings.warn(f"{ranked.n} rows spread over {n_buckets} buckets", stacklevel=2)
        b = (ranked.counts * n_buckets + ranked.n - 1) // ranked.n - 1
    else:
        F = np.asarray(ranked, dtype=np.float64)
        if np.any(F <= 0) or np.any(F > 1):
            raise ValueError("CDF values must lie in (0, 1]")
        b = np.ceil(F * n_buckets - 1e-9).astype(np.int64) - 1
    return np.clip(b, 0, n_buckets - 1)


def bucket_ate(y, w) -> float:
    """Treated-minus-control outcome mean; NaN when an arm is empty."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(w) == 1
    n1 = int(t.sum())
    n0 = t.size - n1
    if n1 == 0 or n0 == 0:
        return math.nan
    return math.fsum(y[t]) / n1 - math.fsum(y[~t]) / n0


def bucket_ate_se(y, w) -> float:
    """Standard error of :func:`bucket_ate`.

    Arm proportions are shrunk by one pseudo-success and one pseudo-failure
    (Agresti-Caffo) so buckets with all-zero outcomes do not get a zero SE.
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(w) == 1
    n1 = int(t.sum())
    n0 = t.size - n1
    if n1 == 0 or n0 == 0:
        return math.nan
    p1 = (math.fsum(y[t]) + 1.0) / (n1 + 2.0)
    p0 = (math.fsum(y[~t]) + 1.0) / (n0 + 2.0)
    return math.sqrt(p1 * (1 - p1) / (n1 + 2.0) + p0 * (1 - p0) / (n0 + 2.0))


def bucket_noise(mu_hat) -> float:
    """Mean of ``mu (1 - mu)`` over the bucket."""
    m = np.asarray(mu_hat, dtype=np.float64)
    if m.size == 0:
        return math.nan
    if np.any(m < 0) or np.any(m > 1) or np.isnan(m).any():
        raise ValueError("probabilities must lie in [0, 1]")
    return math.fsum(m * (1.0 - m)) / m.size


def bucket_prediction_quantiles(pred) -> tuple[float, float, float]:
    """``(mean, q05, q95)`` of the predictions in one bucket."""
    p = np.asarray(pred, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty bucket")
    q05, q95 = np.quantile(p, [0.05, 0.95], method="lower")
    return math.fsum(p) / p.size, float(q05), float(q95)


def _groups(buckets: np.ndarray, n_buckets: int) -> list[np.ndarray]:
    order = np.argsort(buckets, kind="stable")
    cuts = np.searchsorted(buckets[order], np.arange(1, n_buckets))
    return np.split(order, cuts)


def bucket_sums(scores, values, n_buckets: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-bucket exactly rounded sums of ``values`` and row counts."""
    values = np.asarray(values, dtype=np.float64)
    ranked = empirical_cdf(scores)
    if values.shape != ranked.scores.shape:
        raise ValueError("scores and values must have the same length")
    b = bucketize(ranked, n_buckets)
    sums = np.zeros(n_buckets)
    counts = np.zeros(n_buckets, dtype=np.int64)
    for i, g in enumerate(_groups(b, n_buckets)):
        sums[i] = math.fsum(values[g])
        counts[i] = g.size
    return sums, counts


def noise_by_rank_profile(scores, noise, n_buckets: int = 100) -> np.ndarray:
    """Mean of ``noise`` (``mu (1 - mu)`` per row) in each score bucket."""
    sums, counts = bucket_sums(scores, noise, n_buckets)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


@dataclass(frozen=True)
class BucketStats:
    bucket: int
    lo: float
    hi: float
    n: int
    n_treated: int
    n_control: int
    ate_hat: float
    ate_se: float
    noise_hat: float
    pred_mean: float
    pred_q05: float
    pred_q95: float

    def row(self) -> list[str]:
        def f(v: float) -> str:
            return "" if math.isnan(v) else repr(float(v))

        return [
            str(self.bucket), f(self.lo), f(self.hi), str(self.n), str(self.n_treated),
            str(self.n_control), f(self.ate_hat), f(self.noise_hat), f(self.pred_mean),
            f(self.pred_q05), f(self.pred_q95),
        ]


def bucket_report(
    scores,
    y,
    w,
    n_buckets: int = 100,
    *,
    mu_hat=None,
    predictions=None,
) -> list[BucketStats]:
    """Per-bucket statistics with buckets formed by ranking ``scores``.

    Parameters
    ----------
    scores : (n,) array
        Ranking score, e.g. outcome-model or uplift predictions.
    y, w : (n,) arrays of {0, 1}
    mu_hat : (n,) array, optional
        Outcome probabilities feeding ``noise_hat``; defaults to ``scores``
        when those lie in [0, 1].
    predictions : (n,) array, optional
        Values summarised by ``pred_mean``/``pred_q05``/``pred_q95``;
        defaults to ``scores``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    w = np.asarray(w)
    n = scores.size
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("scores, y and w must have the same length")
    if mu_hat is None and np.all((scores >= 0) & (scores <= 1)):
        mu_hat = scores
    mu_hat = None if mu_hat is None else np.asarray(mu_hat, dtype=np.float64)
    pred = scores if predictions is None else np.asarray(predictions, dtype=np.float64)
    b = bucketize(empirical_cdf(scores), n_buckets)
    out = []
    for i, g in enumerate(_groups(b, n_buckets)):
        yg, wg = y[g], w[g]
        n1 = int((wg == 1).sum())
        if g.size:
            mean, q05, q95 = bucket_prediction_quantiles(pred[g])
        else:
            mean = q05 = q95 = math.nan
        out.append(
            BucketStats(
                bucket=i,
                lo=i / n_buckets,
                hi=(i + 1) / n_buckets,
                n=int(g.size),
                n_treated=n1,
                n_control=int(g.size) - n1,
                ate_hat=bucket_ate(yg, wg),
                ate_se=bucket_ate_se(yg, wg),
                noise_hat=math.nan if mu_hat is None else bucket_noise(mu_hat[g]),
                pred_mean=mean,
                pred_q05=q05,
                pred_q95=q95,
            )
        )
    return out


def write_bucket_report(stats: Sequence[BucketStats], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(BUCKET_REPORT_COLUMNS)
        for s in stats:
            wr.writerow(s.row())
