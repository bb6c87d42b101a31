"""Correlation and error metrics for quality-score evaluation.

SRCC uses average ranks for ties, KRCC is Kendall's tau-b, PLCC is the
plain Pearson coefficient, and RMSE is reported in raw MOS units.
Constant inputs raise :class:`UndefinedCorrelationError` rather than
silently returning 0, so a degenerate evaluation can never pass as a
result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UndefinedCorrelationError

__all__ = ["EvalReport", "evaluate_pairs", "srcc", "plcc", "krcc", "rmse", "average_ranks"]


def _validate(pred, truth, min_n):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim != 1 or truth.ndim != 1 or pred.shape != truth.shape:
        raise ShapeError(
            f"score pairs must be equal-length 1-D vectors, got {pred.shape} and {truth.shape}"
        )
    if pred.size < min_n:
        raise ShapeError(f"need at least {min_n} pairs, got {pred.size}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise ShapeError("score pairs must be finite")
    return pred, truth


def _check_not_constant(pred, truth):
    if np.all(pred == pred[0]):
        raise UndefinedCorrelationError("predictions are constant; correlation undefined")
    if np.all(truth == truth[0]):
        raise UndefinedCorrelationError("ground truth is constant; correlation undefined")


def average_ranks(x):
    """1-based ranks with ties sharing the average of their positions."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    xs = x[order]
    i = 0
    while i < n:
        j = i
        while j < n and xs[j] == xs[i]:
            j += 1
        # positions i..j-1 hold equal values; average of ranks i+1..j
        ranks[order[i:j]] = 0.5 * (i + j + 1)
        i = j
    return ranks


def plcc(pred, truth):
    """Pearson's linear correlation coefficient."""
    pred, truth = _validate(pred, truth, 2)
    _check_not_constant(pred, truth)
    dp = pred - pred.mean()
    dt = truth - truth.mean()
    return float(np.dot(dp, dt) / np.sqrt(np.dot(dp, dp) * np.dot(dt, dt)))


def srcc(pred, truth):
    """Spearman's rank-order correlation: Pearson on average ranks."""
    pred, truth = _validate(pred, truth, 2)
    _check_not_constant(pred, truth)
    return plcc(average_ranks(pred), average_ranks(truth))


def krcc(pred, truth):
    """Kendall's tau-b: pair counting with tie-corrected denominator."""
    pred, truth = _validate(pred, truth, 2)
    _check_not_constant(pred, truth)
    n = pred.size
    concordant = 0
    discordant = 0
    # O(n^2) pair scan, vectorized per row; fine at evaluation scale.
    for i in range(n - 1):
        s = np.sign(pred[i + 1 :] - pred[i]) * np.sign(truth[i + 1 :] - truth[i])
        concordant += int(np.count_nonzero(s > 0))
        discordant += int(np.count_nonzero(s < 0))

    def tie_pairs(x):
        _, counts = np.unique(x, return_counts=True)
        return float((counts * (counts - 1) // 2).sum())

    n0 = n * (n - 1) / 2.0
    denom = np.sqrt((n0 - tie_pairs(pred)) * (n0 - tie_pairs(truth)))
    if denom == 0.0:
        raise UndefinedCorrelationError("all pairs tied on one axis; tau-b undefined")
    return float((concordant - discordant) / denom)


def rmse(pred, truth):
    """Root mean square error; 0 iff pred equals truth."""
    pred, truth = _validate(pred, truth, 1)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass(frozen=True)
class EvalReport:
    """SRCC/PLCC/KRCC/RMSE bundle for one (model, split) evaluation."""

    srcc: float
    plcc: float
    krcc: float
    rmse: float
    n: int

    @property
    def criterion(self):
        """Model-selection criterion: SRCC + PLCC."""
        return self.srcc + self.plcc

    def record(self):
        """Single-line machine-readable form; field order is documented
        in the CLI: srcc, plcc, krcc, rmse, n."""
        return (
            f"srcc={self.srcc:.6f} plcc={self.plcc:.6f} "
            f"krcc={self.krcc:.6f} rmse={self.rmse:.6f} n={self.n}"
        )

    def table(self):
        """Human-readable table with the higher/lower-is-better arrows."""
        header = f"{'SRCC↑':>9} {'PLCC↑':>9} {'KRCC↑':>9} {'RMSE↓':>9} {'n':>6}"
        row = (
            f"{self.srcc:>9.4f} {self.plcc:>9.4f} {self.krcc:>9.4f} "
            f"{self.rmse:>9.4f} {self.n:>6d}"
        )
        return header + "\n" + row


def evaluate_pairs(pred, truth):
    """Compute the full metric bundle for one prediction/target pairing."""
    pred = np.asarray(pred, dtype=np.float64)
    return EvalReport(
        srcc=srcc(pred, truth),
        plcc=plcc(pred, truth),
        krcc=krcc(pred, truth),
        rmse=rmse(pred, truth),
        n=int(pred.size),
    )
