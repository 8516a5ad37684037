"""Biometric score metrics: ROC, AUC, TPR at fixed FPR, and HTER.

Conventions, fixed once for every consumer:
  * scores are liveness probabilities in [0, 1], higher = more live;
  * labels: 1 = live (positive), 0 = spoof (negative);
  * a sample is accepted as live when score >= threshold, so ties count
    toward acceptance;
  * FAR = accepted fraction of spoof, FRR = rejected fraction of live.

The EER threshold policy scans the constant-error intervals between
consecutive distinct scores, picks the first interval minimizing
|FAR - FRR|, and reports HTER at that interval's midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    domains: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.ndim != 1 or self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must be 1-D arrays of equal length")
        if self.domains and len(self.domains) != len(self.scores):
            raise ValueError("domains must match scores in length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 (spoof) or 1 (live)")

    def require_both_classes(self) -> None:
        if not (np.any(self.labels == 1) and np.any(self.labels == 0)):
            raise ValueError("metric needs at least one live and one spoof sample")


def roc_curve(s: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, from (0,0) to (1,1).

    Equal scores share one threshold step, so ties produce diagonal
    segments rather than separate points.
    """
    s.require_both_classes()
    order = np.argsort(-s.scores, kind="stable")
    sorted_scores = s.scores[order]
    sorted_labels = s.labels[order]
    # last index of each tie group = cumulative counts at that threshold
    distinct = np.flatnonzero(np.diff(sorted_scores) != 0)
    boundaries = np.concatenate([distinct, [len(sorted_scores) - 1]])
    tp = np.cumsum(sorted_labels == 1)[boundaries]
    fp = np.cumsum(sorted_labels == 0)[boundaries]
    pos = int((s.labels == 1).sum())
    neg = int((s.labels == 0).sum())
    fpr = np.concatenate([[0.0], fp / neg])
    tpr = np.concatenate([[0.0], tp / pos])
    return fpr, tpr


def auc(s: ScoreSet) -> float:
    """Trapezoidal area under the ROC (tie-corrected pair-ordering rate)."""
    fpr, tpr = roc_curve(s)
    return float(np.trapezoid(tpr, fpr))


def tpr_at_fpr(s: ScoreSet, target_fpr: float) -> float:
    """Linear interpolation of the ROC polyline at the target FPR."""
    if not 0.0 < target_fpr <= 1.0:
        raise ValueError(f"target FPR must lie in (0, 1], got {target_fpr}")
    fpr, tpr = roc_curve(s)
    if target_fpr >= 1.0:
        return 1.0
    # Last curve point at or below the target; ties on fpr keep the highest
    # tpr because the curve is nondecreasing.
    idx = int(np.searchsorted(fpr, target_fpr, side="right")) - 1
    if fpr[idx] == target_fpr:
        return float(tpr[idx])
    span = fpr[idx + 1] - fpr[idx]
    frac = (target_fpr - fpr[idx]) / span
    return float(tpr[idx] + frac * (tpr[idx + 1] - tpr[idx]))


def far_frr(s: ScoreSet, threshold: float) -> tuple[float, float]:
    spoof = s.scores[s.labels == 0]
    live = s.scores[s.labels == 1]
    far = float(np.mean(spoof >= threshold))
    frr = float(np.mean(live < threshold))
    return far, frr


def _eer_threshold(s: ScoreSet) -> float:
    """Midpoint of the first constant-error interval minimizing |FAR - FRR|.

    Candidate intervals are delimited by the distinct score values; the
    outermost intervals are represented by points half a unit beyond the
    extreme scores. The gap is compared in exact integer arithmetic
    (|accepted_spoof * n_live - rejected_live * n_spoof|) so ties between
    mathematically equal gaps resolve identically everywhere.
    """
    u = np.unique(s.scores)
    candidates = np.concatenate([[u[0] - 0.5], (u[:-1] + u[1:]) / 2.0, [u[-1] + 0.5]])
    spoof = np.sort(s.scores[s.labels == 0])
    live = np.sort(s.scores[s.labels == 1])
    n_spoof, n_live = len(spoof), len(live)
    accepted_spoof = n_spoof - np.searchsorted(spoof, candidates, side="left")
    rejected_live = np.searchsorted(live, candidates, side="left")
    gap = np.abs(accepted_spoof * n_live - rejected_live * n_spoof)
    return float(candidates[int(np.argmin(gap))])


def hter(s: ScoreSet, policy: str = "eer", tau: float | None = None) -> float:
    """(FAR + FRR) / 2 at a fixed threshold or at the EER threshold."""
    s.require_both_classes()
    if policy == "fixed":
        if tau is None:
            raise ValueError("fixed policy needs a threshold")
        threshold = float(tau)
    elif policy == "eer":
        threshold = _eer_threshold(s)
    else:
        raise ValueError(f"unknown threshold policy {policy!r}")
    far, frr = far_frr(s, threshold)
    return (far + frr) / 2.0


def accuracy(s: ScoreSet, threshold: float = 0.5) -> float:
    """Fraction of correct accept/reject decisions at a fixed threshold."""
    predicted = (s.scores >= threshold).astype(np.int64)
    return float(np.mean(predicted == s.labels))
