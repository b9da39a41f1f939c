"""Cluster-to-action assignment and evaluation metrics.

Predicted labelings carry 1-based cluster (prototype) ids; ground truth
carries 1-based action ids with 0 meaning background.  Background frames
and masked frames are excluded from every metric.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

KL_SMOOTHING = 1e-8


@dataclass
class VideoEval:
    """One video's prediction/ground-truth pair for matching."""

    video_id: str
    activity: int
    pred: np.ndarray  # 1-based cluster ids
    gt: np.ndarray  # 1-based action ids, 0 = background
    background: np.ndarray | None = None

    def evaluated(self) -> np.ndarray:
        keep = np.asarray(self.gt) != 0
        if self.background is not None:
            keep &= ~np.asarray(self.background, dtype=bool)
        return keep


@dataclass
class Contingency:
    counts: np.ndarray  # n_clusters x n_actions, int64
    cluster_ids: np.ndarray
    action_ids: np.ndarray


def build_contingency(pred, gt, background=None) -> Contingency:
    """Frame-overlap counts between predicted clusters and true actions."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    keep = gt != 0
    if background is not None:
        background = np.asarray(background, dtype=bool)
        if background.shape != pred.shape:
            raise ValueError("background mask length differs from labels")
        keep &= ~background
    pred, gt = pred[keep], gt[keep]
    cluster_ids = np.unique(pred)
    action_ids = np.unique(gt)
    counts = np.zeros((cluster_ids.size, action_ids.size), dtype=np.int64)
    row = np.searchsorted(cluster_ids, pred)
    col = np.searchsorted(action_ids, gt)
    np.add.at(counts, (row, col), 1)
    return Contingency(counts=counts, cluster_ids=cluster_ids, action_ids=action_ids)


# ---------------------------------------------------------------------------
# Hungarian assignment


def _solve_square_min(cost: np.ndarray) -> list[int]:
    """O(k^3) assignment on a square cost matrix via potentials.

    Returns col_of_row; exact for exact input costs.
    """
    k = cost.shape[0]
    inf = float("inf")
    u = [0.0] * (k + 1)
    v = [0.0] * (k + 1)
    match = [0] * (k + 1)  # match[j] = row matched to column j, 1-based
    for i in range(1, k + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (k + 1)
        used = [False] * (k + 1)
        way = [0] * (k + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, k + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(k + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_of_row = [0] * k
    for j in range(1, k + 1):
        col_of_row[match[j] - 1] = j - 1
    return col_of_row


def hungarian_solve(counts: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """One-to-one assignment maximizing the summed overlap counts.

    Rectangular inputs are padded to square with zero-value dummies, so
    exactly min(n, m) (row, col) pairs come back.  Ties between equal-value
    assignments prefer higher per-cluster/per-class overlap fractions (a
    content-based rule, so relabeling clusters cannot change the metrics);
    the tiebreak weight is too small to alter the maximal total.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] < 1 or counts.shape[1] < 1:
        raise ValueError("counts must be a non-empty 2D matrix")
    n, m = counts.shape
    k = max(n, m)
    row_sums = np.maximum(counts.sum(axis=1, keepdims=True), 1.0)
    col_sums = np.maximum(counts.sum(axis=0, keepdims=True), 1.0)
    value = counts + (counts / row_sums + counts / col_sums) / (8.0 * k)
    cmax = float(value.max())
    cost = np.full((k, k), cmax)
    cost[:n, :m] = cmax - value
    col_of_row = _solve_square_min(cost)
    pairs = [(i, col_of_row[i]) for i in range(n) if col_of_row[i] < m]
    total = float(sum(counts[i, j] for i, j in pairs))
    return pairs, total


def brute_force_assignment_value(counts: np.ndarray) -> float:
    """Oracle: max total over all one-to-one injections (small matrices only)."""
    from itertools import permutations

    counts = np.asarray(counts, dtype=np.float64)
    n, m = counts.shape
    best = -np.inf
    if n <= m:
        for cols in permutations(range(m), n):
            best = max(best, sum(counts[i, c] for i, c in enumerate(cols)))
    else:
        for rows in permutations(range(n), m):
            best = max(best, sum(counts[r, j] for j, r in enumerate(rows)))
    return float(best)


# ---------------------------------------------------------------------------
# matching scopes and metrics


@dataclass
class AssignmentReport:
    scope: str  # video | activity | global
    unit: str  # video id, activity id, or "corpus"
    assignment: list  # (cluster_id, action_id) pairs
    n_evaluated: int
    n_correct: int
    mof: float
    mop: float
    moc: float


@dataclass
class MatchResult:
    scope: str
    reports: list
    mof: float  # pooled correct frames / evaluated frames
    per_video_mof: Dict[str, float]
    assignments: Dict[str, Dict[int, int]]  # video id -> cluster id -> action id


def _report(scope: str, unit: str, cont: Contingency) -> AssignmentReport:
    total = int(cont.counts.sum())
    if total == 0:
        raise ValueError(f"empty evaluation set for {scope} unit {unit!r}")
    pairs, value = hungarian_solve(cont.counts)
    row_sums = cont.counts.sum(axis=1)
    col_sums = cont.counts.sum(axis=0)
    col_of_row = dict(pairs)
    row_of_col = {j: i for i, j in pairs}
    per_cluster = [
        cont.counts[i, col_of_row[i]] / row_sums[i] if i in col_of_row else 0.0
        for i in range(cont.counts.shape[0])
    ]
    per_class = [
        cont.counts[row_of_col[j], j] / col_sums[j] if j in row_of_col else 0.0
        for j in range(cont.counts.shape[1])
    ]
    assignment = [
        (int(cont.cluster_ids[i]), int(cont.action_ids[j])) for i, j in pairs
    ]
    return AssignmentReport(
        scope=scope,
        unit=unit,
        assignment=assignment,
        n_evaluated=total,
        n_correct=int(value),
        mof=value / total,
        mop=float(np.mean(per_cluster)),
        moc=float(np.mean(per_class)),
    )


def _pooled_contingency(videos: Sequence[VideoEval]) -> Contingency:
    preds = np.concatenate([np.asarray(v.pred)[v.evaluated()] for v in videos])
    gts = np.concatenate([np.asarray(v.gt)[v.evaluated()] for v in videos])
    return build_contingency(preds, gts)


def match_at_level(videos: Sequence[VideoEval], scope: str) -> MatchResult:
    """Hungarian matching per video, per activity, or over the whole corpus."""
    if scope not in ("video", "activity", "global"):
        raise ValueError(f"unknown matching scope {scope!r}")
    if not videos:
        raise ValueError("no videos to match")

    reports = []
    assignments: Dict[str, Dict[int, int]] = {}
    if scope == "video":
        for v in videos:
            rep = _report("video", v.video_id, _pooled_contingency([v]))
            reports.append(rep)
            assignments[v.video_id] = dict(rep.assignment)
    elif scope == "activity":
        by_activity: Dict[int, list] = {}
        for v in videos:
            by_activity.setdefault(v.activity, []).append(v)
        for activity in sorted(by_activity):
            group = by_activity[activity]
            rep = _report("activity", str(activity), _pooled_contingency(group))
            reports.append(rep)
            for v in group:
                assignments[v.video_id] = dict(rep.assignment)
    else:
        rep = _report("global", "corpus", _pooled_contingency(videos))
        reports.append(rep)
        for v in videos:
            assignments[v.video_id] = dict(rep.assignment)

    total = correct = 0
    per_video_mof: Dict[str, float] = {}
    for v in videos:
        keep = v.evaluated()
        mapping = assignments[v.video_id]
        mapped = apply_assignment(v.pred, mapping)
        n_eval = int(keep.sum())
        n_corr = int(np.sum((mapped == np.asarray(v.gt)) & keep))
        per_video_mof[v.video_id] = n_corr / n_eval if n_eval else float("nan")
        total += n_eval
        correct += n_corr
    if total == 0:
        raise ValueError("empty evaluation set")
    return MatchResult(
        scope=scope,
        reports=reports,
        mof=correct / total,
        per_video_mof=per_video_mof,
        assignments=assignments,
    )


def apply_assignment(pred, mapping: Dict[int, int]) -> np.ndarray:
    """Map cluster ids to matched action ids; unmatched clusters become 0."""
    pred = np.asarray(pred, dtype=np.int64)
    mapped = np.zeros_like(pred)
    for cluster, action in mapping.items():
        mapped[pred == cluster] = action
    return mapped


def mean_over_videos(counts: np.ndarray) -> float:
    """Fraction of videos whose cluster maps to the true class (video counts)."""
    pairs, value = hungarian_solve(counts)
    total = counts.sum()
    if total == 0:
        raise ValueError("empty evaluation set")
    return float(value / total)


# ---------------------------------------------------------------------------
# segment F1


def _runs(labels: np.ndarray, keep: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal constant-label runs over kept frames, split at excluded frames."""
    segments = []
    start = None
    current = None
    for t in range(len(labels) + 1):
        inside = t < len(labels) and keep[t]
        label = labels[t] if inside else None
        if start is not None and (not inside or label != current):
            segments.append((int(current), start, t))
            start = None
        if inside and start is None:
            start = t
            current = label
    return segments


def f1_segments(mapped_pred, gt, background=None) -> float:
    """Segment-level F1 after matching.

    A ground-truth segment is recalled when strictly more than half of its
    frames carry its action as the mapped prediction; a predicted segment
    is precise when strictly more than half of its frames fall inside one
    ground-truth segment of the same action.
    """
    mapped_pred = np.asarray(mapped_pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    keep = gt != 0
    if background is not None:
        keep &= ~np.asarray(background, dtype=bool)
    pred_segs = _runs(mapped_pred, keep)
    gt_segs = _runs(gt, keep)
    if not pred_segs or not gt_segs:
        return 0.0

    recalled = 0
    for action, start, end in gt_segs:
        hits = int(np.sum(mapped_pred[start:end] == action))
        if hits * 2 > end - start:
            recalled += 1
    precise = 0
    for action, start, end in pred_segs:
        if action == 0:
            continue
        for g_action, g_start, g_end in gt_segs:
            if g_action != action:
                continue
            overlap = min(end, g_end) - max(start, g_start)
            if overlap * 2 > end - start:
                precise += 1
                break
    precision = precise / len(pred_segs)
    recall = recalled / len(gt_segs)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def corpus_f1(videos: Sequence[VideoEval], assignments: Dict[str, Dict[int, int]]) -> float:
    """Per-video segment F1 averaged over the corpus."""
    scores = [
        f1_segments(
            apply_assignment(v.pred, assignments[v.video_id]), v.gt, v.background
        )
        for v in videos
    ]
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# KL divergence analyses


def smoothed_distribution(counts: np.ndarray, eps: float = KL_SMOOTHING) -> np.ndarray:
    """Add-eps smoothing then renormalize, so empty bins stay finite."""
    counts = np.asarray(counts, dtype=np.float64) + eps
    return counts / counts.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """D(p || q) with natural logs; inputs must be strictly positive."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum(p * np.log(p / q)))


def kl_action_distribution(
    mapped_preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    backgrounds: Sequence[np.ndarray] | None = None,
) -> float:
    """Divergence of the predicted frame-over-action distribution from truth.

    Both distributions run over the action ids present in the pooled
    ground truth; predicted frames mapped to no action add no mass.
    """
    if backgrounds is None:
        backgrounds = [None] * len(mapped_preds)
    pred_all, gt_all = [], []
    for mapped, gt, bg in zip(mapped_preds, gts, backgrounds):
        gt = np.asarray(gt, dtype=np.int64)
        keep = gt != 0
        if bg is not None:
            keep &= ~np.asarray(bg, dtype=bool)
        pred_all.append(np.asarray(mapped, dtype=np.int64)[keep])
        gt_all.append(gt[keep])
    pred_all = np.concatenate(pred_all)
    gt_all = np.concatenate(gt_all)
    actions = np.unique(gt_all)
    p_counts = np.array([np.sum(pred_all == a) for a in actions], dtype=np.float64)
    q_counts = np.array([np.sum(gt_all == a) for a in actions], dtype=np.float64)
    return kl_divergence(smoothed_distribution(p_counts), smoothed_distribution(q_counts))


def kl_prototype_sharing(
    labelings_by_activity: Dict[int, Sequence[np.ndarray]], n_prototypes: int
) -> tuple[np.ndarray, list[int]]:
    """Pairwise divergences of per-activity prototype usage distributions.

    Entry (i, j) is D(p_i || p_j) over the full prototype bank; both
    directions are present and the diagonal is exactly zero.
    """
    activities = sorted(labelings_by_activity)
    dists = []
    for activity in activities:
        counts = np.zeros(n_prototypes, dtype=np.float64)
        for labels in labelings_by_activity[activity]:
            labels = np.asarray(labels, dtype=np.int64)
            counts += np.bincount(labels - 1, minlength=n_prototypes)
        dists.append(smoothed_distribution(counts))
    c = len(activities)
    matrix = np.zeros((c, c))
    for i in range(c):
        for j in range(c):
            if i != j:
                matrix[i, j] = kl_divergence(dists[i], dists[j])
    return matrix, activities


# ---------------------------------------------------------------------------
# bag-of-words pseudo activities


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, n_iter: int = 100):
    """Lloyd's algorithm with k-means++ seeding; deterministic given rng."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(n_iter):
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        for j in range(k):
            members = x[new_assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:  # reseed empty clusters at the worst-served point
                centers[j] = x[dists.min(axis=1).argmax()]
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, centers


def bow_pseudo_activities(
    corpus: Sequence, k_frames: int, c_pseudo: int, seed: int
) -> tuple[np.ndarray, float]:
    """Cluster videos into pseudo activities from codeword histograms.

    Frames are vector-quantized into `k_frames` codewords, each video is
    summarized by its normalized codeword histogram, and the histograms
    are clustered into `c_pseudo` pseudo activities.  Returns 1-based
    pseudo labels aligned with `corpus` plus the mean-over-videos accuracy
    against the true activities.
    """
    if len(corpus) < c_pseudo:
        raise ValueError(f"need at least {c_pseudo} videos, got {len(corpus)}")
    rng = np.random.default_rng(seed)
    frames = np.concatenate([np.asarray(v.features, dtype=np.float64) for v in corpus])
    codeword, _ = _kmeans(frames, k_frames, rng)
    histograms = np.empty((len(corpus), k_frames))
    start = 0
    for i, video in enumerate(corpus):
        stop = start + len(video.features)
        hist = np.bincount(codeword[start:stop], minlength=k_frames).astype(np.float64)
        histograms[i] = hist / hist.sum()
        start = stop
    pseudo, _ = _kmeans(histograms, c_pseudo, rng)
    pseudo = pseudo.astype(np.int64) + 1

    true = np.array([v.activity for v in corpus], dtype=np.int64)
    pseudo_ids = np.unique(pseudo)
    true_ids = np.unique(true)
    counts = np.zeros((pseudo_ids.size, true_ids.size), dtype=np.int64)
    np.add.at(
        counts,
        (np.searchsorted(pseudo_ids, pseudo), np.searchsorted(true_ids, true)),
        1,
    )
    return pseudo, mean_over_videos(counts)
