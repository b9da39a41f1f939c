"""Corpus generation and bit-exact dataset IO.

Feature files store float32 ("CADF"), ground truth stores u32 action ids
with 0 = background ("CADG"); a JSON manifest ties a corpus together.
Features are promoted to float64 when read.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from itertools import combinations
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"CADF"
GT_MAGIC = b"CADG"
FORMAT_VERSION = 1

# Action means are drawn at this multiple of the minimum separation so the
# rejection loop rarely triggers while clusters stay moderately close.
MEAN_SPREAD = 1.6
_MAX_MEAN_ATTEMPTS = 1000


class CorpusError(Exception):
    """Malformed corpus file or infeasible generator settings."""


@dataclass
class FeatureSequence:
    """One video: frame features plus activity and optional frame actions."""

    video_id: str
    activity: int  # 1-based activity class
    features: np.ndarray  # T x d_raw float64 (promoted from stored float32)
    gt_actions: np.ndarray | None = None  # T action ids, 1-based, 0 = background

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"video {self.video_id!r}: features must be T x d, T >= 1")
        if self.gt_actions is not None:
            self.gt_actions = np.asarray(self.gt_actions, dtype=np.int64)
            if self.gt_actions.shape != (self.features.shape[0],):
                raise ValueError(
                    f"video {self.video_id!r}: ground truth length "
                    f"{self.gt_actions.shape} does not match T={self.features.shape[0]}"
                )

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Corpus:
    name: str
    n_activities: int
    activity_names: list
    videos: list
    canonical_actions: list | None = None  # generator metadata, per activity


@dataclass
class CorpusSpec:
    """Knobs for the procedural corpus generator."""

    n_activities: int = 4
    n_actions: int = 10
    shared_actions: int = 3  # actions appearing in >= 2 activities
    actions_per_activity: tuple = (2, 8)  # sanity bounds on list sizes
    videos_per_activity: int = 25
    frames_range: tuple = (100, 300)
    feature_dim: int = 32
    cluster_separation: float = 6.0  # min inter-mean distance, units of noise
    noise: float = 1.0
    drop_prob: float = 0.2  # chance an action is omitted from a video
    background_ratio: float = 0.0  # fraction of extra background frames
    seed: int = 0

    def __post_init__(self):
        if self.shared_actions > self.n_actions:
            raise ValueError("shared_actions cannot exceed n_actions")
        if self.shared_actions > 0 and self.n_activities < 2:
            raise ValueError("shared actions need at least two activities")
        if self.actions_per_activity[0] > self.n_actions:
            raise ValueError("actions_per_activity lower bound exceeds n_actions")
        if self.cluster_separation <= 0.0:
            raise ValueError("cluster_separation must be > 0")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")
        if self.n_activities < 1 or self.n_actions < 1 or self.videos_per_activity < 1:
            raise ValueError("counts must be >= 1")


def _activity_pairs(c: int) -> list:
    """Deterministic pair order: disjoint pairs first, then the rest."""
    disjoint = [(2 * i, 2 * i + 1) for i in range(c // 2)]
    rest = [p for p in combinations(range(c), 2) if p not in disjoint]
    return disjoint + rest


def _assign_actions(spec: CorpusSpec) -> list:
    """Which actions (1-based) belong to each activity (0-based list index).

    Shared actions go two-per-pair down a fixed pair enumeration, so specs
    with several shared actions produce both heavily-sharing and disjoint
    activity pairs; exclusive actions round-robin.
    """
    members = [set() for _ in range(spec.n_activities)]
    pairs = _activity_pairs(spec.n_activities)
    for s in range(spec.shared_actions):
        a, b = pairs[(s // 2) % len(pairs)]
        members[a].add(s + 1)
        members[b].add(s + 1)
    for action in range(spec.shared_actions + 1, spec.n_actions + 1):
        smallest = min(range(spec.n_activities), key=lambda i: (len(members[i]), i))
        members[smallest].add(action)
    lo, hi = spec.actions_per_activity
    for idx, actions in enumerate(members):
        if not lo <= len(actions) <= hi:
            raise CorpusError(
                f"activity {idx + 1} would have {len(actions)} actions, outside "
                f"[{lo}, {hi}]; adjust n_actions/shared_actions/actions_per_activity"
            )
    return [sorted(m) for m in members]


def _sample_means(spec: CorpusSpec, rng: np.random.Generator) -> np.ndarray:
    """Action means with pairwise distances >= cluster_separation * noise."""
    unit = spec.noise if spec.noise > 0.0 else 1.0  # noiseless corpora still separate
    threshold = spec.cluster_separation * unit
    scale = MEAN_SPREAD * threshold / math.sqrt(2.0 * spec.feature_dim)
    means = rng.normal(0.0, scale, (spec.n_actions, spec.feature_dim))
    for _ in range(_MAX_MEAN_ATTEMPTS):
        if spec.n_actions == 1:
            return means
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        if dist[i, j] >= threshold:
            return means
        means[i] = rng.normal(0.0, scale, spec.feature_dim)
    raise CorpusError(
        "could not separate action means; increase feature_dim or lower "
        "cluster_separation"
    )


def _segment_lengths(total: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Split `total` frames into k segments, proportions uniform in [1, 2]."""
    weights = rng.uniform(1.0, 2.0, k)
    raw = weights / weights.sum() * total
    lengths = np.floor(raw).astype(np.int64)
    lengths = np.maximum(lengths, 1)
    # largest remainders absorb the rounding gap (ties by lower index)
    gap = total - int(lengths.sum())
    if gap > 0:
        order = np.lexsort((np.arange(k), -(raw - np.floor(raw))))
        for idx in order[:gap]:
            lengths[idx] += 1
    while gap < 0:
        idx = int(np.argmax(lengths))
        lengths[idx] -= 1
        gap += 1
    return lengths


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Procedural corpus: per-activity canonical action sequences with drops.

    Every action has a fixed mean in feature space; frames are the mean
    plus isotropic Gaussian noise, rounded through float32 so written and
    in-memory corpora match bit-exactly.  Fully deterministic from the
    seed.
    """
    rng = np.random.default_rng(spec.seed)
    members = _assign_actions(spec)
    means = _sample_means(spec, rng)
    canonical = [[int(a) for a in rng.permutation(m)] for m in members]

    videos = []
    t_lo, t_hi = spec.frames_range
    for activity_idx, actions in enumerate(canonical):
        for v in range(spec.videos_per_activity):
            total = int(rng.integers(t_lo, t_hi + 1))
            dropped = rng.random(len(actions)) < spec.drop_prob
            kept = [a for a, d in zip(actions, dropped) if not d]
            if not kept:
                kept = [actions[int(rng.integers(len(actions)))]]
            lengths = _segment_lengths(total, len(kept), rng)
            gt = np.repeat(np.asarray(kept, dtype=np.int64), lengths)
            features = means[gt - 1] + rng.normal(0.0, spec.noise, (total, spec.feature_dim))
            if spec.background_ratio > 0.0:
                n_bg = int(round(spec.background_ratio * total))
                if n_bg:
                    lo_b = means.min() - spec.noise
                    hi_b = means.max() + spec.noise
                    head = n_bg // 2
                    bg = rng.uniform(lo_b, hi_b, (n_bg, spec.feature_dim))
                    features = np.concatenate([bg[:head], features, bg[head:]])
                    gt = np.concatenate(
                        [np.zeros(head, np.int64), gt, np.zeros(n_bg - head, np.int64)]
                    )
            features = features.astype(np.float32).astype(np.float64)
            videos.append(
                FeatureSequence(
                    video_id=f"a{activity_idx + 1:02d}_v{v:03d}",
                    activity=activity_idx + 1,
                    features=features,
                    gt_actions=gt,
                )
            )
    return Corpus(
        name="synthetic",
        n_activities=spec.n_activities,
        activity_names=[f"activity_{i + 1}" for i in range(spec.n_activities)],
        videos=videos,
        canonical_actions=canonical,
    )


# ---------------------------------------------------------------------------
# binary files and manifest


def _write_features(path: Path, features: np.ndarray) -> None:
    t, d = features.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, t, d))
        f.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def _write_gt(path: Path, gt: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(GT_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(gt)))
        f.write(np.ascontiguousarray(gt, dtype="<u4").tobytes())


def _read_exact(f, n: int, path: Path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorpusError(f"{path}: truncated while reading {what}")
    return data


def _read_features(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path, "magic")
        if magic != FEATURE_MAGIC:
            raise CorpusError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        version, t, d = struct.unpack("<III", _read_exact(f, 12, path, "header"))
        if version != FORMAT_VERSION:
            raise CorpusError(f"{path}: unsupported feature format version {version}")
        raw = _read_exact(f, t * d * 4, path, "feature values")
        if f.read(1):
            raise CorpusError(f"{path}: trailing bytes after feature values")
    return np.frombuffer(raw, dtype="<f4").reshape(t, d).astype(np.float64)


def _read_gt(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, path, "magic")
        if magic != GT_MAGIC:
            raise CorpusError(f"{path}: bad magic {magic!r}, expected {GT_MAGIC!r}")
        version, t = struct.unpack("<II", _read_exact(f, 8, path, "header"))
        if version != FORMAT_VERSION:
            raise CorpusError(f"{path}: unsupported ground truth format version {version}")
        raw = _read_exact(f, t * 4, path, "action ids")
        if f.read(1):
            raise CorpusError(f"{path}: trailing bytes after action ids")
    return np.frombuffer(raw, dtype="<u4").astype(np.int64)


def write_corpus(corpus: Corpus, out_dir) -> Path:
    """Write features, ground truth, and manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    has_gt = any(v.gt_actions is not None for v in corpus.videos)
    if has_gt:
        (out_dir / "gt").mkdir(exist_ok=True)
    for video in corpus.videos:
        feature_file = f"features/{video.video_id}.feat"
        _write_features(out_dir / feature_file, video.features)
        entry = {
            "id": video.video_id,
            "activity": video.activity,
            "T": video.n_frames,
            "feature_file": feature_file,
        }
        if video.gt_actions is not None:
            gt_file = f"gt/{video.video_id}.gt"
            _write_gt(out_dir / gt_file, video.gt_actions)
            entry["gt_file"] = gt_file
        entries.append(entry)
    manifest = {
        "dataset_name": corpus.name,
        "C": corpus.n_activities,
        "activity_names": corpus.activity_names,
        "videos": entries,
    }
    if corpus.canonical_actions is not None:
        manifest["canonical_actions"] = corpus.canonical_actions
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path


def read_corpus(manifest_path) -> Corpus:
    """Load a corpus; validates magic numbers and manifest shapes."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise CorpusError(f"{manifest_path}: manifest not found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{manifest_path}: unparseable manifest: {exc}") from exc
    base = manifest_path.parent
    videos = []
    for entry in manifest["videos"]:
        feature_path = base / entry["feature_file"]
        if not feature_path.exists():
            raise CorpusError(f"{feature_path}: referenced by manifest but missing")
        features = _read_features(feature_path)
        if features.shape[0] != entry["T"]:
            raise CorpusError(
                f"{feature_path}: has {features.shape[0]} frames, manifest says {entry['T']}"
            )
        gt = None
        if entry.get("gt_file"):
            gt_path = base / entry["gt_file"]
            if not gt_path.exists():
                raise CorpusError(f"{gt_path}: referenced by manifest but missing")
            gt = _read_gt(gt_path)
            if len(gt) != entry["T"]:
                raise CorpusError(
                    f"{gt_path}: has {len(gt)} frames, manifest says {entry['T']}"
                )
        videos.append(
            FeatureSequence(
                video_id=entry["id"],
                activity=int(entry["activity"]),
                features=features,
                gt_actions=gt,
            )
        )
    return Corpus(
        name=manifest.get("dataset_name", "unnamed"),
        n_activities=int(manifest["C"]),
        activity_names=list(manifest["activity_names"]),
        videos=videos,
        canonical_actions=manifest.get("canonical_actions"),
    )
