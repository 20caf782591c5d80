"""Global Hungarian matching and frame-level metrics."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

BACKGROUND = 0

# Results published for the method on the real benchmarks, kept for context in reports.
REFERENCE_RESULTS = {
    "breakfast_idt": {"mof": 24.6, "f1": 20.6},
    "breakfast_i3d": {"mof": 20.7, "f1": 17.5},
    "youtube_instructions": {"mof": 23.6, "f1": 16.53, "mof_bg": 11.4},
    "youtube_instructions_ablation_mof": {
        "full": 23.6,
        "no_kmeans_init": 21.1,
        "no_cyclic_term": 21.0,
        "no_kmeans_init_no_cyclic_term": 20.4,
    },
}


@dataclass
class MatchResult:
    mapping: dict[int, int]  # cluster id -> class id, 0 for unmatched
    matched_frames: int
    cost_matrix: np.ndarray  # (n_clusters + 1) x (n_classes + 1) co-occurrence counts, row/col 0 = background

    def n_unmatched(self) -> int:
        return sum(1 for v in self.mapping.values() if v == BACKGROUND)

    def unmatched_classes(self, n_classes: int) -> list[int]:
        used = set(self.mapping.values())
        return [c for c in range(1, n_classes + 1) if c not in used]


def _check_pairs(pred, gt, video_ids=None):
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted sequences for {len(gt)} ground-truth sequences")
    out = []
    for n, (p, g) in enumerate(zip(pred, gt)):
        p, g = np.asarray(p, dtype=np.int64), np.asarray(g, dtype=np.int64)
        if p.shape != g.shape or p.ndim != 1:
            name = video_ids[n] if video_ids is not None else f"#{n}"
            raise ValueError(f"video {name}: prediction length {p.shape} != ground truth length {g.shape}")
        out.append((p, g))
    return out


def cooccurrence(pred, gt, n_clusters: int, n_classes: int, video_ids=None) -> np.ndarray:
    counts = np.zeros((n_clusters + 1, n_classes + 1), dtype=np.int64)
    for p, g in _check_pairs(pred, gt, video_ids):
        if p.min(initial=0) < 0 or p.max(initial=0) > n_clusters:
            raise ValueError(f"cluster ids must lie in [0, {n_clusters}]")
        if g.min(initial=0) < 0 or g.max(initial=0) > n_classes:
            raise ValueError(f"class ids must lie in [0, {n_classes}]")
        np.add.at(counts, (p, g), 1)
    return counts


def hungarian_match(pred, gt, n_clusters: int, n_classes: int, video_ids=None) -> MatchResult:
    """One-to-one cluster to class assignment maximising co-occurring frames.

    Background on either side is left out of the assignment; clusters left
    without a class map to background.
    """
    counts = cooccurrence(pred, gt, n_clusters, n_classes, video_ids)
    rows, cols = linear_sum_assignment(counts[1:, 1:], maximize=True)
    mapping = {c: BACKGROUND for c in range(1, n_clusters + 1)}
    for r, c in zip(rows, cols):
        mapping[int(r) + 1] = int(c) + 1
    matched = int(counts[1:, 1:][rows, cols].sum())
    return MatchResult(mapping, matched, counts)


def apply_mapping(pred, match: MatchResult) -> list[np.ndarray]:
    table = np.zeros(max(match.mapping, default=0) + 1, dtype=np.int64)
    for cluster, cls in match.mapping.items():
        table[cluster] = cls
    return [table[np.asarray(p, dtype=np.int64)] for p in pred]


def mof(mapped_pred, gt, *, include_background: bool = False, tau: float | None = None, seed: int = 0) -> float:
    """Frame accuracy.

    Without background, a seeded random ``tau`` share (default 0.75) of the
    ground-truth background frames is discarded first; the remaining
    background frames still count and must be predicted as 0.
    """
    pairs = _check_pairs(mapped_pred, gt)
    p = np.concatenate([a for a, _ in pairs]) if pairs else np.zeros(0, np.int64)
    g = np.concatenate([b for _, b in pairs]) if pairs else np.zeros(0, np.int64)
    keep = np.ones(len(g), dtype=bool)
    if not include_background:
        tau = 0.75 if tau is None else tau
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {tau}")
        bg = np.flatnonzero(g == BACKGROUND)
        n_drop = int(round(tau * len(bg)))
        if n_drop:
            keep[np.random.default_rng(seed).choice(bg, size=n_drop, replace=False)] = False
    if not keep.any():
        return 0.0
    return float(np.mean(p[keep] == g[keep]))


def precision_recall(mapped_pred, gt, average: str = "micro"):
    pairs = _check_pairs(mapped_pred, gt)
    p = np.concatenate([a for a, _ in pairs])
    g = np.concatenate([b for _, b in pairs])
    if average == "micro":
        correct = np.sum((p == g) & (g != BACKGROUND))
        n_pred = np.sum(p != BACKGROUND)
        n_gt = np.sum(g != BACKGROUND)
        return (correct / n_pred if n_pred else 0.0), (correct / n_gt if n_gt else 0.0)
    if average == "macro":
        classes = np.union1d(p[p != BACKGROUND], g[g != BACKGROUND])
        if classes.size == 0:
            return 0.0, 0.0
        per_p, per_r = [], []
        for c in classes:
            hit = np.sum((p == c) & (g == c))
            n_pred, n_gt = np.sum(p == c), np.sum(g == c)
            per_p.append(hit / n_pred if n_pred else 0.0)
            per_r.append(hit / n_gt if n_gt else 0.0)
        return float(np.mean(per_p)), float(np.mean(per_r))
    raise ValueError(f"average must be 'micro' or 'macro', got {average!r}")


def f1(mapped_pred, gt, average: str = "micro") -> float:
    P, R = precision_recall(mapped_pred, gt, average)
    return float(2 * P * R / (P + R)) if P + R > 0 else 0.0


def per_class_table(mapped_pred, gt, n_classes: int) -> list[dict]:
    p = np.concatenate([np.asarray(a) for a in mapped_pred])
    g = np.concatenate([np.asarray(b) for b in gt])
    rows = []
    for c in range(n_classes + 1):
        hit = int(np.sum((p == c) & (g == c)))
        n_pred, n_gt = int(np.sum(p == c)), int(np.sum(g == c))
        rows.append(
            {
                "class": c,
                "gt_frames": n_gt,
                "pred_frames": n_pred,
                "precision": hit / n_pred if n_pred else 0.0,
                "recall": hit / n_gt if n_gt else 0.0,
            }
        )
    return rows


@dataclass
class EvalSettings:
    tau: float = 0.75
    include_mof_bg: bool = True
    f1_average: str = "micro"
    seed: int = 0


@dataclass
class MetricReport:
    mof: float
    f1: float
    mof_bg: float | None
    tau: float
    n_clusters: int
    n_classes: int
    mapping: dict[int, int]
    per_class: list[dict]
    settings: dict
    header: dict = field(default_factory=dict)
    reference: dict = field(default_factory=lambda: REFERENCE_RESULTS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mapping"] = {str(k): v for k, v in self.mapping.items()}
        return d

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "MetricReport":
        d = json.loads(Path(path).read_text())
        d["mapping"] = {int(k): v for k, v in d["mapping"].items()}
        return cls(**d)


def evaluate(gt, pred, n_clusters: int, n_classes: int, settings: EvalSettings | None = None, *, video_ids=None, header=None) -> MetricReport:
    """Hungarian matching followed by every metric."""
    settings = settings or EvalSettings()
    gt = list(gt)
    if any(g is None for g in gt):
        raise ValueError("ground-truth frame labels are required for evaluation")
    match = hungarian_match(pred, gt, n_clusters, n_classes, video_ids)
    mapped = apply_mapping(pred, match)
    return MetricReport(
        mof=mof(mapped, gt, tau=settings.tau, seed=settings.seed),
        f1=f1(mapped, gt, settings.f1_average),
        mof_bg=mof(mapped, gt, include_background=True) if settings.include_mof_bg else None,
        tau=settings.tau,
        n_clusters=n_clusters,
        n_classes=n_classes,
        mapping=match.mapping,
        per_class=per_class_table(mapped, gt, n_classes),
        settings=asdict(settings),
        header=dict(header or {}),
    )


def evaluate_manifest(manifest, segmentation, settings: EvalSettings | None = None, *, header=None) -> MetricReport:
    if not manifest.has_ground_truth:
        raise ValueError("dataset has no ground-truth frame labels")
    gt = [r.gt_frame_labels for r in manifest.records]
    return evaluate(
        gt,
        segmentation.labels,
        segmentation.n_clusters,
        manifest.n_classes,
        settings,
        video_ids=[r.video_id for r in manifest.records],
        header=header,
    )


def shuffled_floor(manifest, segmentation, settings: EvalSettings | None = None, n_draws: int = 5, seed: int = 0) -> float:
    """Mean MoF of uniformly random cluster ids, scored like ``segmentation``.

    This is the chance level a segmentation has to beat; it sits near
    ``1 / n_clusters`` when the classes are balanced.
    """
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(n_draws):
        labels = [rng.integers(1, segmentation.n_clusters + 1, len(l)) for l in segmentation.labels]
        shuffled = dataclasses.replace(segmentation, labels=labels)
        scores.append(evaluate_manifest(manifest, shuffled, settings).mof)
    return float(np.mean(scores))
