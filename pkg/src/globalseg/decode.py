"""Post-processing: bag-of-words pseudo-activities, ordered action clusters
per group and monotone Viterbi decoding with an optional background model.
"""

from __future__ import annotations

import colorsys
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_video_list
from .model import embed_videos, kmeans

BACKGROUND = 0


@dataclass
class BoWModel:
    vocabulary: np.ndarray  # (W, e)

    @property
    def size(self) -> int:
        return self.vocabulary.shape[0]

    def histogram(self, E: np.ndarray) -> np.ndarray:
        words = _nearest(E, self.vocabulary)
        counts = np.bincount(words, minlength=self.size).astype(np.float64)
        return counts / counts.sum()


@dataclass
class PseudoActivityModel:
    group_centroids: np.ndarray  # (K', W) histogram centroids
    action_centroids: list[np.ndarray]  # per group, (K, e) in temporal order
    orders: list[np.ndarray]  # per group, permutation of the raw k-means clusters
    memberships: np.ndarray  # group index per fitted video

    @property
    def n_groups(self) -> int:
        return len(self.action_centroids)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)


def _nearest(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.argmin(_sq_dists(X, C), axis=1)


def build_bow(embeddings, vocab_size: int = 50, seed: int = 0, n_init: int = 1):
    """k-means vocabulary over all frames and one normalised word histogram per video."""
    videos = check_video_list(embeddings, min_frames=1, name="embeddings")
    frames = np.concatenate(videos)
    if frames.shape[0] < vocab_size:
        raise ValueError(f"{frames.shape[0]} frames cannot support a vocabulary of {vocab_size}")
    bow = BoWModel(kmeans(frames, vocab_size, seed, n_init=n_init).cluster_centers_)
    return bow, np.stack([bow.histogram(E) for E in videos])


def cluster_pseudo_activities(histograms, n_groups: int, seed: int = 0, n_init: int = 1):
    """Group videos by k-means on their histograms; returns (group index per video, centroids)."""
    H = np.asarray(histograms, dtype=np.float64)
    if H.shape[0] < n_groups:
        raise ValueError(f"{H.shape[0]} videos cannot form {n_groups} groups")
    if n_groups == 1:
        return np.zeros(H.shape[0], dtype=np.int64), H.mean(0, keepdims=True)
    km = kmeans(H, n_groups, seed, n_init=n_init)
    return km.labels_.astype(np.int64), km.cluster_centers_


def cluster_actions(embeddings, n_actions: int, seed: int = 0, n_init: int = 1):
    """k-means over a group's frames, centroids sorted by mean relative timestamp.

    Returns ``(ordered_centroids, order)`` where ``order[r]`` is the raw
    cluster placed at rank ``r``; ties keep the lower cluster index first.
    """
    videos = check_video_list(embeddings, min_frames=1, name="embeddings")
    frames = np.concatenate(videos)
    if frames.shape[0] < n_actions:
        raise ValueError(f"{frames.shape[0]} frames cannot form {n_actions} action clusters")
    rel_time = np.concatenate([np.arange(len(E)) / len(E) for E in videos])
    km = kmeans(frames, n_actions, seed, n_init=n_init)
    labels = km.labels_
    mean_time = np.array(
        [rel_time[labels == k].mean() if np.any(labels == k) else np.inf for k in range(n_actions)]
    )
    order = np.argsort(mean_time, kind="stable")
    return km.cluster_centers_[order], order


def ordered_viterbi(scores: np.ndarray) -> tuple[np.ndarray, float]:
    """Best monotone path through ``scores`` (T x K) visiting every state in order.

    Returns 0-based states per frame and the path score. On backtrace ties
    the path stays in its current state, which places transitions as early
    as possible.
    """
    scores = np.asarray(scores, dtype=np.float64)
    T, K = scores.shape
    if K < 1:
        raise ValueError("need at least one state")
    if T < K:
        raise ValueError(f"{T} frames cannot visit {K} ordered states")
    acc = np.full((T, K), -np.inf)
    moved = np.zeros((T, K), dtype=bool)
    acc[0, 0] = scores[0, 0]
    for t in range(1, T):
        stay = acc[t - 1]
        advance = np.concatenate(([-np.inf], acc[t - 1, :-1]))
        moved[t] = advance > stay
        acc[t] = np.where(moved[t], advance, stay) + scores[t]
    path = np.empty(T, dtype=np.int64)
    k = K - 1
    for t in range(T - 1, -1, -1):
        path[t] = k
        if t > 0 and moved[t, k]:
            k -= 1
    return path, float(acc[T - 1, K - 1])


def emission_scores(E: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return -_sq_dists(np.asarray(E, dtype=np.float64), np.asarray(centroids, dtype=np.float64))


def viterbi_decode(E, centroids, bg_threshold: float | None = None) -> np.ndarray:
    """Within-group labels ``1..K`` per frame; frames whose best score is below
    ``bg_threshold`` become background (0) after decoding."""
    scores = emission_scores(E, centroids)
    path, _ = ordered_viterbi(scores)
    labels = path + 1
    if bg_threshold is not None:
        labels[scores.max(axis=1) < bg_threshold] = BACKGROUND
    return labels


class GlobalActionSegmenter(BaseEstimator):
    """Cluster frame embeddings of many videos into ``n_pseudo_activities * n_actions`` global clusters.

    Parameters
    ----------
    n_pseudo_activities : int
        Number of video groups found from bag-of-words histograms.
    n_actions : int
        Ordered action clusters per group.
    vocab_size : int
        Bag-of-words vocabulary size; must be at least ``n_pseudo_activities``.
    background_fraction : float
        Expected share of background frames. Frames whose best emission
        score falls below this quantile of all fitted frames are labelled 0.
        ``0`` disables the background model.
    n_init : int
        k-means restarts for every clustering step.
    random_state : int
    """

    def __init__(
        self,
        n_pseudo_activities: int = 10,
        n_actions: int = 5,
        vocab_size: int = 50,
        background_fraction: float = 0.0,
        n_init: int = 3,
        random_state: int = 0,
    ):
        self.n_pseudo_activities = n_pseudo_activities
        self.n_actions = n_actions
        self.vocab_size = vocab_size
        self.background_fraction = background_fraction
        self.n_init = n_init
        self.random_state = random_state

    @property
    def n_clusters(self) -> int:
        return self.n_pseudo_activities * self.n_actions

    def _check_params(self):
        if self.n_pseudo_activities < 1 or self.n_actions < 1:
            raise ValueError("n_pseudo_activities and n_actions must be positive")
        if self.vocab_size < self.n_pseudo_activities:
            raise ValueError(f"vocab_size={self.vocab_size} must be >= n_pseudo_activities")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ValueError("background_fraction must lie in [0, 1)")

    def fit(self, X, y=None):
        self._fit(X)
        return self

    def _fit(self, X):
        self._check_params()
        videos = check_video_list(X, min_frames=self.n_actions, name="X")
        seed = self.random_state
        self.bow_, histograms = build_bow(videos, self.vocab_size, seed, self.n_init)
        groups, group_centroids = cluster_pseudo_activities(histograms, self.n_pseudo_activities, seed, self.n_init)
        centroids, orders = [], []
        for g in range(self.n_pseudo_activities):
            members = [videos[i] for i in np.flatnonzero(groups == g)]
            if not members:
                # an emptied group keeps the global action clusters so prediction stays defined
                members = videos
            c, order = cluster_actions(members, self.n_actions, seed, self.n_init)
            centroids.append(c)
            orders.append(order)
        self.model_ = PseudoActivityModel(group_centroids, centroids, orders, groups)
        self.bg_threshold_ = None
        if self.background_fraction > 0:
            best = np.concatenate(
                [emission_scores(E, centroids[g]).max(axis=1) for E, g in zip(videos, groups)]
            )
            self.bg_threshold_ = float(np.quantile(best, self.background_fraction))
        return videos, groups

    def _decode(self, videos, groups):
        out = []
        for E, g in zip(videos, groups):
            labels = viterbi_decode(E, self.model_.action_centroids[g], self.bg_threshold_)
            out.append(np.where(labels == BACKGROUND, BACKGROUND, g * self.n_actions + labels))
        return out

    def predict_groups(self, X) -> np.ndarray:
        videos = check_video_list(X, min_frames=1, name="X")
        H = np.stack([self.bow_.histogram(E) for E in videos])
        return _nearest(H, self.model_.group_centroids)

    def predict(self, X) -> list[np.ndarray]:
        """Global cluster ids in ``[1, n_clusters]`` (0 = background) per frame of each video."""
        videos = check_video_list(X, min_frames=self.n_actions, name="X")
        return self._decode(videos, self.predict_groups(videos))

    def fit_predict(self, X, y=None) -> list[np.ndarray]:
        videos, groups = self._fit(X)
        self.groups_ = groups
        return self._decode(videos, groups)


@dataclass
class Segmentation:
    video_ids: list[str]
    labels: list[np.ndarray]
    groups: np.ndarray
    n_clusters: int

    def __len__(self):
        return len(self.labels)


def segment_dataset(
    manifest,
    model,
    n_pseudo_activities: int,
    n_actions: int,
    *,
    background_fraction: float = 0.0,
    vocab_size: int = 50,
    n_init: int = 3,
    seed: int = 0,
) -> Segmentation:
    """Embed every video at full length with ``model`` and segment the whole set jointly."""
    embeddings = embed_videos(model, manifest.features)
    segmenter = GlobalActionSegmenter(
        n_pseudo_activities=n_pseudo_activities,
        n_actions=n_actions,
        vocab_size=vocab_size,
        background_fraction=background_fraction,
        n_init=n_init,
        random_state=seed,
    )
    labels = segmenter.fit_predict(embeddings)
    return Segmentation([r.video_id for r in manifest.records], labels, segmenter.groups_, segmenter.n_clusters)


# --------------------------------------------------------------------------
# export


def write_segmentation_csv(path, labels) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "global_cluster_id"])
        writer.writerows(enumerate(int(v) for v in labels))
    return path


def read_segmentation_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"segmentation file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame_index", "global_cluster_id"]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [(int(a), int(b)) for a, b in reader]
    frames = [r[0] for r in rows]
    if frames != list(range(len(rows))):
        raise ValueError(f"{path}: frame indices must run 0..T-1")
    return np.array([r[1] for r in rows], dtype=np.int64)


def _segments(labels):
    labels = np.asarray(labels)
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [len(labels)]))
    return [(int(s), int(e), int(labels[s])) for s, e in zip(starts, ends)]


def _colour(cluster: int, n_clusters: int) -> str:
    if cluster == BACKGROUND:
        return "#d9d9d9"
    # golden-ratio hue stepping keeps neighbouring ids distinguishable
    hue = (cluster * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.9)
    return f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}"


def write_barcode_svg(path, labels, n_clusters: int, *, width: int = 800, height: int = 40) -> Path:
    """One coloured rectangle per segment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    T = len(labels)
    rects = []
    for start, end, cluster in _segments(labels):
        x = start / T * width
        w = (end - start) / T * width
        rects.append(
            f'  <rect x="{x:.3f}" y="0" width="{w:.3f}" height="{height}" '
            f'fill="{_colour(cluster, n_clusters)}"><title>cluster {cluster}: frames {start}-{end - 1}</title></rect>'
        )
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n' + "\n".join(rects) + "\n</svg>\n"
    )
    path.write_text(svg)
    return path


INDEX_FILE = "segmentation_index.csv"


def write_segmentation_dir(segmentation: Segmentation, out_dir, *, svg: bool = False, header: str | None = None) -> Path:
    """One CSV per video plus an index recording the group of each video and the cluster count."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / INDEX_FILE, "w", newline="") as fh:
        for line in (header or "").splitlines():
            fh.write(f"# {line}\n")
        fh.write(f"# n_clusters={segmentation.n_clusters}\n")
        writer = csv.writer(fh)
        writer.writerow(["video_id", "group", "segmentation_file"])
        for vid, group, labels in zip(segmentation.video_ids, segmentation.groups, segmentation.labels):
            name = f"{vid}.csv"
            write_segmentation_csv(out_dir / name, labels)
            if svg:
                write_barcode_svg(out_dir / f"{vid}.svg", labels, segmentation.n_clusters)
            writer.writerow([vid, int(group), name])
    return out_dir / INDEX_FILE


def read_segmentation_dir(out_dir) -> Segmentation:
    out_dir = Path(out_dir)
    index = out_dir / INDEX_FILE
    if not index.is_file():
        raise FileNotFoundError(f"segmentation index not found: {index}")
    n_clusters = None
    rows = []
    with open(index, newline="") as fh:
        body = []
        for line in fh:
            if line.startswith("# n_clusters="):
                n_clusters = int(line.split("=", 1)[1])
            elif not line.startswith("#"):
                body.append(line)
        rows = list(csv.DictReader(body))
    if n_clusters is None:
        raise ValueError(f"{index}: missing n_clusters line")
    return Segmentation(
        [r["video_id"] for r in rows],
        [read_segmentation_csv(out_dir / r["segmentation_file"]) for r in rows],
        np.array([int(r["group"]) for r in rows], dtype=np.int64),
        n_clusters,
    )
