"""Dataset ingestion, temporal downsampling and a synthetic dataset generator.

On disk a dataset is a directory holding a CSV manifest with the header
``video_id,activity_label,feature_file,label_file`` plus one plain-text
feature file per video (one frame per line, space separated reals) and an
optional label file (one integer per line, ``0`` meaning background).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_feature_matrix, check_label_sequence

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ("video_id", "activity_label", "feature_file", "label_file")
BACKGROUND = 0


class DatasetError(ValueError):
    """Base class for malformed or inconsistent datasets."""


class DatasetFormatError(DatasetError):
    pass


class DatasetValidationError(DatasetError):
    pass


class SynthConfigError(ValueError):
    pass


@dataclass(eq=False)
class VideoRecord:
    video_id: str
    activity_label: int
    features: np.ndarray
    gt_frame_labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = check_feature_matrix(self.features, name=f"features of {self.video_id!r}")
        self.activity_label = int(self.activity_label)
        if self.gt_frame_labels is not None:
            self.gt_frame_labels = check_label_sequence(
                self.gt_frame_labels, self.n_frames, name=f"labels of {self.video_id!r}"
            )

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other):
        if not isinstance(other, VideoRecord):
            return NotImplemented
        if (self.gt_frame_labels is None) != (other.gt_frame_labels is None):
            return False
        return (
            self.video_id == other.video_id
            and self.activity_label == other.activity_label
            and np.array_equal(self.features, other.features)
            and (self.gt_frame_labels is None or np.array_equal(self.gt_frame_labels, other.gt_frame_labels))
        )


@dataclass
class DatasetManifest:
    n_activities: int
    n_classes: int
    records: list[VideoRecord]
    feature_dim: int

    def __post_init__(self):
        for rec in self.records:
            if not 1 <= rec.activity_label <= self.n_activities:
                raise DatasetValidationError(
                    f"video {rec.video_id!r}: activity label {rec.activity_label} "
                    f"outside [1, {self.n_activities}]"
                )
            if rec.features.shape[1] != self.feature_dim:
                raise DatasetValidationError(
                    f"video {rec.video_id!r} has {rec.features.shape[1]} dims, manifest says {self.feature_dim}"
                )

    def __len__(self):
        return len(self.records)

    @property
    def features(self) -> list[np.ndarray]:
        return [r.features for r in self.records]

    @property
    def activity_labels(self) -> np.ndarray:
        return np.array([r.activity_label for r in self.records], dtype=np.int64)

    @property
    def has_ground_truth(self) -> bool:
        return bool(self.records) and all(r.gt_frame_labels is not None for r in self.records)

    def background_fraction(self) -> float:
        if not self.has_ground_truth:
            raise DatasetValidationError("background fraction needs ground-truth frame labels")
        labels = np.concatenate([r.gt_frame_labels for r in self.records])
        return float(np.mean(labels == BACKGROUND))


@dataclass(frozen=True)
class IndexMap:
    """Maps downsampled positions back to original frame indices."""

    kept_indices: np.ndarray
    original_length: int

    def __len__(self):
        return len(self.kept_indices)


# --------------------------------------------------------------------------
# file formats


def _read_feature_file(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"feature file not found: {path}")
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            parts = line.split()
            if not parts:
                continue
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise DatasetFormatError(
                    f"{path}: row {lineno} has {len(parts)} values, expected {width}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: row {lineno} is not numeric ({exc})") from None
    if not rows:
        raise DatasetFormatError(f"{path}: no frames")
    return np.array(rows, dtype=np.float64)


def _read_label_file(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"label file not found: {path}")
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            s = line.strip()
            if not s:
                continue
            try:
                values.append(int(s))
            except ValueError:
                raise DatasetFormatError(f"{path}: row {lineno} is not an integer: {s!r}") from None
    return np.array(values, dtype=np.int64)


def load_dataset(
    root_path,
    manifest_file="manifest.csv",
    *,
    n_activities: int | None = None,
    n_classes: int | None = None,
) -> DatasetManifest:
    """Load and validate a dataset directory.

    ``n_activities`` and ``n_classes`` are inferred from the largest label
    seen when not given.
    """
    root = Path(root_path)
    manifest_path = Path(manifest_file)
    if not manifest_path.is_absolute():
        manifest_path = root / manifest_path
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")

    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise DatasetFormatError(f"{manifest_path}: header must be {','.join(MANIFEST_HEADER)}")
        entries = [row for row in reader if row and any(cell.strip() for cell in row)]

    records = []
    dim = None
    for lineno, row in enumerate(entries, start=2):
        if len(row) != 4:
            raise DatasetFormatError(f"{manifest_path}: line {lineno} has {len(row)} fields, expected 4")
        video_id, activity, feature_file, label_file = (cell.strip() for cell in row)
        try:
            activity = int(activity)
        except ValueError:
            raise DatasetFormatError(f"{manifest_path}: line {lineno} activity {activity!r} is not an integer") from None
        if activity < 1 or (n_activities is not None and activity > n_activities):
            raise DatasetValidationError(
                f"video {video_id!r}: activity label {activity} outside [1, {n_activities or 'C'}]"
            )
        feats = _read_feature_file(root / feature_file)
        if dim is None:
            dim = feats.shape[1]
        elif feats.shape[1] != dim:
            raise DatasetValidationError(f"video {video_id!r} has {feats.shape[1]} dims, earlier videos have {dim}")
        labels = _read_label_file(root / label_file) if label_file else None
        if labels is not None and len(labels) != len(feats):
            raise DatasetValidationError(
                f"video {video_id!r}: {len(labels)} labels for {len(feats)} frames"
            )
        records.append(VideoRecord(video_id, activity, feats, labels))

    if not records:
        raise DatasetFormatError(f"{manifest_path}: no videos listed")
    if n_activities is None:
        n_activities = max(r.activity_label for r in records)
    if n_classes is None:
        n_classes = max(
            (int(r.gt_frame_labels.max()) for r in records if r.gt_frame_labels is not None and len(r.gt_frame_labels)),
            default=0,
        )
    return DatasetManifest(n_activities, n_classes, records, dim)


def save_dataset(manifest: DatasetManifest, root_path, manifest_file="manifest.csv") -> Path:
    root = Path(root_path)
    (root / "features").mkdir(parents=True, exist_ok=True)
    if any(r.gt_frame_labels is not None for r in manifest.records):
        (root / "labels").mkdir(exist_ok=True)
    manifest_path = root / manifest_file
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest.records:
            feature_file = f"features/{rec.video_id}.txt"
            # %.17g round-trips float64 exactly
            np.savetxt(root / feature_file, rec.features, fmt="%.17g", delimiter=" ")
            label_file = ""
            if rec.gt_frame_labels is not None:
                label_file = f"labels/{rec.video_id}.txt"
                np.savetxt(root / label_file, rec.gt_frame_labels, fmt="%d")
            writer.writerow([rec.video_id, rec.activity_label, feature_file, label_file])
    return manifest_path


# --------------------------------------------------------------------------
# temporal resampling


def downsample(video, target_len: int = 256, seed: int = 0) -> tuple[np.ndarray, IndexMap]:
    """Keep at most ``target_len`` frames, one uniformly random frame per bin.

    ``[0, T)`` is split into ``target_len`` contiguous bins so that the kept
    frames cover the whole video. Shorter videos are returned whole.
    """
    if target_len < 2:
        raise ValueError(f"target_len must be >= 2, got {target_len}")
    features = video.features if isinstance(video, VideoRecord) else np.asarray(video, dtype=np.float64)
    T = features.shape[0]
    if T <= target_len:
        return features.copy(), IndexMap(np.arange(T), T)
    rng = np.random.default_rng(seed)
    edges = (np.arange(target_len + 1) * T) // target_len
    kept = rng.integers(edges[:-1], edges[1:])
    return features[kept], IndexMap(kept, T)


def upsample_labels(frame_labels, index_map: IndexMap) -> np.ndarray:
    """Give every original frame the label of its nearest kept frame (ties go earlier)."""
    labels = np.asarray(frame_labels)
    kept = np.asarray(index_map.kept_indices)
    if labels.shape[0] != kept.shape[0]:
        raise ValueError(f"got {labels.shape[0]} labels for an index map of length {kept.shape[0]}")
    t = np.arange(index_map.original_length)
    right = np.clip(np.searchsorted(kept, t, side="left"), 0, len(kept) - 1)
    left = np.clip(right - 1, 0, len(kept) - 1)
    use_left = np.abs(t - kept[left]) <= np.abs(kept[right] - t)
    return labels[np.where(use_left, left, right)]


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    n_activities: int = 3
    n_actions: int = 6
    shared_actions: int = 2
    actions_per_activity: int = 4
    videos_per_activity: int = 20
    frames_per_video: int = 256
    feature_dim: int = 16
    feature_noise_sigma: float = 1.0
    background_fraction: float = 0.0
    segment_length_range: tuple[int, int] = (20, 100)
    # minimum pairwise distance of the per-action means, in units of sigma
    mean_separation: float = 4.0
    # per-video additive offset shared by all frames of a video, std per dim in units of sigma
    video_offset_sigma: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_activities < 1 or self.n_actions < 1:
            raise SynthConfigError("need at least one activity and one action")
        if not 0 <= self.shared_actions <= self.n_actions:
            raise SynthConfigError(f"shared_actions={self.shared_actions} must lie in [0, n_actions]")
        if self.shared_actions and self.n_activities < 2:
            raise SynthConfigError("shared actions need at least two activities")
        if not 0.0 <= self.background_fraction < 1.0:
            raise SynthConfigError(f"background_fraction must lie in [0, 1), got {self.background_fraction}")
        lo, hi = self.segment_length_range
        if lo < 1 or hi < lo:
            raise SynthConfigError(f"segment_length_range {self.segment_length_range} must be positive and ordered")
        if self.mean_separation < 4.0:
            raise SynthConfigError("mean_separation below 4 sigma makes the actions unrecoverable")
        if self.video_offset_sigma < 0:
            raise SynthConfigError("video_offset_sigma must be >= 0")
        if self.feature_noise_sigma <= 0 or self.feature_dim < 1 or self.videos_per_activity < 1:
            raise SynthConfigError("feature_noise_sigma, feature_dim and videos_per_activity must be positive")
        action_frames = self.frames_per_video - round(self.background_fraction * self.frames_per_video)
        if self.actions_per_activity * lo > action_frames or action_frames < 2:
            raise SynthConfigError(
                f"{self.actions_per_activity} segments of >= {lo} frames cannot fit "
                f"{action_frames} non-background frames"
            )


def make_activity_scripts(config: SynthConfig, rng: np.random.Generator) -> list[list[int]]:
    """Ordered action lists per activity; exactly ``shared_actions`` ids recur across activities."""
    C, cap = config.n_activities, config.actions_per_activity
    pool = rng.permutation(config.n_actions) + 1
    shared, unique = pool[: config.shared_actions], pool[config.shared_actions :]
    if len(unique) > C * cap:
        raise SynthConfigError(f"{len(unique)} activity-specific actions do not fit {C} scripts of length {cap}")
    scripts: list[list[int]] = [[] for _ in range(C)]
    for i, action in enumerate(unique):
        scripts[i % C].append(int(action))

    for action in shared:
        free = [a for a in range(C) if len(scripts[a]) < cap]
        if len(free) < 2:
            raise SynthConfigError("not enough script slots to share every shared action across two activities")
        # prefer the emptiest scripts, random among equals
        order = sorted(free, key=lambda a: (len(scripts[a]), rng.random()))
        for a in order[:2]:
            scripts[a].append(int(action))
    for action in shared:
        for a in rng.permutation(C):
            if action not in scripts[a] and len(scripts[a]) < cap and rng.random() < 0.5:
                scripts[a].append(int(action))
    if any(not s for s in scripts):
        raise SynthConfigError("some activity received no action; increase n_actions or shared_actions")
    return [list(map(int, rng.permutation(s))) for s in scripts]


def _split_lengths(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights / weights.sum() * total
    lengths = np.floor(raw).astype(np.int64)
    remainder = total - lengths.sum()
    lengths[np.argsort(-(raw - lengths), kind="stable")[:remainder]] += 1
    while (lengths < 1).any():
        lengths[np.argmax(lengths)] -= 1
        lengths[np.argmin(lengths)] += 1
    return lengths


def generate_synthetic(config: SynthConfig) -> DatasetManifest:
    config.validate()
    rng = np.random.default_rng(config.seed)
    scripts = make_activity_scripts(config, rng)

    sigma = config.feature_noise_sigma
    means = rng.normal(size=(config.n_actions + 1, config.feature_dim))
    diffs = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diffs**2).sum(-1))
    min_dist = dist[np.triu_indices(len(means), 1)].min() if len(means) > 1 else 1.0
    means *= config.mean_separation * sigma / min_dist

    T = config.frames_per_video
    n_bg = round(config.background_fraction * T)
    lo, hi = config.segment_length_range
    # separate stream so datasets without offsets do not depend on this feature
    offset_rng = np.random.default_rng([config.seed, 1])
    records = []
    for a, script in enumerate(scripts, start=1):
        for v in range(config.videos_per_activity):
            lengths = _split_lengths(rng.integers(lo, hi + 1, size=len(script)).astype(float), T - n_bg)
            n_start = int(rng.integers(0, n_bg + 1))
            labels = np.concatenate(
                [np.zeros(n_start, np.int64), np.repeat(script, lengths), np.zeros(n_bg - n_start, np.int64)]
            )
            feats = means[labels] + sigma * rng.normal(size=(T, config.feature_dim))
            if config.video_offset_sigma > 0:
                feats += config.video_offset_sigma * sigma * offset_rng.normal(size=config.feature_dim)
            records.append(VideoRecord(f"a{a:02d}_v{v:03d}", a, feats, labels))
    return DatasetManifest(config.n_activities, config.n_actions, records, config.feature_dim)


PRESETS = {
    # the per-video offset keeps raw clustering from solving the task without learning
    "desk": SynthConfig(video_offset_sigma=1.0),
    "bf-like": SynthConfig(
        n_activities=10,
        n_actions=48,
        shared_actions=8,
        actions_per_activity=6,
        videos_per_activity=8,
        frames_per_video=256,
        feature_dim=32,
        background_fraction=0.07,
        segment_length_range=(20, 80),
    ),
    "yti-like": SynthConfig(
        n_activities=5,
        n_actions=47,
        shared_actions=2,
        actions_per_activity=10,
        videos_per_activity=6,
        frames_per_video=256,
        feature_dim=32,
        background_fraction=0.635,
        segment_length_range=(5, 20),
    ),
}


def preset(name: str, **overrides) -> SynthConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[name]
    values = {f: getattr(base, f) for f in base.__dataclass_fields__}
    values.update(overrides)
    return SynthConfig(**values)
