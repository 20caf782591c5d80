"""Input validation helpers shared by the functional API and the estimators."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np


def check_feature_matrix(X, *, min_frames: int = 2, name: str = "features") -> np.ndarray:
    """Return ``X`` as a finite float64 ``(T, d)`` array or raise ValueError."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (frames x dims), got shape {arr.shape}")
    if arr.shape[0] < min_frames:
        raise ValueError(f"{name} needs at least {min_frames} frames, got {arr.shape[0]}")
    if arr.shape[1] < 1:
        raise ValueError(f"{name} has zero feature dimensions")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"{name} contains a non-finite value at frame {bad[0]}, dim {bad[1]}")
    return arr


def check_video_list(X, *, min_frames: int = 2, name: str = "X") -> list[np.ndarray]:
    """Validate a list of per-video feature matrices sharing one feature dimension."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError(f"{name} must be a sequence of 2-D arrays, one per video")
    if not isinstance(X, Sequence) and not isinstance(X, np.ndarray):
        X = list(X)
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    videos = [
        check_feature_matrix(v, min_frames=min_frames, name=f"{name}[{i}]") for i, v in enumerate(X)
    ]
    dims = {v.shape[1] for v in videos}
    if len(dims) != 1:
        raise ValueError(f"{name} mixes feature dimensions {sorted(dims)}")
    return videos


def check_label_sequence(labels, length: int | None = None, name: str = "labels") -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise ValueError(f"{name} must hold integers")
        arr = as_int
    arr = arr.astype(np.int64, copy=False)
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} contains negative labels")
    return arr


def check_activity_labels(y, n_videos: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_videos,):
        raise ValueError(f"expected {n_videos} activity labels, got shape {y.shape}")
    return y


def check_fraction(value: float, name: str, *, closed_right: bool = True) -> float:
    value = float(value)
    ok = 0.0 <= value <= 1.0 if closed_right else 0.0 <= value < 1.0
    if not ok:
        bound = "]" if closed_right else ")"
        raise ValueError(f"{name} must lie in [0, 1{bound}, got {value}")
    return value
