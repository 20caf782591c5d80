"""scikit-learn style wrapper around training and embedding."""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_activity_labels, check_video_list
from .dataio import DatasetManifest, VideoRecord
from .decode import GlobalActionSegmenter
from .losses import LossConfig
from .model import embed_videos
from .training import TrainConfig, train


class TriadicEmbedder(TransformerMixin, BaseEstimator):
    """Learn frame embeddings from videos labelled only with their activity.

    ``fit(X, y)`` takes a list of ``(T_i, d)`` feature matrices and one
    activity label per video; ``transform`` returns the ``(T_i, embed_dim)``
    embeddings of each video.

    Parameters mirror :class:`~globalseg.training.TrainConfig`; ``loss`` is a
    :class:`~globalseg.losses.LossConfig` or ``None`` for the defaults.
    """

    def __init__(
        self,
        n_clusters: int = 12,
        embed_dim: int = 64,
        n_stages: int = 2,
        window: int = 16,
        stride: int = 4,
        layers_per_stage: int = 2,
        epochs_stage1: int = 30,
        epochs_stage2: int = 30,
        lr: float = 2e-4,
        weight_decay: float = 1e-4,
        batch_size: int = 32,
        epoch_fraction: float = 0.5,
        target_len: int = 256,
        kmeans_init: bool = True,
        loss: LossConfig | None = None,
        random_state: int = 0,
    ):
        self.n_clusters = n_clusters
        self.embed_dim = embed_dim
        self.n_stages = n_stages
        self.window = window
        self.stride = stride
        self.layers_per_stage = layers_per_stage
        self.epochs_stage1 = epochs_stage1
        self.epochs_stage2 = epochs_stage2
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epoch_fraction = epoch_fraction
        self.target_len = target_len
        self.kmeans_init = kmeans_init
        self.loss = loss
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        params = self.get_params()
        loss = params.pop("loss") or LossConfig()
        seed = params.pop("random_state")
        return TrainConfig(**params, seed=seed, loss=dataclasses.replace(loss))

    def fit(self, X, y):
        videos = check_video_list(X, name="X")
        y = check_activity_labels(y, len(videos))
        codes, labels = np.unique(y, return_inverse=True)
        records = [VideoRecord(f"video_{n:05d}", int(a) + 1, v) for n, (v, a) in enumerate(zip(videos, labels))]
        manifest = DatasetManifest(len(codes), 0, records, videos[0].shape[1])
        result = train(manifest, self.train_config())
        self.model_ = result.model
        self.drop_context_ = result.drop_context
        self.history_ = result.log
        self.classes_ = codes
        self.n_features_in_ = videos[0].shape[1]
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        videos = check_video_list(X, name="X")
        if videos[0].shape[1] != self.n_features_in_:
            raise ValueError(f"X has {videos[0].shape[1]} features, the embedder was fitted on {self.n_features_in_}")
        return embed_videos(self.model_, videos)


__all__ = ["TriadicEmbedder", "GlobalActionSegmenter"]
