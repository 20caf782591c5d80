"""Siamese trunk: a multi-stage windowed/strided attention encoder and the
drop-context network used for alignment.

All modules accept ``(T, d)`` or batched ``(B, T, d)`` inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.cluster import KMeans
from torch import nn

CHECKPOINT_FORMAT = "globalseg-checkpoint"
CHECKPOINT_VERSION = 1

# finite fill value for masked logits; -inf turns all-masked rows into NaN
_MASK_FILL = -1e9


@dataclass
class BackboneConfig:
    input_dim: int
    n_clusters: int
    n_stages: int = 2
    embed_dim: int = 64
    window: int = 16
    stride: int = 4
    layers_per_stage: int = 2

    def __post_init__(self):
        if self.n_stages < 1:
            raise ValueError("n_stages must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be >= 2")
        if self.input_dim < 1 or self.embed_dim < 1 or self.layers_per_stage < 1:
            raise ValueError("input_dim, embed_dim and layers_per_stage must be positive")


class EmbeddingOutput(NamedTuple):
    stage_logprobs: torch.Tensor  # (S, [B,] T, K)
    embeddings: torch.Tensor  # ([B,] T, e)


class DropContextOutput(NamedTuple):
    adjusted: torch.Tensor
    drop_prototype: torch.Tensor


def _attend(q, k, v, key_mask=None):
    if key_mask is None:
        return F.scaled_dot_product_attention(q, k, v)
    bias = torch.zeros(key_mask.shape, dtype=q.dtype, device=q.device).masked_fill(~key_mask, _MASK_FILL)
    return F.scaled_dot_product_attention(q, k, v, attn_mask=bias.unsqueeze(-2))


class _GroupedAttention(nn.Module):
    """Single-head self-attention restricted to groups of frames, with residual + LayerNorm."""

    def __init__(self, dim: int, size: int):
        super().__init__()
        self.size = size
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)

    def _group(self, h, valid):
        raise NotImplementedError

    def _ungroup(self, h):
        raise NotImplementedError

    def forward(self, x):
        B, T, e = x.shape
        pad = (-T) % self.size
        h = F.pad(x, (0, 0, 0, pad))
        valid = torch.arange(T + pad, device=x.device) < T
        g, mask = self._group(h, valid)
        q, k, v = self.qkv(g).chunk(3, dim=-1)
        if pad == 0:
            mask = None
        out = self._ungroup(_attend(q, k, v, mask))[:, :T]
        return self.norm(x + self.out(out))


class WindowedAttention(_GroupedAttention):
    """Attention inside non-overlapping windows of ``size`` consecutive frames."""

    def _group(self, h, valid):
        B, Tp, e = h.shape
        n = Tp // self.size
        return h.view(B, n, self.size, e), valid.view(n, self.size)

    def _ungroup(self, h):
        B, n, w, e = h.shape
        return h.reshape(B, n * w, e)


class StridedAttention(_GroupedAttention):
    """Attention among frames sharing the same index modulo ``size`` (long-range, sparse)."""

    def _group(self, h, valid):
        B, Tp, e = h.shape
        n = Tp // self.size
        return h.view(B, n, self.size, e).transpose(1, 2), valid.view(n, self.size).T

    def _ungroup(self, h):
        B, g, n, e = h.shape
        return h.transpose(1, 2).reshape(B, n * g, e)


class ContextBlock(nn.Module):
    def __init__(self, dim: int, window: int, stride: int):
        super().__init__()
        self.local = WindowedAttention(dim, window)
        self.long = StridedAttention(dim, stride)

    def forward(self, x):
        return self.long(self.local(x))


class Stage(nn.Module):
    def __init__(self, in_dim: int, config: BackboneConfig):
        super().__init__()
        e = config.embed_dim
        self.proj = nn.Linear(in_dim, e)
        self.blocks = nn.ModuleList(
            ContextBlock(e, config.window, config.stride) for _ in range(config.layers_per_stage)
        )
        self.head = nn.Linear(e, config.n_clusters)

    def forward(self, x):
        h = self.proj(x)
        for block in self.blocks:
            h = block(h)
        return h, self.head(h)


def _check_finite(h: torch.Tensor, stage: int):
    if not torch.isfinite(h).all():
        bad = torch.nonzero(~torch.isfinite(h))[0].tolist()
        raise FloatingPointError(f"non-finite activation in stage {stage} at frame {bad[-2]}")


class TemporalEncoder(nn.Module):
    """Multi-stage encoder; stage ``s > 1`` refines the softmax output of stage ``s - 1``."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.stages = nn.ModuleList(
            Stage(config.input_dim if s == 0 else config.n_clusters, config) for s in range(config.n_stages)
        )

    @property
    def head(self) -> nn.Linear:
        return self.stages[-1].head

    def forward(self, features: torch.Tensor) -> EmbeddingOutput:
        squeeze = features.dim() == 2
        x = features.unsqueeze(0) if squeeze else features
        if x.shape[-1] != self.config.input_dim:
            raise ValueError(f"expected {self.config.input_dim} feature dims, got {x.shape[-1]}")
        logprobs = []
        h = None
        for s, stage in enumerate(self.stages, start=1):
            h, logits = stage(x)
            _check_finite(h, s)
            lp = torch.log_softmax(logits, dim=-1)
            logprobs.append(lp)
            x = lp.exp()
        stacked = torch.stack(logprobs)
        if squeeze:
            return EmbeddingOutput(stacked[:, 0], h[0])
        return EmbeddingOutput(stacked, h)


def forward(model: TemporalEncoder, features) -> EmbeddingOutput:
    """Run the encoder on a ``(T, d)`` feature matrix (numpy or tensor)."""
    param = next(model.parameters())
    x = torch.as_tensor(np.asarray(features) if not torch.is_tensor(features) else features)
    return model(x.to(dtype=param.dtype))


@torch.no_grad()
def embed_videos(model: TemporalEncoder, videos) -> list[np.ndarray]:
    """Final-stage embeddings of each video as float64 numpy arrays."""
    model.eval()
    return [forward(model, v).embeddings.double().numpy() for v in videos]


class DropContext(nn.Module):
    """Frame-wise 4-layer feed-forward map with a residual path, plus a drop prototype."""

    def __init__(self, dim: int, n_layers: int = 4, zero_init_last: bool = True):
        super().__init__()
        layers = []
        for i in range(n_layers):
            layers.append(nn.Linear(dim, dim))
            if i < n_layers - 1:
                layers.append(nn.GELU())
        self.net = nn.Sequential(*layers)
        if zero_init_last:
            nn.init.zeros_(self.net[-1].weight)
            nn.init.zeros_(self.net[-1].bias)
        self.drop_prototype = nn.Parameter(torch.randn(dim))

    def forward(self, E: torch.Tensor) -> DropContextOutput:
        adjusted = E + self.net(E)
        _check_finite(adjusted, 0)
        return DropContextOutput(adjusted, self.drop_prototype)


def drop_context(c: DropContext, E: torch.Tensor) -> DropContextOutput:
    return c(E)


def squared_distances(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Pairwise squared Euclidean distances between rows, broadcasting leading dims."""
    d = (u * u).sum(-1, keepdim=True) - 2 * u @ v.transpose(-1, -2) + (v * v).sum(-1).unsqueeze(-2)
    return d.clamp_min(0)


def p_drop(
    u: torch.Tensor, A_j: torch.Tensor, drop_prototype: torch.Tensor, temperature: float, *, gram=None
) -> torch.Tensor:
    """Probability mass on the prototype slot of a softmax over negative squared distances.

    ``u`` may be one frame ``(e,)`` or many ``(..., T_i, e)``; ``A_j`` is
    ``(..., T_j, e)``. ``gram`` may carry the precomputed ``u @ A_j.T``.
    """
    single = u.dim() == 1
    if single:
        u = u.unsqueeze(0)
    if gram is None:
        gram = u @ A_j.transpose(-1, -2)
    # ||u||^2 is shared by every slot and cancels in the softmax
    frame_scores = 2 * gram - (A_j * A_j).sum(-1).unsqueeze(-2)
    proto_scores = (2 * u @ drop_prototype - drop_prototype @ drop_prototype).unsqueeze(-1)
    scores = torch.cat([frame_scores, proto_scores.expand(*frame_scores.shape[:-1], 1)], dim=-1)
    p = torch.softmax(scores / temperature, dim=-1)[..., -1]
    return p[0] if single else p


def pooled_representation(E: torch.Tensor) -> torch.Tensor:
    """Temporal mean of the rows, L2-normalised; a zero mean stays zero (with a warning)."""
    mean = E.mean(dim=-2)
    norm = torch.linalg.vector_norm(mean, dim=-1, keepdim=True)
    if (norm == 0).any():
        warnings.warn("pooled representation of an all-zero embedding; returning zeros", RuntimeWarning)
    return mean / norm.clamp_min(1e-12)


def kmeans(X: np.ndarray, k: int, seed: int, n_init: int = 1) -> KMeans:
    """k-means++ with at most 100 Lloyd iterations and tol 1e-4.

    scikit-learn relocates empty clusters to the points farthest from their
    centroids, so this never fails on degenerate data.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < k:
        raise ValueError(f"k-means needs at least {k} points, got {X.shape[0]}")
    with warnings.catch_warnings():
        # duplicate points leave fewer distinct clusters than k
        warnings.filterwarnings("ignore", message="Number of distinct clusters")
        return KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=100, tol=1e-4, random_state=seed).fit(X)


@torch.no_grad()
def init_cluster_head_kmeans(model: TemporalEncoder, videos, seed: int = 0) -> TemporalEncoder:
    """Set the final-stage head rows to k-means centroids of all frame embeddings (bias 0)."""
    frames = np.concatenate(embed_videos(model, videos))
    km = kmeans(frames, model.config.n_clusters, seed)
    head = model.head
    head.weight.copy_(torch.as_tensor(km.cluster_centers_, dtype=head.weight.dtype))
    head.bias.zero_()
    return model


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: TemporalEncoder, drop_ctx: DropContext | None = None, **metadata) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "backbone": model.state_dict(),
        "drop_context": None if drop_ctx is None else drop_ctx.state_dict(),
        "metadata": metadata,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> tuple[TemporalEncoder, DropContext | None, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if "version" not in payload:
        raise ValueError(f"{path} has no version field")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload['version']}")
    model = TemporalEncoder(BackboneConfig(**payload["config"]))
    model.load_state_dict(payload["backbone"])
    drop_ctx = None
    if payload["drop_context"] is not None:
        drop_ctx = DropContext(model.config.embed_dim)
        drop_ctx.load_state_dict(payload["drop_context"])
    return model, drop_ctx, payload.get("metadata", {})
