"""Triadic training objective.

* ``video_loss`` - smoothing of per-frame log-probabilities within a video,
  with a wrap-around term comparing the last frame to the first.
* ``gtcc_loss`` / ``activity_loss`` - cycle-back regression between two
  videos of the same activity, gated by per-frame drop probabilities.
* ``global_loss`` - margin contrastive loss on pooled video representations.
* ``combined_loss`` - the two-branch mix used during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .model import DropContextOutput, EmbeddingOutput, p_drop, pooled_representation

SAME_ACTIVITY = 0
DIFFERENT_ACTIVITY = 1


@dataclass
class LossConfig:
    alpha: float = 0.15
    beta: float = 0.5
    margin: float = 1.0
    lambda_var: float = 1e-3
    # None resolves to 0.1 * embedding dim
    temperature: float | None = None
    cbr_floor: float = 1e-6
    cycle_depths: tuple[int, ...] = (1, 2)
    cyclic_term_enabled: bool = True
    use_clamped_mse: bool = False
    drop_from_adjusted: bool = True
    video_term_enabled: bool = True
    activity_term_enabled: bool = True

    def __post_init__(self):
        self.cycle_depths = tuple(int(d) for d in self.cycle_depths)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.margin <= 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.cbr_floor <= 0:
            raise ValueError(f"cbr_floor must be > 0, got {self.cbr_floor}")
        if not self.cycle_depths or min(self.cycle_depths) < 1:
            raise ValueError("cycle_depths must be a non-empty set of positive integers")
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def resolve_temperature(self, embed_dim: int) -> float:
        return self.temperature if self.temperature is not None else 0.1 * embed_dim


def video_loss(stage_logprobs: torch.Tensor, config: LossConfig | None = None) -> torch.Tensor:
    """Temporal smoothing of log-probabilities, ``stage_logprobs`` shaped ``(S, [B,] T, K)``.

    Returns one value per batch element. The normaliser ``1 / (S (T + 1))``
    is applied even though the sum has ``T`` terms per stage.
    """
    config = config or LossConfig()
    S, T = stage_logprobs.shape[0], stage_logprobs.shape[-2]

    def penalty(diff):
        if config.use_clamped_mse:
            return (diff**2).clamp(max=16.0).mean(-1)
        return diff.abs().mean(-1)

    total = penalty(stage_logprobs[..., 1:, :] - stage_logprobs[..., :-1, :]).sum(-1)
    if config.cyclic_term_enabled:
        total = total + penalty(stage_logprobs[..., -1, :] - stage_logprobs[..., 0, :])
    return total.sum(0) / (S * (T + 1))


def _affinity_logits(query: torch.Tensor, keys: torch.Tensor, temperature: float, gram=None) -> torch.Tensor:
    """``-||q - k||^2 / tau`` up to a per-query constant, which any softmax over keys ignores."""
    if gram is None:
        gram = query @ keys.transpose(-1, -2)
    return (2 * gram - (keys * keys).sum(-1).unsqueeze(-2)) / temperature


def _soft_neighbour(query, keys, temperature, gram=None):
    return torch.softmax(_affinity_logits(query, keys, temperature, gram), dim=-1) @ keys


def _regress_index(h: torch.Tensor, source: torch.Tensor, temperature: float, config: LossConfig) -> torch.Tensor:
    beta = torch.softmax(_affinity_logits(h, source, temperature), dim=-1)
    idx = torch.arange(source.shape[-2], dtype=source.dtype, device=source.device)
    offset = idx.unsqueeze(0) - idx.unsqueeze(1)  # offset[t, m] = m - t
    shift = beta @ idx - idx  # mu - t
    # variance about t keeps float32 accurate when beta is sharp
    var = (beta * offset**2).sum(-1) - shift**2
    var = var.clamp_min(0)
    eps = config.cbr_floor
    return shift**2 / (var + eps) + config.lambda_var * torch.log(var + eps)


def cycle_back_regression(
    source: torch.Tensor,
    target: torch.Tensor,
    config: LossConfig | None = None,
    *,
    t: int | None = None,
    depth: int = 1,
    temperature: float | None = None,
) -> torch.Tensor:
    """Cycle-back regression loss of every source frame (or only frame ``t``).

    A depth-``n`` cycle hops source -> target -> source ... through ``2n - 1``
    soft nearest neighbours, then regresses the source index it lands on:
    ``(t - mu)^2 / (sigma^2 + eps) + lambda * log(sigma^2 + eps)``.
    """
    config = config or LossConfig()
    if source.shape[-2] < 2 or target.shape[-2] < 2:
        raise ValueError("cycle-back regression needs at least two frames per video")
    tau = temperature if temperature is not None else config.resolve_temperature(source.shape[-1])
    h = source
    for hop in range(2 * depth - 1):
        h = _soft_neighbour(h, target if hop % 2 == 0 else source, tau)
    loss = _regress_index(h, source, tau, config)
    return loss if t is None else loss[..., t]


def multi_cycle_back_regression(
    source, target, config: LossConfig | None = None, *, temperature=None, gram=None
) -> torch.Tensor:
    """Mean of :func:`cycle_back_regression` over ``config.cycle_depths``.

    Deeper cycles extend shallower ones, so the hops are computed once.
    ``gram`` may carry the precomputed ``source @ target.T``.
    """
    config = config or LossConfig()
    if source.shape[-2] < 2 or target.shape[-2] < 2:
        raise ValueError("cycle-back regression needs at least two frames per video")
    tau = temperature if temperature is not None else config.resolve_temperature(source.shape[-1])
    depths = set(config.cycle_depths)
    h = _soft_neighbour(source, target, tau, gram)
    losses = []
    for depth in range(1, max(depths) + 1):
        if depth > 1:
            h = _soft_neighbour(_soft_neighbour(h, source, tau), target, tau)
        if depth in depths:
            losses.append(_regress_index(h, source, tau, config))
    return torch.stack(losses).mean(0)


def gtcc_loss(
    source_E: torch.Tensor,
    source_A: torch.Tensor,
    target_A: torch.Tensor,
    drop_prototype: torch.Tensor,
    config: LossConfig | None = None,
    *,
    drop_probs: torch.Tensor | None = None,
    gram: torch.Tensor | None = None,
) -> torch.Tensor:
    """Drop-gated alignment loss of the source video given the target.

    ``sum_t (1 - p_t) L_t + p_t / max(L_t, eps)`` where ``L_t`` is the
    multi-cycle regression loss of frame ``t`` and ``p_t`` its drop
    probability. ``drop_probs`` overrides the computed ``p_t``.
    """
    config = config or LossConfig()
    tau = config.resolve_temperature(source_A.shape[-1])
    if gram is None:
        gram = source_A @ target_A.transpose(-1, -2)
    L = multi_cycle_back_regression(source_A, target_A, config, temperature=tau, gram=gram)
    if drop_probs is None:
        rows = source_A if config.drop_from_adjusted else source_E
        drop_probs = p_drop(rows, target_A, drop_prototype, tau, gram=gram if config.drop_from_adjusted else None)
    per_frame = (1 - drop_probs) * L + drop_probs / L.clamp_min(config.cbr_floor)
    return per_frame.sum(-1)


@dataclass
class BranchOutput:
    """Everything one Siamese branch produces for a video."""

    stage_logprobs: torch.Tensor
    embeddings: torch.Tensor
    adjusted: torch.Tensor | None = None
    drop_prototype: torch.Tensor | None = None

    @classmethod
    def from_outputs(cls, emb: EmbeddingOutput, ctx: DropContextOutput | None = None):
        if ctx is None:
            return cls(emb.stage_logprobs, emb.embeddings)
        return cls(emb.stage_logprobs, emb.embeddings, ctx.adjusted, ctx.drop_prototype)


def activity_loss(i: BranchOutput, j: BranchOutput, config: LossConfig | None = None) -> torch.Tensor:
    if i.adjusted is None or j.adjusted is None:
        raise ValueError("activity loss needs drop-context outputs for both videos")
    gram = i.adjusted @ j.adjusted.transpose(-1, -2)
    forward_term = gtcc_loss(i.embeddings, i.adjusted, j.adjusted, i.drop_prototype, config, gram=gram)
    backward_term = gtcc_loss(
        j.embeddings, j.adjusted, i.adjusted, j.drop_prototype, config, gram=gram.transpose(-1, -2)
    )
    return forward_term + backward_term


def global_loss(E_i: torch.Tensor, E_j: torch.Tensor, y, config: LossConfig | None = None) -> torch.Tensor:
    """Contrastive margin loss; ``y = 0`` for same activity, ``1`` otherwise."""
    config = config or LossConfig()
    y = torch.as_tensor(y, dtype=E_i.dtype)
    if ((y != 0) & (y != 1)).any():
        raise ValueError("y must be 0 (same activity) or 1 (different activity)")
    d = torch.linalg.vector_norm(pooled_representation(E_i) - pooled_representation(E_j), dim=-1)
    return (1 - y) * d + y * torch.clamp(config.margin - d, min=0)


def combine(loss_global, loss_activity, loss_video_i, loss_video_j, y: int, stage: int, config: LossConfig):
    """Mix precomputed components; the activity term only enters same-activity pairs in stage 2."""
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    video = config.beta * (loss_video_i + loss_video_j) if config.video_term_enabled else 0.0
    if stage == 2 and y == SAME_ACTIVITY and config.activity_term_enabled:
        return config.alpha * loss_global + (1 - config.alpha) * loss_activity + video
    return loss_global + video


def combined_loss(i: BranchOutput, j: BranchOutput, y: int, stage: int, config: LossConfig | None = None):
    """Total training loss of one pair and its components (the activity term is 0 when unused)."""
    config = config or LossConfig()
    g = global_loss(i.embeddings, j.embeddings, y, config)
    uses_activity = stage == 2 and y == SAME_ACTIVITY and config.activity_term_enabled
    a = activity_loss(i, j, config) if uses_activity else torch.zeros((), dtype=g.dtype)
    v_i = video_loss(i.stage_logprobs, config)
    v_j = video_loss(j.stage_logprobs, config)
    total = combine(g, a, v_i, v_j, y, stage, config)
    return total, {"global": g, "activity": a, "video": v_i + v_j}
