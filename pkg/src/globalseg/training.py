"""Pair construction from activity labels and the two-stage training loop."""

from __future__ import annotations

import csv
import itertools
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataio import DatasetManifest, downsample
from .losses import DIFFERENT_ACTIVITY, SAME_ACTIVITY, BranchOutput, LossConfig, activity_loss, video_loss
from .model import (
    BackboneConfig,
    DropContext,
    TemporalEncoder,
    init_cluster_head_kmeans,
    pooled_representation,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "stage", "loss_total", "loss_global", "loss_activity", "loss_video")


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class PairSet:
    same_pairs: list[tuple[int, int]]
    diff_pairs: list[tuple[int, int]]

    def __len__(self):
        return len(self.same_pairs) + len(self.diff_pairs)


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs_stage1: int = 30
    epochs_stage2: int = 30
    epoch_fraction: float = 0.5
    seed: int = 0
    kmeans_init: bool = True
    target_len: int = 256
    resample_each_epoch: bool = False
    n_clusters: int = 12
    n_stages: int = 2
    embed_dim: int = 64
    window: int = 16
    stride: int = 4
    layers_per_stage: int = 2
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if not 0 < self.epoch_fraction <= 1:
            raise ValueError(f"epoch_fraction must lie in (0, 1], got {self.epoch_fraction}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ValueError("epoch counts must be >= 0")

    def backbone(self, input_dim: int) -> BackboneConfig:
        return BackboneConfig(
            input_dim=input_dim,
            n_clusters=self.n_clusters,
            n_stages=self.n_stages,
            embed_dim=self.embed_dim,
            window=self.window,
            stride=self.stride,
            layers_per_stage=self.layers_per_stage,
        )


def _diagonal_order(a_videos, b_videos):
    # walks the |A| x |B| grid diagonal by diagonal so early picks cover every video
    for shift in range(len(b_videos)):
        for i, va in enumerate(a_videos):
            yield va, b_videos[(i + shift) % len(b_videos)]


def build_pairs(activity_labels, seed: int = 0) -> PairSet:
    """All same-activity pairs plus an equally sized, activity-balanced set of different-activity pairs."""
    if isinstance(activity_labels, DatasetManifest):
        activity_labels = activity_labels.activity_labels
    labels = np.asarray(activity_labels)
    by_activity = defaultdict(list)
    for idx, a in enumerate(labels.tolist()):
        by_activity[a].append(idx)
    if len(by_activity) < 2:
        raise ValueError("need at least two activities for the contrastive branch")
    for a, members in sorted(by_activity.items()):
        if len(members) == 1:
            warnings.warn(
                f"activity {a} has a single video; it only takes part in different-activity pairs", UserWarning
            )
    same = [pair for _, m in sorted(by_activity.items()) for pair in itertools.combinations(m, 2)]
    if not same:
        raise ValueError("no activity has two videos; same-activity pairs are impossible")

    rng = np.random.default_rng(seed)
    groups = []
    for a, b in itertools.combinations(sorted(by_activity), 2):
        A = list(rng.permutation(by_activity[a]))
        B = list(rng.permutation(by_activity[b]))
        groups.append([(int(min(p)), int(max(p))) for p in _diagonal_order(A, B)])

    # spread the quota evenly over activity pairs, handing leftovers to groups with room
    quota = [0] * len(groups)
    remaining = len(same)
    while remaining > 0:
        open_groups = [g for g in range(len(groups)) if quota[g] < len(groups[g])]
        if not open_groups:
            warnings.warn(f"only {sum(quota)} different-activity pairs exist for {len(same)} same pairs")
            break
        share, extra = divmod(remaining, len(open_groups))
        for rank, g in enumerate(rng.permutation(open_groups)):
            take = min(share + (rank < extra), len(groups[g]) - quota[g])
            quota[g] += take
            remaining -= take
    diff = [pair for g, q in zip(groups, quota) for pair in g[:q]]
    return PairSet(same, diff)


def sample_epoch(pairs: PairSet, config: TrainConfig, epoch: int) -> list[list[tuple[int, int, int]]]:
    """Batches of ``(i, j, y)`` drawn from ``epoch_fraction`` of each pair kind, same and different interleaved."""
    rng = np.random.default_rng([config.seed, epoch])

    def draw(pool, y):
        n = int(round(config.epoch_fraction * len(pool)))
        chosen = rng.choice(len(pool), size=n, replace=False)
        return [(*pool[k], y) for k in chosen]

    same = draw(pairs.same_pairs, SAME_ACTIVITY)
    diff = draw(pairs.diff_pairs, DIFFERENT_ACTIVITY)
    merged = [p for duo in itertools.zip_longest(same, diff) for p in duo if p is not None]
    return [merged[k : k + config.batch_size] for k in range(0, len(merged), config.batch_size)]


@dataclass
class TrainResult:
    model: TemporalEncoder
    drop_context: DropContext | None
    log: list[dict]
    config: TrainConfig


def _forward_videos(model, drop_ctx, clips, ids, loss_config):
    """Run each distinct video once, batching videos of equal length.

    Per-video smoothing losses and pooled embeddings are computed on the
    stacked batch so autograd never scatters many small slices back.
    """
    by_len = defaultdict(list)
    for v in ids:
        by_len[clips[v].shape[0]].append(v)
    outputs, video, pooled = {}, {}, {}
    for group in by_len.values():
        emb = model(torch.stack([clips[v] for v in group]))
        ctx = drop_ctx(emb.embeddings) if drop_ctx is not None else None
        v_loss = video_loss(emb.stage_logprobs, loss_config)
        p = pooled_representation(emb.embeddings)
        for k, v in enumerate(group):
            outputs[v] = (emb, ctx, k)
            video[v] = v_loss[k]
            pooled[v] = p[k]
    return outputs, video, pooled


def _gather(outputs, videos) -> BranchOutput:
    """Stack several equal-length videos with one indexing op per tensor."""
    emb, ctx, _ = outputs[videos[0]]
    idx = torch.tensor([outputs[v][2] for v in videos])
    return BranchOutput(None, emb.embeddings[idx], ctx.adjusted[idx], ctx.drop_prototype)


def _activity_terms(outputs, same_pairs, loss_config):
    """Activity loss of each same-activity pair, stacking pairs of equal shape."""
    # videos of one length share a forward batch, so a shape key identifies both batches
    by_shape = defaultdict(list)
    for k, (i, j) in enumerate(same_pairs):
        by_shape[(outputs[i][0].embeddings.shape[1], outputs[j][0].embeddings.shape[1])].append(k)
    result = [None] * len(same_pairs)
    for members in by_shape.values():
        stacked_i = _gather(outputs, [same_pairs[k][0] for k in members])
        stacked_j = _gather(outputs, [same_pairs[k][1] for k in members])
        values = activity_loss(stacked_i, stacked_j, loss_config)
        for n, k in enumerate(members):
            result[k] = values[n]
    return result


def batch_loss(model, drop_ctx, clips, batch, stage: int, loss_config: LossConfig, video_ids=None):
    """Mean combined loss over a batch of pairs, plus summed components for logging.

    Equivalent to averaging :func:`combined_loss` over the batch, with the
    per-video and per-pair terms evaluated in stacked form.
    """
    ids = sorted({v for i, j, _ in batch for v in (i, j)})
    outputs, video, pooled = _forward_videos(model, drop_ctx, clips, ids, loss_config)

    i_idx = [i for i, _, _ in batch]
    j_idx = [j for _, j, _ in batch]
    y = torch.tensor([yy for _, _, yy in batch], dtype=torch.float32)
    d = torch.linalg.vector_norm(
        torch.stack([pooled[i] for i in i_idx]) - torch.stack([pooled[j] for j in j_idx]), dim=-1
    )
    g = (1 - y) * d + y * torch.clamp(loss_config.margin - d, min=0)
    v = torch.stack([video[i] + video[j] for i, j in zip(i_idx, j_idx)])

    uses_activity = [stage == 2 and yy == SAME_ACTIVITY and loss_config.activity_term_enabled for *_, yy in batch]
    a = torch.zeros(len(batch))
    same = [(i, j) for (i, j, _), use in zip(batch, uses_activity) if use]
    if same:
        terms = iter(_activity_terms(outputs, same, loss_config))
        a = torch.stack([next(terms) if use else torch.zeros(()) for use in uses_activity])
    use = torch.tensor(uses_activity)
    alpha = loss_config.alpha
    total = torch.where(use, alpha * g + (1 - alpha) * a, g)
    if loss_config.video_term_enabled:
        total = total + loss_config.beta * v

    if not torch.isfinite(total).all():
        k = int(torch.nonzero(~torch.isfinite(total))[0])
        name = (lambda n: video_ids[n]) if video_ids else (lambda n: n)
        i, j, yy = batch[k]
        raise TrainingDivergedError(
            f"non-finite loss for pair ({name(i)}, {name(j)}), y={yy}, stage {stage}: "
            f"global={float(g[k]):.4g}, activity={float(a[k]):.4g}, video={float(v[k]):.4g}"
        )
    sums = {
        "total": float(total.detach().sum()),
        "global": float(g.detach().sum()),
        "activity": float(a.detach().sum()),
        "video": float(v.detach().sum()),
    }
    return total.mean(), sums


def _write_log(path: Path, log: list[dict], header: str | None):
    with open(path, "w", newline="") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(log)


def train(
    manifest: DatasetManifest,
    config: TrainConfig | None = None,
    *,
    out_dir=None,
    log_header: str | None = None,
) -> TrainResult:
    """Two-stage training: global + video losses first, then the full objective with the drop-context net."""
    config = config or TrainConfig()
    torch.manual_seed(config.seed)
    model = TemporalEncoder(config.backbone(manifest.feature_dim))
    out_dir = Path(out_dir) if out_dir is not None else None

    def clips_for(epoch):
        clips = []
        for idx, rec in enumerate(manifest.records):
            key = [config.seed, idx, epoch] if config.resample_each_epoch else [config.seed, idx]
            feats, _ = downsample(rec, config.target_len, seed=int(np.random.default_rng(key).integers(2**31)))
            clips.append(torch.as_tensor(feats, dtype=torch.float32))
        return clips

    clips = clips_for(0)
    if config.kmeans_init:
        init_cluster_head_kmeans(model, [c.numpy() for c in clips], seed=config.seed)

    pairs = build_pairs(manifest.activity_labels, seed=config.seed)
    video_ids = [r.video_id for r in manifest.records]
    log: list[dict] = []
    drop_ctx = None
    epoch = 0
    for stage, n_epochs in ((1, config.epochs_stage1), (2, config.epochs_stage2)):
        if n_epochs == 0:
            continue
        if stage == 2:
            torch.manual_seed(config.seed + 1)
            drop_ctx = DropContext(config.embed_dim)
        params = list(model.parameters()) + ([] if drop_ctx is None else list(drop_ctx.parameters()))
        optimizer = torch.optim.Adam(params, lr=config.lr, weight_decay=config.weight_decay)
        model.train()
        for _ in range(n_epochs):
            if config.resample_each_epoch:
                clips = clips_for(epoch)
            sums = defaultdict(float)
            n_pairs = 0
            for batch in sample_epoch(pairs, config, epoch):
                optimizer.zero_grad()
                loss, parts = batch_loss(model, drop_ctx, clips, batch, stage, config.loss, video_ids)
                loss.backward()
                optimizer.step()
                for k, v in parts.items():
                    sums[k] += v
                n_pairs += len(batch)
            row = {"epoch": epoch, "stage": stage}
            for k in ("total", "global", "activity", "video"):
                row[f"loss_{k}"] = sums[k] / max(n_pairs, 1)
            log.append(row)
            logger.info("epoch %d stage %d loss %.4f", epoch, stage, row["loss_total"])
            epoch += 1
        if out_dir is not None:
            save_checkpoint(out_dir / f"stage{stage}.pt", model, drop_ctx, stage=stage, epoch=epoch)
    model.eval()
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.pt", model, drop_ctx, stage="final", epoch=epoch)
        _write_log(out_dir / "train_log.csv", log, log_header)
    return TrainResult(model, drop_ctx, log, config)
