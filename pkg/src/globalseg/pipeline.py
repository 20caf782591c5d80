"""In-memory synth -> train -> segment -> eval run."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

from .config import RunConfig
from .dataio import DatasetManifest, generate_synthetic
from .decode import Segmentation, segment_dataset
from .metrics import MetricReport, evaluate_manifest
from .training import TrainResult, train


@dataclass
class PipelineResult:
    manifest: DatasetManifest
    training: TrainResult
    segmentation: Segmentation
    report: MetricReport
    seconds: float

    @property
    def mof(self) -> float:
        return self.report.mof


def resolve_background_fraction(config: RunConfig, manifest: DatasetManifest) -> float:
    bg = config.decode.background_fraction
    if bg is None:
        bg = manifest.background_fraction() if manifest.has_ground_truth else 0.0
    return bg


def run_pipeline(config: RunConfig, manifest: DatasetManifest | None = None, *, untrained: bool = False) -> PipelineResult:
    """Run every step with ``config``.

    ``untrained=True`` skips optimisation and k-means initialisation, so the
    decoder sees the randomly initialised backbone built from the same seed.
    """
    start = time.perf_counter()
    manifest = manifest if manifest is not None else generate_synthetic(config.synth)
    train_config = config.effective_train_config()
    if untrained:
        train_config = dataclasses.replace(train_config, epochs_stage1=0, epochs_stage2=0, kmeans_init=False)
    result = train(manifest, train_config)
    dec = config.decode
    segmentation = segment_dataset(
        manifest,
        result.model,
        dec.n_pseudo_activities,
        dec.n_actions,
        background_fraction=resolve_background_fraction(config, manifest),
        vocab_size=dec.vocab_size,
        n_init=dec.n_init,
        seed=dec.seed,
    )
    report = evaluate_manifest(manifest, segmentation, config.eval, header={"run_config": config.dumps()})
    return PipelineResult(manifest, result, segmentation, report, time.perf_counter() - start)
