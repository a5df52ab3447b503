"""Experiment drivers shared by the command line and the acceptance suite.

All drivers take the same inputs (a :class:`RunConfig` and a list of
sequences) and run the shared pipeline: stratified split, temporal
resampling, feature assembly, training and evaluation. Every model in one
call sees the identical split, so comparisons are paired.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .baselines import cnn_baseline, gnb_baseline, knn_baseline, mlp_baseline
from .config import RunConfig
from .model import DualStreamModel, ModelConfig
from .representation import STSSequence
from .trainer import RunReport, TensorDataset, prepare, split_dataset, train

ABLATIONS = {
    "gating": "enable_gating",
    "structural": "enable_structural_stream",
    "temporal": "enable_temporal_stream",
}
VARIANTS = ("full", "no_gating", "no_structural", "no_temporal")
BASELINE_METHODS = ("dual_stream", "cnn", "mlp", "gnb", "knn")


@dataclass
class PreparedData:
    train: TensorDataset
    test: TensorDataset
    m: int
    n_features: int
    n_classes: int


def prepare_split(config: RunConfig, sequences: Sequence[STSSequence], n_classes: int | None = None) -> PreparedData:
    train_seqs, test_seqs = split_dataset(sequences, config.train.train_fraction, config.train.seed)
    length = config.train.length
    train_data, test_data = prepare(train_seqs, length), prepare(test_seqs, length)
    topology = sequences[0].topology
    if n_classes is None:
        n_classes = max(s.label for s in sequences) + 1
    return PreparedData(train_data, test_data, topology.m, topology.n_features, n_classes)


def model_config(config: RunConfig, data: PreparedData, ablate: Sequence[str] = ()) -> ModelConfig:
    flags = {ABLATIONS[name]: False for name in ablate}
    return config.model_config(data.m, config.train.length, data.n_features, data.n_classes, **flags)


@dataclass
class TrainResult:
    model: DualStreamModel
    report: RunReport


def train_model(config: RunConfig, data: PreparedData, ablate: Sequence[str] = ()) -> TrainResult:
    cfg = model_config(config, data, ablate)
    model = DualStreamModel(cfg)
    report = train(model, data.train, config.train, data.n_classes, data.test)
    report.config = {**config.to_dict(), "model": cfg.to_dict(), "ablate": sorted(ablate)}
    return TrainResult(model, report)


def variant_ablations(variant: str) -> tuple[str, ...]:
    return () if variant == "full" else (variant.removeprefix("no_"),)


def worker_count(jobs: int) -> int:
    """Workers allowed by ``STS_THREADS`` (default 1), never more than ``jobs``."""
    raw = os.environ.get("STS_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        cap = 1
    return max(1, min(cap, jobs))


def _run_variant(args: tuple[RunConfig, PreparedData, str]) -> tuple[str, TrainResult]:
    config, data, variant = args
    return variant, train_model(config, data, variant_ablations(variant))


def run_ablation(config: RunConfig, data: PreparedData) -> dict[str, TrainResult]:
    """Full model plus the three single-component ablations, identical seeds and split."""
    jobs = [(config, data, v) for v in VARIANTS]
    workers = worker_count(len(jobs))
    if workers == 1:
        results = dict(map(_run_variant, jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_variant, jobs))
    return {v: results[v] for v in VARIANTS}


def _run_method(args: tuple[RunConfig, PreparedData, str]) -> tuple[str, float, float]:
    config, data, method = args
    start = time.perf_counter()
    if method == "dual_stream":
        acc = train_model(config, data).report.test_acc
    elif method == "cnn":
        acc = cnn_baseline(data.train, data.test, config.train, data.n_classes)
    elif method == "mlp":
        acc = mlp_baseline(data.train, data.test, config.train, data.n_classes)
    elif method == "gnb":
        acc = gnb_baseline(data.train, data.test, data.n_classes)
    else:
        acc = knn_baseline(data.train, data.test)
    return method, float(acc), time.perf_counter() - start


def run_baselines(
    config: RunConfig, data: PreparedData, methods: Sequence[str] = BASELINE_METHODS
) -> dict[str, float]:
    """Test accuracy of each method on the one shared split."""
    jobs = [(config, data, m) for m in methods]
    workers = worker_count(len(jobs))
    if workers == 1:
        rows = list(map(_run_method, jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_method, jobs))
    return {method: acc for method, acc, _ in rows}


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """Copy of ``config`` whose data, split, shuffle and init seeds all equal ``seed``."""
    return RunConfig(
        synth=replace(config.synth, seed=seed),
        model={**config.model, "seed": seed},
        train=replace(config.train, seed=seed),
        paths=config.paths,
    )
