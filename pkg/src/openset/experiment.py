"""End-to-end runs: partition, fit, score, evaluate, export.

A *cell* is one (method, fusion) pair. :func:`run_grid` fits every model
once, scores all probes (probe set O3) per cell, and evaluates each
requested probe set on the matching rows. Cells are independent and may
run on worker threads; outputs are assembled in a fixed order, so the
written files do not depend on scheduling.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import evm, io
from .core import Dataset, OpenSetError, ScoreMatrix
from .evaluation import (
    DEFAULT_FAR_TARGETS,
    ThresholdPolicy,
    cmc_curve,
    dir_at,
    dir_curve,
    far_at,
    roc_curve,
    threshold_for_far,
)
from .evm import EvmConfig, Fusion
from .protocol import (
    IdentityCategory,
    ProbeSetId,
    ProtocolPartition,
    build_partition,
    categorize_identities,
    gallery_templates,
    training_set,
)
from .scoring import Method, ScoringMethod, score_all
from .subspace import DEFAULT_RETENTION, fit_subspace

log = logging.getLogger(__name__)


class StageError(OpenSetError):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: OpenSetError):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@dataclass(frozen=True)
class RunConfig:
    method: Method = Method.EVM
    fusion: Fusion = Fusion.AVG
    alpha: float = evm.DEFAULT_ALPHA
    tail: int = evm.DEFAULT_TAIL_SIZE
    pca_retention: float = DEFAULT_RETENTION
    probe_set: ProbeSetId = ProbeSetId.O3
    rank: int = 1
    seed: int = 0
    far_targets: tuple[float, ...] = DEFAULT_FAR_TARGETS
    threshold_policy: ThresholdPolicy = ThresholdPolicy.STRICT
    scale_query: bool = True
    features: Path | None = None
    out_dir: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "fusion", Fusion(self.fusion))
        object.__setattr__(self, "probe_set", ProbeSetId(self.probe_set))
        object.__setattr__(self, "threshold_policy", ThresholdPolicy(self.threshold_policy))

    @property
    def evm_config(self) -> EvmConfig:
        return EvmConfig(self.alpha, self.tail, self.fusion, self.scale_query)


class Context:
    """A dataset with its partition and the derived gallery/training/probes."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.partition: ProtocolPartition = _stage("protocol", build_partition, dataset)
        self.gallery = gallery_templates(dataset, self.partition)
        self.training = training_set(dataset, self.partition)
        self.probes = dataset.select(self.partition.probe_set(ProbeSetId.O3)).records

    def summary(self) -> dict:
        cats = categorize_identities(self.dataset)
        return {
            "records": len(self.dataset),
            "dimension": self.dataset.dimension,
            "identities": {
                c.value: sum(1 for v in cats.values() if v is c) for c in IdentityCategory
            },
            **self.partition.counts(),
        }


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except OpenSetError as exc:
        raise StageError(name, exc) from exc


def fit_method(ctx: Context, cfg: RunConfig) -> ScoringMethod:
    if cfg.method is Method.COS:
        return ScoringMethod(Method.COS, cfg.fusion)
    if cfg.method is Method.LDA:
        model = _stage("fit-subspace", fit_lda_subspace, ctx, cfg.pca_retention)
        return ScoringMethod(Method.LDA, cfg.fusion, model)
    model = _stage("fit-evm", evm.train, ctx.gallery, ctx.training, cfg.evm_config)
    return ScoringMethod(Method.EVM, cfg.fusion, model)


def fit_lda_subspace(ctx: Context, retention: float):
    labels = [ctx.partition.training_label(r.key) for r in ctx.training]
    return fit_subspace(labels, [r.feature for r in ctx.training], retention)


def evaluate(
    scores: ScoreMatrix, partition: ProtocolPartition, probe_set: ProbeSetId, cfg: RunConfig
) -> tuple[dict, dict]:
    """Summary dict and curves for one probe set. ``scores`` may hold extra rows."""
    probe_set = ProbeSetId(probe_set)
    rows = scores.rows(partition.probe_set(probe_set))
    cmc = cmc_curve(rows, partition)
    summary = {
        "probe_set": probe_set.value,
        "probes": len(rows.probe_keys),
        "known_probes": len(partition.probes_known),
        "rank": cfg.rank,
        "rank1": cmc[0].y,
        "cmc_at_rank": cmc[min(cfg.rank, len(cmc)) - 1].y,
    }
    curves = {}
    if probe_set is ProbeSetId.C:
        curves["cmc"] = cmc
        curves["roc"] = roc_curve(rows, partition)
        return summary, curves

    unknown = partition.unknown_keys(probe_set)
    curve = dir_curve(rows, partition, probe_set, cfg.rank, cfg.threshold_policy)
    curves["dir"] = curve
    summary["unknown_probes"] = len(unknown)
    summary["dir_at_far_1"] = curve[-1].y
    targets = []
    for target in cfg.far_targets:
        theta = threshold_for_far(rows, unknown, target, cfg.threshold_policy)
        entry = {"far_target": target, "threshold": theta, "absent": theta is None}
        if theta is not None:
            entry["far"] = far_at(rows, unknown, theta)
            entry["dir"] = dir_at(rows, partition, theta, cfg.rank)
        targets.append(entry)
    summary["far_targets"] = targets
    return summary, curves


def write_curves(out: Path, curves: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    writers = {"cmc": io.write_cmc, "roc": io.write_roc, "dir": io.write_dir}
    for name, curve in curves.items():
        writers[name](out / f"{name}.csv", curve)


def _config_dict(cfg: RunConfig) -> dict:
    return {
        "alpha": cfg.alpha,
        "tail": cfg.tail,
        "pca_retention": cfg.pca_retention,
        "rank": cfg.rank,
        "far_targets": list(cfg.far_targets),
        "threshold_policy": cfg.threshold_policy.value,
        "scale_query": cfg.scale_query,
    }


def _save_model(path: Path, method: ScoringMethod) -> None:
    if method.method is Method.LDA:
        io.write_subspace(path, method.model)
    elif method.method is Method.EVM:
        io.write_evm(path, method.model)


def run_experiment(cfg: RunConfig, dataset: Dataset | None = None) -> dict:
    """One method/fusion on one probe set; writes CSVs and summary.json to ``cfg.out_dir``."""
    if dataset is None:
        dataset = _stage("read", io.read_feature_table, cfg.features)
    ctx = Context(dataset)
    method = fit_method(ctx, cfg)
    probes = ctx.dataset.select(ctx.partition.probe_set(cfg.probe_set)).records
    scores = _stage("score", score_all, method, ctx.gallery, probes)
    summary, curves = _stage("evaluate", evaluate, scores, ctx.partition, cfg.probe_set, cfg)
    report = {
        "method": cfg.method.value,
        "fusion": cfg.fusion.value,
        "config": _config_dict(cfg),
        "partition": ctx.summary(),
        **summary,
    }
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        write_curves(out, curves)
        io.write_score_matrix(out / "scores.csv", scores)
        if method.method is not Method.COS:
            _save_model(out / f"{method.method.value}_{method.fusion.value}.json", method)
        io.write_json(out / "summary.json", report)
    return report


def run_grid(
    dataset: Dataset,
    out_dir: Path | str | None,
    cfg: RunConfig = RunConfig(),
    methods: Sequence[Method | str] = tuple(Method),
    fusions: Sequence[Fusion | str] = tuple(Fusion),
    probe_sets: Sequence[ProbeSetId | str] = tuple(ProbeSetId),
    workers: int | None = None,
) -> dict:
    """Every method x fusion cell on every probe set."""
    methods = [Method(m) for m in methods]
    fusions = [Fusion(f) for f in fusions]
    probe_sets = [ProbeSetId(p) for p in probe_sets]
    workers = evm.worker_count() if workers is None else workers
    ctx = Context(dataset)

    subspace = None
    if Method.LDA in methods:
        subspace = _stage("fit-subspace", fit_lda_subspace, ctx, cfg.pca_retention)
    evm_models = {}
    if Method.EVM in methods:
        for f in fusions:
            c = replace(cfg, fusion=f).evm_config
            evm_models[f] = _stage("fit-evm", evm.train, ctx.gallery, ctx.training, c, workers)

    cells = []
    for m in methods:
        for f in fusions:
            model = subspace if m is Method.LDA else evm_models.get(f)
            cells.append(ScoringMethod(m, f, model))

    def run_cell(method: ScoringMethod):
        log.info("scoring %s", method.name)
        scores = _stage("score", score_all, method, ctx.gallery, ctx.probes)
        results = [
            _stage("evaluate", evaluate, scores, ctx.partition, ps, cfg) for ps in probe_sets
        ]
        return scores, results

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(c) for c in cells]

    report = {"config": _config_dict(cfg), "partition": ctx.summary(), "cells": []}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        io.write_partition(out / "partition.json", ctx.partition)
        models = out / "models"
        if subspace is not None or evm_models:
            models.mkdir(exist_ok=True)
        if subspace is not None:
            io.write_subspace(models / "subspace.json", subspace)
        for f, model in evm_models.items():
            io.write_evm(models / f"evm_{f.value}.json", model)

    for method, (scores, results) in zip(cells, outcomes):
        for summary, curves in results:
            report["cells"].append({"method": method.method.value, "fusion": method.fusion.value, **summary})
            if out is not None:
                write_curves(out / method.name / summary["probe_set"], curves)
        if out is not None:
            (out / method.name).mkdir(parents=True, exist_ok=True)
            io.write_score_matrix(out / method.name / "scores.csv", scores)
    if out is not None:
        io.write_json(out / "summary.json", report)
    return report
