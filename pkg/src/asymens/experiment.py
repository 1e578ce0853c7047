"""Experiment orchestration: training grids, aggregation, and result records.

A run is a pure function of (config, dataset files): every trained model is
keyed by its (repetition, estimator) coordinates, jobs are independent, and
results are assembled in a canonical order, so worker count and scheduling
cannot change the output. Wall-clock timing is the one non-deterministic
field and can be disabled via record_timing for byte-identical reruns.
"""

from __future__ import annotations

import json
import multiprocessing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from .data import (
    SplitData,
    TabularDataset,
    Task,
    load_dataset,
    make_split_data,
    split,
    synth_dataset,
)
from .ensemble import DeepEnsemble, ensemble_scores, interpolated_model, subsets_for_sizes
from .initializers import FixSchedule, build_network
from .moe import Combine, GateKind, GateSpec, build_mixture
from .net import Mode, NetSpec
from .optim import TrainConfig, evaluate_scores, train


class ConfigError(ValueError):
    """Invalid experiment configuration."""


SYNTHETIC_DATASETS = ("synthetic-regression", "synthetic-classification")
REAL_DATASETS = ("california", "churn", "adult", "otto", "mnist")
FAMILIES = ("mlp", "wmlp")
RUN_KINDS = ("deep-ensemble", "moe", "gg-moe", "moie", "gg-moie")


@dataclass(frozen=True)
class SynthSpec:
    n: int = 4000
    d: int = 8
    seed: int = 0
    noise: float = 0.01
    classes: int = 3
    separation: float = 4.0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic-regression"
    data_dir: str | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)
    families: tuple[str, ...] = ("mlp", "wmlp")
    hidden_dims: tuple[int, ...] = (64,)
    sizes: tuple[int, ...] = (2, 4, 8, 16, 32, 64)
    repetitions: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    gate: GateSpec = field(default_factory=GateSpec)
    workers: int = 1
    out_dir: str = "runs/out"
    split_seed: int = 0
    record_timing: bool = True

    def __post_init__(self):
        if self.dataset not in SYNTHETIC_DATASETS + REAL_DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.dataset in REAL_DATASETS and not self.data_dir:
            raise ConfigError(f"dataset {self.dataset!r} needs data_dir")
        if not self.families or any(f not in FAMILIES for f in self.families):
            raise ConfigError(f"families must be a non-empty subset of {FAMILIES}")
        if not self.sizes or list(self.sizes) != sorted(set(self.sizes)):
            raise ConfigError("sizes must be strictly ascending")
        if any(s < 1 for s in self.sizes):
            raise ConfigError("sizes must be positive")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        if "synth" in raw:
            raw["synth"] = SynthSpec(**raw["synth"])
        if "train" in raw:
            raw["train"] = TrainConfig(**raw["train"])
        if "gate" in raw:
            gate = dict(raw["gate"])
            if "kind" in gate:
                gate["kind"] = GateKind(gate["kind"])
            raw["gate"] = GateSpec(**gate)
        for key in ("families", "hidden_dims", "sizes"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return ExperimentConfig(**raw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


@dataclass
class ExperimentResult:
    dataset: str
    family: str
    hidden_dim: int
    size: int
    repetition: int
    metric_name: str
    metric_value: float
    interpolated_metric_value: float | None = None
    epochs: int | None = None
    wall_time_s: float | None = None


def load_experiment_dataset(cfg: ExperimentConfig) -> TabularDataset:
    if cfg.dataset == "synthetic-regression":
        s = cfg.synth
        ds = synth_dataset(Task.REGRESSION, s.n, s.d, s.seed, noise=s.noise)
    elif cfg.dataset == "synthetic-classification":
        s = cfg.synth
        ds = synth_dataset(
            Task.CLASSIFICATION, s.n, s.d, s.seed,
            classes=s.classes, separation=s.separation,
        )
    else:
        ds = load_dataset(cfg.dataset, cfg.data_dir)
    return ds


# --- job execution -----------------------------------------------------------

_JOB_DATA: SplitData | None = None


def _worker_init(data: SplitData) -> None:
    global _JOB_DATA
    _JOB_DATA = data


@dataclass(frozen=True)
class TrainJob:
    spec: NetSpec
    cfg: TrainConfig
    mixture: bool = False
    n_experts: int = 0
    gate_spec: GateSpec | None = None
    combine: Combine | None = None
    moe_schedule: bool = False


def _execute_job(job: TrainJob):
    # single BLAS thread: deterministic across pool layouts, no oversubscription
    with threadpool_limits(limits=1):
        if job.mixture:
            schedule = FixSchedule(first_layer=2, later_layers=3) if job.moe_schedule else None
            model = build_mixture(
                job.spec, job.n_experts, job.cfg.rep, job.gate_spec, job.combine,
                schedule=schedule,
            )
        else:
            model = build_network(job.spec, job.cfg.rep, job.cfg.estimator)
        return train(model, _JOB_DATA, job.cfg)


def _run_jobs(jobs: list[TrainJob], data: SplitData, workers: int):
    if workers == 1 or len(jobs) <= 1:
        _worker_init(data)
        return [_execute_job(j) for j in jobs]
    with multiprocessing.Pool(
        processes=min(workers, len(jobs)), initializer=_worker_init, initargs=(data,)
    ) as pool:
        return pool.map(_execute_job, jobs)


def _spec_for(cfg: ExperimentConfig, data: SplitData, family: str, hidden: int) -> NetSpec:
    out_features = data.class_count if data.task is Task.CLASSIFICATION else 1
    return NetSpec(
        in_features=data.x_train.shape[1],
        hidden_dim=hidden,
        out_features=out_features,
        mode=Mode.WMLP if family == "wmlp" else Mode.MLP,
    )


def run_deep_ensemble_experiment(
    cfg: ExperimentConfig, data: SplitData | None = None
) -> list[ExperimentResult]:
    """Train a pool per repetition; record singles, prefix ensembles, and the
    interpolated-model metric per ensemble size."""
    if data is None:
        ds = load_experiment_dataset(cfg)
        data = make_split_data(ds, split(ds, cfg.split_seed))
    pool_size = max(cfg.sizes)

    jobs, coords = [], []
    for hidden in cfg.hidden_dims:
        for family in cfg.families:
            spec = _spec_for(cfg, data, family, hidden)
            for rep in range(cfg.repetitions):
                for est in range(pool_size):
                    jobs.append(
                        TrainJob(spec=spec, cfg=replace(cfg.train, rep=rep, estimator=est))
                    )
                    coords.append((hidden, family, rep, est))
    outcomes = _run_jobs(jobs, data, cfg.workers)

    by_group: dict[tuple, list] = {}
    for (hidden, family, rep, est), (model, report) in zip(coords, outcomes):
        by_group.setdefault((hidden, family, rep), []).append((est, model, report))

    results = []
    for hidden in cfg.hidden_dims:
        for family in cfg.families:
            for rep in range(cfg.repetitions):
                members = by_group[(hidden, family, rep)]
                members.sort(key=lambda t: t[0])
                models = [m for _, m, _ in members]
                for est, _, report in members:
                    results.append(
                        ExperimentResult(
                            dataset=cfg.dataset,
                            family=family,
                            hidden_dim=hidden,
                            size=1,
                            repetition=rep,
                            metric_name=report.metric_name,
                            metric_value=report.test_metric,
                            epochs=report.epochs_run,
                            wall_time_s=report.wall_time_s if cfg.record_timing else None,
                        )
                    )
                ensembles = subsets_for_sizes(models, list(cfg.sizes), data.task)
                for size in cfg.sizes:
                    ens = ensembles[size]
                    name, metric = evaluate_scores(
                        ensemble_scores(ens, data.x_test), data.y_test, data.task
                    )
                    merged = interpolated_model(ens)
                    _, interp_metric = evaluate_scores(
                        merged.predict_scores(data.x_test), data.y_test, data.task
                    )
                    results.append(
                        ExperimentResult(
                            dataset=cfg.dataset,
                            family=family,
                            hidden_dim=hidden,
                            size=size,
                            repetition=rep,
                            metric_name=name,
                            metric_value=metric,
                            interpolated_metric_value=interp_metric,
                        )
                    )
    return results


_MOE_GATES = {
    "moe": GateKind.SOFTMAX,
    "gg-moe": GateKind.GUMBEL_SOFTMAX,
    "moie": GateKind.SOFTMAX,
    "gg-moie": GateKind.GUMBEL_SOFTMAX,
}
_MOE_COMBINES = {
    "moe": Combine.OUTPUT_AVERAGE,
    "gg-moe": Combine.OUTPUT_AVERAGE,
    "moie": Combine.WEIGHT_INTERPOLATION,
    "gg-moie": Combine.WEIGHT_INTERPOLATION,
}


def run_moe_experiment(
    cfg: ExperimentConfig, kind: str, data: SplitData | None = None
) -> list[ExperimentResult]:
    """Train one mixture per (family, expert count, repetition)."""
    if kind not in _MOE_GATES:
        raise ConfigError(f"unknown mixture kind {kind!r}; known: {sorted(_MOE_GATES)}")
    if data is None:
        ds = load_experiment_dataset(cfg)
        data = make_split_data(ds, split(ds, cfg.split_seed))
    gate_spec = replace(cfg.gate, kind=_MOE_GATES[kind])
    combine = _MOE_COMBINES[kind]

    jobs, coords = [], []
    for hidden in cfg.hidden_dims:
        for family in cfg.families:
            spec = _spec_for(cfg, data, family, hidden)
            for size in cfg.sizes:
                for rep in range(cfg.repetitions):
                    jobs.append(
                        TrainJob(
                            spec=spec,
                            cfg=replace(cfg.train, rep=rep, estimator=size),
                            mixture=True,
                            n_experts=size,
                            gate_spec=gate_spec,
                            combine=combine,
                            moe_schedule=True,
                        )
                    )
                    coords.append((hidden, family, size, rep))
    outcomes = _run_jobs(jobs, data, cfg.workers)

    results = []
    for (hidden, family, size, rep), (_, report) in zip(coords, outcomes):
        results.append(
            ExperimentResult(
                dataset=cfg.dataset,
                family=f"{kind}-{family}",
                hidden_dim=hidden,
                size=size,
                repetition=rep,
                metric_name=report.metric_name,
                metric_value=report.test_metric,
                epochs=report.epochs_run,
                wall_time_s=report.wall_time_s if cfg.record_timing else None,
            )
        )
    return results


def run_experiment(cfg: ExperimentConfig, kind: str) -> list[ExperimentResult]:
    if kind == "deep-ensemble":
        return run_deep_ensemble_experiment(cfg)
    return run_moe_experiment(cfg, kind)


# --- aggregation -------------------------------------------------------------


def relative_improvement(metric_name: str, baseline: float, value: float) -> float:
    """Percent improvement, sign-normalized so positive means better."""
    if baseline <= 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    if metric_name == "rmse":
        return 100.0 * (baseline - value) / baseline
    return 100.0 * (value - baseline) / baseline


def mean_and_std(values) -> tuple[float, float]:
    """Sample mean and n-1 standard deviation; std is 0 for a single value."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


GROUP_KEYS = ["dataset", "family", "hidden_dim", "size", "metric_name"]


def results_frame(results: list[ExperimentResult]) -> pd.DataFrame:
    return pd.DataFrame([vars(r) for r in results])


def aggregate(results: list[ExperimentResult]) -> pd.DataFrame:
    """Mean and sample std across repetitions per (family, size) group.

    Multiple rows per repetition (the size-1 singles of one pool) collapse to
    their repetition mean first. Relative improvement is computed per
    repetition against the smallest size present for the family and then
    aggregated the same way.
    """
    if not results:
        raise ValueError("no results to aggregate")
    df = results_frame(results)
    per_rep = (
        df.groupby(GROUP_KEYS + ["repetition"], as_index=False)
        .agg(
            metric_value=("metric_value", "mean"),
            interpolated_metric_value=("interpolated_metric_value", "mean"),
        )
    )

    baseline_size = per_rep.groupby(
        ["dataset", "family", "hidden_dim", "metric_name"]
    )["size"].transform("min")
    base_rows = per_rep[per_rep["size"] == baseline_size][
        ["dataset", "family", "hidden_dim", "metric_name", "repetition", "metric_value"]
    ].rename(columns={"metric_value": "baseline_value"})
    per_rep = per_rep.merge(
        base_rows, on=["dataset", "family", "hidden_dim", "metric_name", "repetition"]
    )
    per_rep["relative_improvement"] = [
        relative_improvement(m, b, v)
        for m, b, v in zip(
            per_rep["metric_name"], per_rep["baseline_value"], per_rep["metric_value"]
        )
    ]

    def std0(x):
        return x.std(ddof=1) if len(x) > 1 else 0.0

    agg = per_rep.groupby(GROUP_KEYS, as_index=False).agg(
        repetitions=("repetition", "count"),
        metric_mean=("metric_value", "mean"),
        metric_std=("metric_value", std0),
        interpolated_mean=("interpolated_metric_value", "mean"),
        interpolated_std=("interpolated_metric_value", std0),
        relative_mean=("relative_improvement", "mean"),
        relative_std=("relative_improvement", std0),
    )
    return agg.sort_values(GROUP_KEYS).reset_index(drop=True)


# --- CSV records -------------------------------------------------------------

RESULT_COLUMNS = [
    "dataset",
    "family",
    "hidden_dim",
    "size",
    "repetition",
    "metric_name",
    "metric_value",
    "interpolated_metric_value",
    "epochs",
    "wall_time_s",
]


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(results: list[ExperimentResult], path: str | Path) -> None:
    lines = [",".join(RESULT_COLUMNS)]
    for r in results:
        row = vars(r)
        lines.append(",".join(_format_cell(row[c]) for c in RESULT_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_results_csv(path: str | Path) -> list[ExperimentResult]:
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    if header != RESULT_COLUMNS:
        raise ValueError(f"unexpected results.csv columns: {header}")
    out = []
    for line in text[1:]:
        if not line:
            continue
        cells = line.split(",")
        row = dict(zip(RESULT_COLUMNS, cells))
        out.append(
            ExperimentResult(
                dataset=row["dataset"],
                family=row["family"],
                hidden_dim=int(row["hidden_dim"]),
                size=int(row["size"]),
                repetition=int(row["repetition"]),
                metric_name=row["metric_name"],
                metric_value=float(row["metric_value"]),
                interpolated_metric_value=(
                    float(row["interpolated_metric_value"])
                    if row["interpolated_metric_value"]
                    else None
                ),
                epochs=int(row["epochs"]) if row["epochs"] else None,
                wall_time_s=float(row["wall_time_s"]) if row["wall_time_s"] else None,
            )
        )
    return out
