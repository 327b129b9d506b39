"""Multi-seed experiment runs and their tabular outputs.

A plan names a data source, a model family and a list of penalty settings.
Every (penalty, seed) pair is run independently: the data are regenerated (or
re-split) with the seed, a model is trained, and the full metrics report is
taken. Rows then aggregate each penalty's runs as mean and std over seeds.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autoencoder, mf
from .core import SplitSpec, check_seed
from .errors import DivergenceError, InvalidInputError
from .kde import PenaltyConfig, PenaltyKind
from .metrics import dee_ranking, evaluate
from .synthgen import SyntheticConfig, generate

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
METRIC_NAMES = ("rmse", "dee", "der", "ugf", "cvs", "val", "dee_cond_y")


@dataclass(frozen=True)
class FileSource:
    """A dataset file written by :func:`fairmc.dataio.save_dataset`."""

    path: str

    def to_dict(self):
        return {"path": os.fspath(self.path)}


@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    source: object = field(default_factory=SyntheticConfig)
    model: str = "mf"
    penalties: tuple = (PenaltyConfig(PenaltyKind.NONE, lam=0.0), PenaltyConfig())
    labels: tuple | None = None
    seeds: tuple = DEFAULT_SEEDS
    train: mf.TrainConfig = field(default_factory=mf.TrainConfig)
    rank: int = 20
    train_fraction: float = 0.9
    topk: tuple = ()
    tau: float | None = None
    fairness_domain: str = "all"
    hidden: int = 512
    dropout: float = 0.7
    output_mode: str | None = None

    def __post_init__(self):
        if self.model not in ("mf", "ae"):
            raise InvalidInputError(f"unknown model {self.model!r}")
        if not self.seeds:
            raise InvalidInputError("a plan needs at least one seed")
        if not self.penalties:
            raise InvalidInputError("a plan needs at least one penalty setting")
        object.__setattr__(self, "seeds", tuple(check_seed(s) for s in self.seeds))
        object.__setattr__(self, "penalties", tuple(self.penalties))
        object.__setattr__(self, "topk", tuple(int(k) for k in self.topk))
        labels = tuple(self.labels) if self.labels is not None else default_labels(self.penalties)
        if len(labels) != len(self.penalties) or len(set(labels)) != len(labels):
            raise InvalidInputError("penalty labels must be unique, one per penalty")
        object.__setattr__(self, "labels", labels)
        if not isinstance(self.source, (SyntheticConfig, FileSource)):
            raise InvalidInputError("plan source must be a SyntheticConfig or FileSource")
        if self.fairness_domain not in ("all", "test"):
            raise InvalidInputError(f"unknown fairness domain {self.fairness_domain!r}")

    def to_dict(self):
        src = self.source.to_dict()
        src["kind"] = "synthetic" if isinstance(self.source, SyntheticConfig) else "file"
        return {
            "source": src, "model": self.model,
            "penalties": [dict(p.to_dict(), label=lab) for p, lab in zip(self.penalties, self.labels)],
            "seeds": list(self.seeds), "train": self.train.to_dict(), "rank": self.rank,
            "train_fraction": self.train_fraction, "topk": list(self.topk), "tau": self.tau,
            "fairness_domain": self.fairness_domain, "hidden": self.hidden, "dropout": self.dropout,
            "output_mode": self.output_mode,
        }


def default_labels(penalties):
    """``unfair`` for inactive settings, else the penalty kind; ties get the lambda appended."""
    base = ["unfair" if not p.active else p.kind.value for p in penalties]
    out = []
    for lab, p in zip(base, penalties):
        out.append(lab if base.count(lab) == 1 else f"{lab}@lam={p.lam:g},tau={p.tau:g}")
    return tuple(out)


@dataclass
class RunRecord:
    label: str
    seed: int
    config_hash: str
    metrics: dict
    train_seconds: float
    load_seconds: float
    eval_seconds: float


@dataclass
class AggregateRow:
    label: str
    penalty: PenaltyConfig
    n_seeds: int
    mean: dict
    std: dict
    seconds_mean: float
    seconds_std: float


@dataclass
class PlanResult:
    plan: ExperimentPlan
    rows: list
    runs: list

    def row(self, label) -> AggregateRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_source(source, seed):
    """``(dataset, groups)`` for one seed; synthetic sources are regenerated with it."""
    if isinstance(source, SyntheticConfig):
        return generate(source.with_seed(seed))
    from .dataio import load_dataset

    return load_dataset(source.path)


def _resolve_tau(plan, dataset):
    return dataset.ratings.domain.default_tau if plan.tau is None else float(plan.tau)


def fit_and_predict(plan: ExperimentPlan, dataset, groups, train_mask, penalty, seed):
    train_cfg = mf.TrainConfig(**dict(plan.train.to_dict(), seed=seed))
    if plan.model == "mf":
        model, trace = mf.train(dataset.ratings, train_mask, groups, penalty, train_cfg, rank=plan.rank)
        return mf.predict(model), model, trace
    mode = plan.output_mode or ("tanh" if dataset.ratings.domain.value == "binary" else "clip")
    model, trace = autoencoder.train_ae(dataset.ratings, train_mask, groups, penalty, train_cfg,
                                        hidden=plan.hidden, dropout_rate=plan.dropout, output_mode=mode)
    return autoencoder.predict(model, dataset.ratings, train_mask), model, trace


def run_one(plan: ExperimentPlan, index: int, seed: int) -> RunRecord:
    penalty, label = plan.penalties[index], plan.labels[index]
    t0 = time.perf_counter()
    dataset, groups = load_source(plan.source, seed)
    train_mask, test_mask = dataset.split(SplitSpec(plan.train_fraction, seed))
    t1 = time.perf_counter()
    try:
        pred, _, _ = fit_and_predict(plan, dataset, groups, train_mask, penalty, seed)
    except DivergenceError as exc:
        raise DivergenceError(exc.iteration, f"run (penalty={label}, seed={seed}) diverged") from exc
    t2 = time.perf_counter()
    report = evaluate(pred, dataset, groups, test_mask, _resolve_tau(plan, dataset),
                      topk=plan.topk, fairness_domain=plan.fairness_domain)
    t3 = time.perf_counter()
    run_cfg = dict(plan.to_dict(), penalties=None, penalty=penalty.to_dict(), seed=seed)
    return RunRecord(label, seed, config_hash(run_cfg), report.to_dict(), t2 - t1, t1 - t0, t3 - t2)


def _run_star(args):
    return run_one(*args)


def _worker_count(threads):
    if threads is None:
        env = os.environ.get("FAIRMC_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise InvalidInputError("thread count must be at least 1")
    return threads


def summarize(values, std_mode="population"):
    """``(mean, std)`` ignoring None; a single value has std 0."""
    vals = [float(v) for v in values if v is not None and not math.isnan(float(v))]
    if not vals:
        return math.nan, math.nan
    if std_mode not in ("population", "sample"):
        raise InvalidInputError(f"unknown std mode {std_mode!r}")
    arr = np.sort(np.array(vals))  # sorted so the fold does not depend on seed order
    if arr.size == 1:
        return float(arr[0]), 0.0
    ddof = 0 if std_mode == "population" else 1
    return float(math.fsum(arr) / arr.size), float(np.std(arr, ddof=ddof))


def aggregate(plan: ExperimentPlan, runs, std_mode="population"):
    rows = []
    for penalty, label in zip(plan.penalties, plan.labels):
        mine = [r for r in runs if r.label == label]
        names = list(mine[0].metrics) if mine else []
        mean, std = {}, {}
        for name in names:
            mean[name], std[name] = summarize([r.metrics[name] for r in mine], std_mode)
        s_mean, s_std = summarize([r.train_seconds for r in mine], std_mode)
        rows.append(AggregateRow(label, penalty, len(mine), mean, std, s_mean, s_std))
    return rows


def run_plan(plan: ExperimentPlan, threads=None, std_mode="population", progress=None) -> PlanResult:
    """Run every (penalty, seed) pair of ``plan`` and aggregate over seeds.

    ``threads`` > 1 runs pairs in worker processes; results are collected in
    submission order, so the output does not depend on scheduling.
    """
    jobs = [(plan, i, s) for i in range(len(plan.penalties)) for s in plan.seeds]
    workers = min(_worker_count(threads), len(jobs))
    runs = []
    if workers == 1:
        for job in jobs:
            runs.append(run_one(*job))
            if progress:
                progress(runs[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_run_star, jobs):
                runs.append(rec)
                if progress:
                    progress(rec)
    return PlanResult(plan, aggregate(plan, runs, std_mode), runs)


@dataclass
class SweepCell:
    axis: str
    first: float
    second: float
    dee_mean: float
    dee_std: float
    n_seeds: int


def bias_sweep(base: SyntheticConfig, axis, grid, seeds=DEFAULT_SEEDS, train=None, rank=20,
               threads=None, std_mode="population"):
    """Unfair-model DEE for each ``(a, b)`` of ``grid``.

    ``axis="p"`` sets the symmetric preference table (p0 = a, p1 = b) and keeps
    ``base.q``; ``axis="q"`` does the same for the observation table.
    """
    if axis not in ("p", "q"):
        raise InvalidInputError(f"sweep axis must be 'p' or 'q', got {axis!r}")
    grid = [tuple(float(v) for v in cell) for cell in grid]
    if not grid:
        raise InvalidInputError("sweep grid is empty")
    unfair = PenaltyConfig(PenaltyKind.NONE, lam=0.0)
    cells = []
    for a, b in grid:
        table = [[a, b], [b, a]]
        src = SyntheticConfig(base.n, base.m, base.rank,
                              p=table if axis == "p" else base.p, q=table if axis == "q" else base.q)
        plan = ExperimentPlan(source=src, penalties=(unfair,), seeds=seeds,
                              train=train or mf.TrainConfig(), rank=rank)
        row = run_plan(plan, threads=threads, std_mode=std_mode).rows[0]
        cells.append(SweepCell(axis, a, b, row.mean["dee"], row.std["dee"], row.n_seeds))
    return cells


def topk_sweep(predictions: dict, ks, groups):
    """``[(label, K, dee_ranking)]`` for every named prediction matrix and K."""
    m = groups.shape[1]
    for k in ks:
        if not 1 <= int(k) <= m:
            raise InvalidInputError(f"K={k} outside 1..{m}")
    return [(label, int(k), dee_ranking(pred, int(k), groups)) for label, pred in predictions.items() for k in ks]


def topk_rows(result: PlanResult):
    """Per (label, K) mean/std of the ranking measure from an aggregated plan."""
    out = []
    for row in result.rows:
        for k in result.plan.topk:
            name = f"dee_ranking_K{k}"
            out.append((row.label, k, row.mean[name], row.std[name]))
    return out


def fmt(v):
    """17 significant digits (lossless for float64); NaN/None become empty."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else format(v, ".17g")


def _json_num(v):
    if v is None:
        return None
    v = float(v)
    return None if math.isnan(v) else v


def write_results_csv(rows, path):
    names = list(rows[0].mean) if rows else list(METRIC_NAMES)
    header = ["label", "penalty", "lambda", "tau", "h", "delta", "n_seeds"]
    for name in names:
        header += [f"{name}_mean", f"{name}_std"]
    header += ["seconds_mean", "seconds_std"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            p = r.penalty
            line = [r.label, p.kind.value, fmt(p.lam), fmt(p.tau), fmt(p.h), fmt(p.delta), r.n_seeds]
            for name in names:
                line += [fmt(r.mean.get(name)), fmt(r.std.get(name))]
            line += [fmt(r.seconds_mean), fmt(r.seconds_std)]
            w.writerow(line)


def provenance(result: PlanResult, std_mode="population"):
    return {
        "plan": result.plan.to_dict(),
        "std_mode": std_mode,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "platform": platform.platform()},
        "rows": [{
            "label": r.label, "penalty": r.penalty.to_dict(), "n_seeds": r.n_seeds,
            "mean": {k: _json_num(v) for k, v in r.mean.items()},
            "std": {k: _json_num(v) for k, v in r.std.items()},
            "seconds_mean": r.seconds_mean, "seconds_std": r.seconds_std,
        } for r in result.rows],
        "runs": [{
            "label": r.label, "seed": r.seed, "config_hash": r.config_hash,
            "metrics": {k: _json_num(v) for k, v in r.metrics.items()},
            "train_seconds": r.train_seconds, "load_seconds": r.load_seconds, "eval_seconds": r.eval_seconds,
        } for r in result.runs],
    }


def write_results_json(result: PlanResult, path, std_mode="population"):
    with open(path, "w", encoding="utf-8") as fh:
        # repr of a Python float already round-trips exactly
        json.dump(provenance(result, std_mode), fh, indent=2, allow_nan=False)
        fh.write("\n")


def write_sweep_csv(cells, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "first", "second", "dee_mean", "dee_std", "n_seeds"])
        for c in cells:
            w.writerow([c.axis, fmt(c.first), fmt(c.second), fmt(c.dee_mean), fmt(c.dee_std), c.n_seeds])


def write_topk_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "k", "dee_ranking_mean", "dee_ranking_std"])
        for label, k, mean, std in rows:
            w.writerow([label, k, fmt(mean), fmt(std)])
