"""``fairmc`` command line: synth, train, eval, sweep, plan, bench.

Settings come from an optional JSON config file (validated before any work)
and are overridden by explicit flags. Exit codes: 0 success, 2 usage or
configuration error, 3 numerical failure (divergence).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import jsonschema

from . import autoencoder, dataio, harness, mf, synthgen
from .core import SplitSpec
from .errors import DivergenceError, FairMCError
from .kde import PenaltyConfig, PenaltyKind
from .metrics import evaluate

EXIT_USAGE = 2
EXIT_NUMERIC = 3

_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_TABLE = {"type": "array", "minItems": 2, "maxItems": 2,
          "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _PROB}}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_PENALTY_NAMES = [k.value for k in PenaltyKind] + ["dee-cond-y"]
_PENALTY = {
    "type": "object", "additionalProperties": False,
    "properties": {
        "kind": {"enum": _PENALTY_NAMES}, "lambda": {"type": "number", "minimum": 0, "maximum": 1},
        "tau": {"type": "number"}, "h": {"type": "number", "exclusiveMinimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": 0}, "label": {"type": "string"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "synthetic": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 2}, "m": {"type": "integer", "minimum": 2},
                "rank": {"type": "integer", "minimum": 2}, "p": _TABLE, "q": _TABLE,
                "p0": _PROB, "p1": _PROB, "q0": _PROB, "q1": _PROB, "seed": _SEED,
            },
        },
        "data": {
            "type": "object", "additionalProperties": False,
            "properties": {"path": {"type": "string"}},
            "required": ["path"],
        },
        "model": {"enum": ["mf", "ae"]},
        "penalty": _PENALTY,
        "penalties": {"type": "array", "minItems": 1, "items": _PENALTY},
        "train": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "iterations": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "adam_beta1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "adam_beta2": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "adam_epsilon": {"type": "number", "exclusiveMinimum": 0},
                "init_scale": {"type": "number", "exclusiveMinimum": 0},
                "seed": _SEED, "loss_reduction": {"enum": ["mean", "sum"]},
                "rank": {"type": "integer", "minimum": 1},
            },
        },
        "autoencoder": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "hidden": {"type": "integer", "minimum": 1},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "output_mode": {"enum": ["clip", "tanh"]},
            },
        },
        "split": {
            "type": "object", "additionalProperties": False,
            "properties": {"train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        },
        "evaluation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "tau": {"type": "number"},
                "topk": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "fairness_domain": {"enum": ["all", "test"]},
            },
        },
        "seeds": {"type": "array", "minItems": 1, "items": _SEED},
        "std_mode": {"enum": ["population", "sample"]},
        "sweep": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "axis": {"enum": ["p", "q"]},
                "grid": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": _PROB}},
            },
            "required": ["axis", "grid"],
        },
    },
}


class UsageError(FairMCError):
    pass


def load_config(path):
    """Parsed and schema-checked config; an absent path gives ``{}``."""
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"{path}: {where}: {exc.message}") from None
    return cfg


def _first(*values):
    for v in values:
        if v is not None:
            return v
    return None


def synthetic_config(cfg, seed=None) -> synthgen.SyntheticConfig:
    s = dict(cfg.get("synthetic", {}))
    sym = {k: s.pop(k) for k in ("p0", "p1", "q0", "q1") if k in s}
    if "p" in s and ("p0" in sym or "p1" in sym) or "q" in s and ("q0" in sym or "q1" in sym):
        raise UsageError("give either a full table or its symmetric (x0, x1) form, not both")
    if "p0" in sym or "p1" in sym:
        s["p"] = synthgen.symmetric_table(sym.get("p0", 0.4), sym.get("p1", 0.4))
    if "q0" in sym or "q1" in sym:
        s["q"] = synthgen.symmetric_table(sym.get("q0", 0.2), sym.get("q1", 0.01))
    if seed is not None:
        s["seed"] = seed
    return synthgen.SyntheticConfig(**s)


def penalty_from(section, domain_tau, overrides=None):
    """PenaltyConfig from a config section plus flag overrides; tau defaults to the data's."""
    section = dict(section or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    section.update(overrides)
    kind = str(section.get("kind", "dee")).replace("-", "_")
    return PenaltyConfig(
        kind=kind,
        tau=float(section.get("tau", domain_tau)),
        h=float(section.get("h", 0.01)),
        delta=float(section.get("delta", 0.01)),
        lam=float(section.get("lambda", 0.0 if kind == "none" else 0.99)),
    )


def train_config(cfg, args) -> mf.TrainConfig:
    t = dict(cfg.get("train", {}))
    t.pop("rank", None)
    flags = {
        "iterations": getattr(args, "iters", None), "learning_rate": getattr(args, "lr", None),
        "seed": getattr(args, "seed", None), "init_scale": getattr(args, "init_scale", None),
        "loss_reduction": getattr(args, "loss_reduction", None),
    }
    t.update({k: v for k, v in flags.items() if v is not None})
    return mf.TrainConfig(**t)


def _topk(text, cfg):
    if text is None:
        return tuple(cfg.get("evaluation", {}).get("topk", ()))
    if not text.strip():
        return ()
    try:
        return tuple(int(k) for k in text.split(","))
    except ValueError:
        raise UsageError(f"--topk must be comma-separated integers, got {text!r}") from None


def _dump(obj, path):
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _json_safe(d):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def cmd_synth(args):
    cfg = load_config(args.config)
    scfg = synthetic_config(cfg, args.seed)
    dataset, groups = synthgen.generate(scfg)
    dataio.save_dataset(args.out, dataset, groups)
    stats = synthgen.block_stats(dataset, groups)
    _dump({
        "out": args.out, "config": scfg.to_dict(), "n_observed": dataset.observed.count,
        "realized_rank": synthgen.realized_rank(dataset.ratings),
        "blocks": {f"u{g}_i{h}": v for (g, h), v in stats.items()},
    }, None)
    return 0


def _eval_settings(cfg, args, dataset):
    ev = cfg.get("evaluation", {})
    tau = _first(args.tau, ev.get("tau"), dataset.ratings.domain.default_tau)
    domain = _first(args.fairness_domain, ev.get("fairness_domain"), "all")
    fraction = _first(args.train_fraction, cfg.get("split", {}).get("train_fraction"), 0.9)
    return float(tau), domain, float(fraction)


def cmd_train(args):
    cfg = load_config(args.config)
    dataset, groups = dataio.load_dataset(args.data)
    tau, domain, fraction = _eval_settings(cfg, args, dataset)
    penalty = penalty_from(cfg.get("penalty"), tau, {
        "kind": args.penalty, "lambda": args.lam, "tau": args.tau, "h": args.h, "delta": args.delta,
    })
    tcfg = train_config(cfg, args)
    model_kind = _first(args.model, cfg.get("model"), "mf")
    ae_cfg = cfg.get("autoencoder", {})
    train_mask, test_mask = dataset.split(SplitSpec(fraction, tcfg.seed))
    started = time.perf_counter()
    if model_kind == "mf":
        rank = _first(args.rank, cfg.get("train", {}).get("rank"), 20)
        model, trace = mf.train(dataset.ratings, train_mask, groups, penalty, tcfg, rank=rank)
        pred = mf.predict(model)
        extra = {"rank": rank}
    else:
        mode = _first(args.output_mode, ae_cfg.get("output_mode"),
                      "tanh" if dataset.ratings.domain.value == "binary" else "clip")
        model, trace = autoencoder.train_ae(
            dataset.ratings, train_mask, groups, penalty, tcfg,
            hidden=_first(args.hidden, ae_cfg.get("hidden"), 512),
            dropout_rate=_first(args.dropout, ae_cfg.get("dropout"), 0.7), output_mode=mode)
        pred = autoencoder.predict(model, dataset.ratings, train_mask)
        extra = {"hidden": model.hidden, "output_mode": model.output_mode.value}
    seconds = time.perf_counter() - started
    if args.out_checkpoint:
        (mf if model_kind == "mf" else autoencoder).save_checkpoint(model, args.out_checkpoint)
    report = evaluate(pred, dataset, groups, test_mask, tau, topk=_topk(args.topk, cfg), fairness_domain=domain)
    _dump({
        "metrics": _json_safe(report.to_dict()), "warnings": report.warnings,
        "model": dict(extra, kind=model_kind), "penalty": penalty.to_dict(), "train": tcfg.to_dict(),
        "tau": tau, "fairness_domain": domain, "train_fraction": fraction,
        "final_loss": float(trace[-1]), "train_seconds": seconds,
    }, args.out_metrics)
    return 0


def _load_any_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == mf.MAGIC:
        return "mf", mf.load_checkpoint(path)
    if magic == autoencoder.MAGIC:
        return "ae", autoencoder.load_checkpoint(path)
    raise UsageError(f"{path}: unrecognized checkpoint format")


def cmd_eval(args):
    cfg = load_config(args.config)
    dataset, groups = dataio.load_dataset(args.data)
    tau, domain, fraction = _eval_settings(cfg, args, dataset)
    seed = _first(args.seed, cfg.get("train", {}).get("seed"), 1)
    kind, model = _load_any_checkpoint(args.checkpoint)
    train_mask, test_mask = dataset.split(SplitSpec(fraction, seed))
    if kind == "mf":
        if model.shape != dataset.shape:
            raise UsageError(f"checkpoint is for shape {model.shape}, data are {dataset.shape}")
        pred = mf.predict(model)
    else:
        if model.n_items != dataset.shape[1]:
            raise UsageError(f"checkpoint expects {model.n_items} items, data have {dataset.shape[1]}")
        pred = autoencoder.predict(model, dataset.ratings, train_mask)
    report = evaluate(pred, dataset, groups, test_mask, tau, topk=_topk(args.topk, cfg), fairness_domain=domain)
    flat = report.to_dict()
    _dump({"metrics": _json_safe(flat), "warnings": report.warnings, "model": kind,
           "tau": tau, "fairness_domain": domain}, args.out)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(",".join(flat) + "\n")
            fh.write(",".join(harness.fmt(v) for v in flat.values()) + "\n")
    return 0


def build_plan(cfg, args, default_penalties=None) -> harness.ExperimentPlan:
    if "data" in cfg:
        source = harness.FileSource(cfg["data"]["path"])
        domain_tau = dataio.load_dataset(source.path)[0].ratings.domain.default_tau
    else:
        source = synthetic_config(cfg)
        domain_tau = 0.0
    ev = cfg.get("evaluation", {})
    tau = _first(ev.get("tau"), domain_tau)
    sections = cfg.get("penalties") or default_penalties or [{"kind": "none"}, {"kind": "dee"}]
    penalties = [penalty_from(s, tau) for s in sections]
    labels = [s.get("label") for s in sections]
    labels = tuple(labels) if all(labels) else None
    ae_cfg = cfg.get("autoencoder", {})
    return harness.ExperimentPlan(
        source=source, model=cfg.get("model", "mf"), penalties=tuple(penalties), labels=labels,
        seeds=tuple(cfg.get("seeds", harness.DEFAULT_SEEDS)), train=train_config(cfg, args),
        rank=cfg.get("train", {}).get("rank", 20),
        train_fraction=cfg.get("split", {}).get("train_fraction", 0.9),
        topk=_topk(getattr(args, "topk", None), cfg), tau=tau,
        fairness_domain=_first(getattr(args, "fairness_domain", None), ev.get("fairness_domain"), "all"),
        hidden=ae_cfg.get("hidden", 512), dropout=ae_cfg.get("dropout", 0.7),
        output_mode=ae_cfg.get("output_mode"),
    )


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _std_mode(args, cfg):
    return _first(args.std_mode, cfg.get("std_mode"), "population")


def _progress(rec):
    print(f"  {rec.label} seed={rec.seed} rmse={rec.metrics['rmse']:.4f} dee={rec.metrics['dee']:.4f} "
          f"({rec.train_seconds:.1f}s)", file=sys.stderr)


def cmd_plan(args):
    cfg = load_config(args.config)
    plan = build_plan(cfg, args)
    std_mode = _std_mode(args, cfg)
    result = harness.run_plan(plan, threads=args.threads, std_mode=std_mode, progress=_progress)
    out = _out_dir(args.out_dir)
    harness.write_results_csv(result.rows, os.path.join(out, "results.csv"))
    harness.write_results_json(result, os.path.join(out, "results.json"), std_mode)
    topk = harness.topk_rows(result)
    if topk:
        harness.write_topk_csv(topk, os.path.join(out, "topk.csv"))
    if args.figures:
        from . import plots

        plots.cell_rate_bars(result.rows, os.path.join(out, "cell_rates.png"))
        if topk:
            plots.topk_lines(topk, os.path.join(out, "topk.png"))
    for r in result.rows:
        print(f"{r.label}: rmse {r.mean['rmse']:.4f} +/- {r.std['rmse']:.4f}, "
              f"dee {r.mean['dee']:.4f} +/- {r.std['dee']:.4f}")
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    if "sweep" not in cfg:
        raise UsageError("sweep needs a 'sweep' section with 'axis' and 'grid'")
    sw = cfg["sweep"]
    if not sw["grid"]:
        raise UsageError("sweep grid is empty")
    cells = harness.bias_sweep(
        synthetic_config(cfg), sw["axis"], sw["grid"], seeds=tuple(cfg.get("seeds", harness.DEFAULT_SEEDS)),
        train=train_config(cfg, args), rank=cfg.get("train", {}).get("rank", 20),
        threads=args.threads, std_mode=_std_mode(args, cfg))
    out = _out_dir(args.out_dir)
    harness.write_sweep_csv(cells, os.path.join(out, "sweep.csv"))
    if args.figures:
        from . import plots

        plots.sweep_heatmap(cells, os.path.join(out, "sweep.png"))
    for c in cells:
        print(f"{c.axis}=({c.first:g}, {c.second:g}): dee {c.dee_mean:.4f} +/- {c.dee_std:.4f}")
    return 0


BENCH_PENALTIES = [{"kind": k} for k in ("none", "dee", "der", "val", "ugf", "cvs")]


def cmd_bench(args):
    cfg = load_config(args.config)
    if "seeds" not in cfg:
        cfg = dict(cfg, seeds=[1])
    plan = build_plan(cfg, args, default_penalties=BENCH_PENALTIES)
    result = harness.run_plan(plan, threads=args.threads, std_mode=_std_mode(args, cfg))
    out = _out_dir(args.out_dir)
    path = os.path.join(out, "bench.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label,n_seeds,seconds_mean,seconds_std\n")
        for r in result.rows:
            fh.write(f"{r.label},{r.n_seeds},{harness.fmt(r.seconds_mean)},{harness.fmt(r.seconds_std)}\n")
            print(f"{r.label}: {r.seconds_mean:.2f}s")
    return 0


def _common_eval_flags(p):
    p.add_argument("--tau", type=float, help="preference threshold (default: 3 for star data, 0 for binary)")
    p.add_argument("--topk", help="comma-separated K values for the ranking measure")
    p.add_argument("--fairness-domain", choices=["all", "test"])
    p.add_argument("--train-fraction", type=float)


def _runner_flags(p, config_required=True):
    p.add_argument("--config", required=config_required)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: FAIRMC_THREADS or 1)")
    p.add_argument("--std-mode", choices=["population", "sample"])
    p.add_argument("--loss-reduction", choices=["mean", "sum"])
    p.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSVs")


def build_parser():
    parser = argparse.ArgumentParser(prog="fairmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset file")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model and report its metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--model", choices=["mf", "ae"])
    p.add_argument("--penalty", choices=_PENALTY_NAMES)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--rank", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--loss-reduction", choices=["mean", "sum"])
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--output-mode", choices=["clip", "tanh"])
    p.add_argument("--out-checkpoint")
    p.add_argument("--out-metrics", help="metrics JSON path (default: stdout)")
    _common_eval_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="split seed used at training time (default 1)")
    p.add_argument("--out", help="metrics JSON path (default: stdout)")
    p.add_argument("--csv", help="also write the metrics as a one-row CSV")
    _common_eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="unfair-model DEE over a bias grid")
    _runner_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plan", help="multi-seed comparison of penalties")
    _runner_flags(p)
    p.add_argument("--topk")
    p.add_argument("--fairness-domain", choices=["all", "test"])
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench", help="training time per penalty")
    _runner_flags(p, config_required=False)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"fairmc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FairMCError, ValueError, OSError) as exc:
        print(f"fairmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
