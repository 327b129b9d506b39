import csv
import json
import math

import numpy as np
import pytest

from fairmc import harness, mf
from fairmc.core import GroupAssignment
from fairmc.errors import DivergenceError, InvalidInputError
from fairmc.kde import PenaltyConfig
from fairmc.synthgen import SyntheticConfig

SMALL = SyntheticConfig(n=20, m=16, rank=4, q=[[0.6, 0.3], [0.3, 0.6]])
QUICK = mf.TrainConfig(iterations=30, learning_rate=1e-2)


def small_plan(**kw):
    base = dict(source=SMALL, penalties=(PenaltyConfig("none"), PenaltyConfig("dee", lam=0.5)),
                seeds=(1, 2), train=QUICK, rank=4)
    base.update(kw)
    return harness.ExperimentPlan(**base)


def test_single_seed_has_zero_std():
    result = harness.run_plan(small_plan(seeds=(3,)))
    for row in result.rows:
        assert row.n_seeds == 1
        assert all(v == 0.0 for k, v in row.std.items() if not math.isnan(row.mean[k]))


def test_runs_are_deterministic():
    a = harness.run_plan(small_plan())
    b = harness.run_plan(small_plan())
    assert [r.metrics for r in a.runs] == [r.metrics for r in b.runs]
    assert [r.config_hash for r in a.runs] == [r.config_hash for r in b.runs]


def test_seed_order_does_not_change_aggregates():
    a = harness.run_plan(small_plan(seeds=(1, 2, 3)))
    b = harness.run_plan(small_plan(seeds=(3, 1, 2)))
    for ra, rb in zip(a.rows, b.rows):
        assert ra.mean == rb.mean and ra.std == rb.std


def test_summarize():
    assert harness.summarize([2.0]) == (2.0, 0.0)
    mean, std = harness.summarize([1.0, 3.0, None, float("nan")])
    assert (mean, std) == (2.0, 1.0)
    assert harness.summarize([1.0, 3.0], "sample")[1] == pytest.approx(math.sqrt(2))
    assert all(math.isnan(v) for v in harness.summarize([None]))
    with pytest.raises(InvalidInputError):
        harness.summarize([1.0, 2.0], "robust")


def test_default_labels():
    penalties = [PenaltyConfig("none", lam=0.5), PenaltyConfig("dee", lam=0.0), PenaltyConfig("val")]
    assert harness.default_labels(penalties) == ("unfair@lam=0.5,tau=0", "unfair@lam=0,tau=0", "val")
    with pytest.raises(InvalidInputError):
        small_plan(labels=("a", "a"))
    with pytest.raises(InvalidInputError):
        small_plan(seeds=())
    with pytest.raises(InvalidInputError):
        small_plan(model="forest")


def test_one_cell_sweep_matches_direct_run():
    cells = harness.bias_sweep(SMALL, "q", [(0.6, 0.3)], seeds=(1, 2), train=QUICK, rank=4)
    direct = harness.run_plan(small_plan(penalties=(PenaltyConfig("none", lam=0.0),))).rows[0]
    assert len(cells) == 1
    assert cells[0].dee_mean == direct.mean["dee"] and cells[0].dee_std == direct.std["dee"]
    with pytest.raises(InvalidInputError):
        harness.bias_sweep(SMALL, "q", [], seeds=(1,))
    with pytest.raises(InvalidInputError):
        harness.bias_sweep(SMALL, "r", [(0.5, 0.5)], seeds=(1,))


def test_topk_sweep():
    groups = GroupAssignment([0, 0, 1, 1], [0, 1, 0, 1, 0])
    pred = np.random.default_rng(0).normal(size=(4, 5))
    rows = harness.topk_sweep({"a": pred}, [5], groups)
    assert rows == [("a", 5, 0.0)]
    assert len(harness.topk_sweep({"a": pred}, [1, 3], groups)) == 2
    with pytest.raises(InvalidInputError):
        harness.topk_sweep({"a": pred}, [6], groups)


def test_plan_topk_rows():
    result = harness.run_plan(small_plan(topk=(2, 16)))
    rows = harness.topk_rows(result)
    assert [(lab, k) for lab, k, _, _ in rows] == [(lab, k) for lab in result.plan.labels for k in (2, 16)]
    assert all(mean == 0.0 for _, k, mean, _ in rows if k == 16)


def test_writers(tmp_path):
    result = harness.run_plan(small_plan(topk=(3,)))
    harness.write_results_csv(result.rows, tmp_path / "results.csv")
    with open(tmp_path / "results.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert [r["label"] for r in table] == list(result.plan.labels)
    for col in ("penalty", "lambda", "tau", "n_seeds", "rmse_mean", "dee_std", "rate_u0_i1_mean",
                "dee_ranking_K3_mean", "seconds_mean"):
        assert col in table[0]
    # 17 significant digits round-trip exactly
    assert float(table[1]["dee_mean"]) == result.rows[1].mean["dee"]

    harness.write_results_json(result, tmp_path / "results.json")
    doc = json.loads((tmp_path / "results.json").read_text())
    assert doc["plan"]["seeds"] == [1, 2]
    assert len(doc["runs"]) == 4
    assert doc["rows"][0]["mean"]["rmse"] == result.rows[0].mean["rmse"]

    harness.write_topk_csv(harness.topk_rows(result), tmp_path / "topk.csv")
    lines = (tmp_path / "topk.csv").read_text().splitlines()
    assert lines[0] == "label,k,dee_ranking_mean,dee_ranking_std" and len(lines) == 3

    cells = [harness.SweepCell("p", 0.4, 0.1, 0.25, float("nan"), 1)]
    harness.write_sweep_csv(cells, tmp_path / "sweep.csv")
    assert (tmp_path / "sweep.csv").read_text().splitlines() == [
        "axis,first,second,dee_mean,dee_std,n_seeds", "p,0.40000000000000002,0.10000000000000001,0.25,,1"]


def test_fmt():
    assert harness.fmt(None) == "" and harness.fmt(float("nan")) == ""
    assert harness.fmt(3) == "3"
    assert float(harness.fmt(0.1)) == 0.1


def test_divergence_names_the_run():
    plan = small_plan(penalties=(PenaltyConfig("none"),), seeds=(4,),
                      train=mf.TrainConfig(iterations=20, learning_rate=1e200))
    with pytest.raises(DivergenceError) as info:
        harness.run_plan(plan)
    assert "seed=4" in str(info.value) and "unfair" in str(info.value)


def test_autoencoder_plan_runs():
    plan = small_plan(model="ae", hidden=8, penalties=(PenaltyConfig("none"),), seeds=(1,))
    row = harness.run_plan(plan).rows[0]
    assert np.isfinite(row.mean["rmse"]) and 0.0 <= row.mean["dee"] <= 2.0
