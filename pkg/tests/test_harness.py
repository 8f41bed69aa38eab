import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disbench import harness as H
from disbench import metrics as M
from disbench.errors import ConfigurationError, InputError, UsageError

TINY_EVAL = dict(n_train=100, n_test=60, n_unsupervised=200, batch_size=8,
                 downstream_sizes=[10, 40], downstream_test=60, gbt_stages=3)


def tiny_config(tmp_path, values=(1, 4), seeds=2, **extra):
    return H.ExperimentConfig(
        datasets=[{"name": "factor_oracle"}],
        objectives=[{"kind": "beta_vae", "values": list(values)}],
        seeds=seeds, preset="smoke", steps=4, output=str(tmp_path / "records.jsonl"),
        evaluation=TINY_EVAL, **extra)


def synthetic_records(score, datasets=("a", "b"), objectives=("beta_vae", "factor_vae"),
                      values=(1.0, 2.0, 3.0), seeds=5, metrics=("mig", "sap")):
    records = []
    for ds in datasets:
        for obj in objectives:
            for v in values:
                for s in range(seeds):
                    rec = {"schema": H.SCHEMA_VERSION, "dataset": ds, "variant": "none",
                           "objective": obj, "hyperparameter_name": "x", "hyperparameter_value": v,
                           "seed": s, "status": "ok", "run_index": len(records),
                           "metrics": {m: score(ds, obj, v, s, m) for m in metrics}}
                    records.append(rec)
    return records


# -- configuration and sweeps -------------------------------------------------

def test_run_count():
    cfg = H.ExperimentConfig(objectives=[{"kind": "dip_vae_i", "values": [1, 2, 5, 10, 20, 50]}], seeds=2)
    runs = cfg.runs()
    assert len(runs) == 12
    assert [r["run_index"] for r in runs] == list(range(12))


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        H.ExperimentConfig(preset="huge")
    with pytest.raises(ConfigurationError):
        H.ExperimentConfig(objectives=[{"kind": "vanilla", "values": [1]}])
    with pytest.raises(ConfigurationError):
        H.ExperimentConfig(metrics=["accuracy"])
    with pytest.raises(ConfigurationError):
        H.ExperimentConfig.from_dict({"seedz": 3})
    with pytest.raises(ConfigurationError):
        H.ExperimentConfig.from_dict({"seeds": "many"})
    assert H.ExperimentConfig(metrics="all").metrics == list(M.METRIC_NAMES)
    assert H.ExperimentConfig(metrics="mig, sap").metrics == ["mig", "sap"]
    path = tmp_path / "cfg.json"
    cfg = tiny_config(tmp_path)
    path.write_text(json.dumps(cfg.to_dict()))
    assert H.ExperimentConfig.from_file(path) == cfg


def test_paper_preset_defaults_match_grids():
    cfg = H.ExperimentConfig(preset="paper")
    assert cfg.train_steps == 300_000
    assert {o["kind"]: tuple(o["values"]) for o in cfg.objectives}["annealed_vae"] == (5, 10, 25, 50, 75, 100)
    assert cfg.model_config().learning_rate == 1e-4
    gbt = H.ExperimentConfig(preset="paper-gbt").eval_settings()
    assert (gbt.gbt_stages, gbt.gbt_depth) == (100, 3)


def test_seed_derivation_collision_free():
    seeds = {H.derive_seed(0, i) for i in range(20000)}
    assert len(seeds) == 20000
    assert H.derive_seed(0, 5) == H.derive_seed(0, 5) != H.derive_seed(1, 5)


def test_sweep_is_byte_identical_modulo_wall_time(tmp_path):
    cfg = tiny_config(tmp_path, seeds=1)
    first = list(H.run_sweep(cfg, tmp_path / "a.jsonl"))
    second = list(H.run_sweep(cfg, tmp_path / "b.jsonl"))
    assert len(first) == 2 and all(r["status"] == "ok" for r in first)

    def strip(path):
        out = []
        for line in path.read_text().splitlines():
            rec = json.loads(line)
            rec.pop("wall_time_s")
            out.append(json.dumps(rec, sort_keys=True))
        return out

    assert strip(tmp_path / "a.jsonl") == strip(tmp_path / "b.jsonl")
    rec = first[0]
    assert rec["schema"] == H.SCHEMA_VERSION
    assert set(rec["metrics"]) == {"beta_vae_score", "factor_vae_score", "mig", "modularity",
                                   "dci_disentanglement", "sap"}
    assert set(rec["unsupervised"]) == set(H.UNSUPERVISED_KEYS)
    assert set(rec["downstream"]) == {"logistic", "tree"}


def test_nan_hyperparameter_gives_one_error_record(tmp_path):
    cfg = tiny_config(tmp_path, values=(1, float("nan")), seeds=1)
    records = list(H.run_sweep(cfg))
    assert [r["status"] for r in records] == ["ok", "error"]
    err = records[1]["error"]
    assert err["step"] == 0 and "recon" in err["terms"]
    lines = (tmp_path / "records.jsonl").read_text().splitlines()
    assert len(lines) == 2 and all(json.loads(l) for l in lines)


def test_unwritable_output_aborts_before_training(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = tiny_config(tmp_path)
    with pytest.raises(ConfigurationError):
        next(H.run_sweep(cfg, blocker / "records.jsonl"))


def test_parallel_workers_match_serial(tmp_path):
    serial = list(H.run_sweep(tiny_config(tmp_path, seeds=1), tmp_path / "s.jsonl"))
    parallel = list(H.run_sweep(tiny_config(tmp_path, seeds=1, workers=2), tmp_path / "p.jsonl"))
    for a, b in zip(serial, parallel):
        a, b = dict(a), dict(b)
        a.pop("wall_time_s"), b.pop("wall_time_s")
        assert a == b


# -- analyses -----------------------------------------------------------------

def test_rank_correlation_duplicates_negation_and_constant():
    rng = np.random.default_rng(0)
    records = [{"status": "ok", "metrics": {"a": x, "b": -x, "c": 1.0}} for x in rng.normal(size=30)]
    keys, m = H.rank_correlation_matrix(records, ["metrics.a", "metrics.a", "metrics.b", "metrics.c"])
    assert m[0][1] == pytest.approx(1.0) and m[0][0] == pytest.approx(1.0)
    assert m[0][2] == pytest.approx(-1.0)
    assert m[0][3] is None and m[3][3] is None


def test_rank_correlation_null_is_small():
    rng = np.random.default_rng(1)
    records = [{"status": "ok", "metrics": dict(zip("abcd", rng.uniform(size=4)))} for _ in range(300)]
    _, m = H.rank_correlation_matrix(records, [f"metrics.{k}" for k in "abcd"])
    off = [abs(m[i][j]) for i in range(4) for j in range(4) if i != j]
    assert max(off) < 0.15


def test_key_groups_expand():
    assert H.expand_keys("metrics")[0] == "metrics.beta_vae_score"
    assert len(H.expand_keys("metrics,unsupervised")) == 13


def test_dataset_correlation_matrix():
    recs = synthetic_records(lambda ds, o, v, s, m: v * 10 + s + (0.5 if ds == "b" else 0))
    labels, m = H.dataset_correlation_matrix(recs, "metrics.mig")
    assert labels == ["a/none", "b/none"]
    assert m[0][1] == pytest.approx(1.0)


def test_variance_decomposition_examples():
    exact = synthetic_records(lambda ds, o, v, s, m: 1.0 if o == "beta_vae" else 3.0, datasets=("a",))
    out = H.variance_decomposition(exact, "metrics.mig")
    assert out["r2_model"] == pytest.approx(1.0) and out["r2_model_x_reg"] == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    noise = synthetic_records(lambda *a: rng.normal(), datasets=("a",), seeds=500)
    out = H.variance_decomposition(noise, "metrics.mig")
    assert out["r2_model"] < 0.01 and out["r2_model_x_reg"] < 0.02
    with pytest.raises(InputError):
        H.variance_decomposition(synthetic_records(lambda *a: 1.0, objectives=("beta_vae",)), "metrics.mig")


@settings(max_examples=25)
@given(st.integers(0, 2 ** 31))
def test_variance_decomposition_nested(seed):
    rng = np.random.default_rng(seed)
    recs = synthetic_records(lambda *a: float(rng.normal()), datasets=("a",), seeds=3)
    out = H.variance_decomposition(recs, "metrics.mig")
    assert out["r2_model_x_reg"] >= out["r2_model"] - 1e-12


@pytest.mark.parametrize("mode", list(H.TRANSFER_MODES))
def test_transfer_dominance_is_one(mode):
    recs = synthetic_records(lambda ds, o, v, s, m: 10.0 if (o, v) == ("factor_vae", 2.0) else float(s % 3))
    assert H.transfer_selection_probability(recs, 2000, mode, np.random.default_rng(0),
                                            ["metrics.mig", "metrics.sap"]) == 1.0


def test_transfer_random_scores_is_half():
    rng = np.random.default_rng(0)
    recs = synthetic_records(lambda *a: float(rng.uniform()), seeds=10)
    p = H.transfer_selection_probability(recs, 10000, "same-metric,same-dataset",
                                         np.random.default_rng(1), ["metrics.mig", "metrics.sap"])
    assert abs(p - 0.5) < 0.03


def test_transfer_insufficient_axes():
    one_ds = synthetic_records(lambda *a: 1.0, datasets=("a",))
    with pytest.raises(ConfigurationError):
        H.transfer_selection_probability(one_ds, 10, "same-metric,diff-dataset",
                                         metric_keys=["metrics.mig"])
    one_seed = synthetic_records(lambda *a: 1.0, seeds=1)
    with pytest.raises(ConfigurationError):
        H.transfer_selection_probability(one_seed, 10, metric_keys=["metrics.mig"])
    with pytest.raises(ConfigurationError):
        H.transfer_selection_probability(one_ds, 10, "sideways")


def test_analyses_are_order_insensitive():
    rng = np.random.default_rng(3)
    recs = synthetic_records(lambda *a: float(rng.uniform()))
    shuffled = [recs[i] for i in rng.permutation(len(recs))]
    assert H.rank_correlation_matrix(recs, ["metrics.mig", "metrics.sap"]) == \
        H.rank_correlation_matrix(shuffled, ["metrics.mig", "metrics.sap"])
    assert H.variance_decomposition(recs, "metrics.mig")["r2_model"] == pytest.approx(
        H.variance_decomposition(shuffled, "metrics.mig")["r2_model"], abs=1e-12)
    p1 = H.transfer_selection_probability(recs, 500, rng=np.random.default_rng(0), metric_keys=["metrics.mig"])
    p2 = H.transfer_selection_probability(shuffled, 500, rng=np.random.default_rng(0), metric_keys=["metrics.mig"])
    assert p1 == p2


# -- export -------------------------------------------------------------------

@pytest.fixture
def export_records():
    rng = np.random.default_rng(0)
    recs = synthetic_records(lambda *a: float(rng.normal()), datasets=("a",), seeds=2)
    recs[0]["metrics"]["mig"] = None
    return recs


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_export_round_trip(tmp_path, export_records, fmt):
    path = tmp_path / f"out.{fmt}"
    H.export(export_records, path, fmt)
    again = H.import_records(path, fmt)
    H.export(again, tmp_path / f"again.{fmt}", fmt)
    assert path.read_text() == (tmp_path / f"again.{fmt}").read_text()
    for a, b in zip(export_records, again):
        for m in ("mig", "sap"):
            x, y = a["metrics"][m], b["metrics"].get(m)
            if x is None:
                assert y is None
            else:
                assert y == pytest.approx(x, rel=1e-8)


def test_csv_header_and_precision(tmp_path, export_records):
    H.export(export_records, tmp_path / "o.csv", "csv")
    with open(tmp_path / "o.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0][:len(H.BASE_COLUMNS)]) == H.BASE_COLUMNS
    assert rows[1][0] == H.SCHEMA_VERSION
    col = rows[0].index("metrics.sap")
    digits = rows[1][col].lstrip("-").replace(".", "").split("e")[0].lstrip("0")
    assert len(digits) <= 9


def test_export_selection_and_errors(tmp_path, export_records):
    H.export(export_records, tmp_path / "sel.jsonl", "jsonl", "objective=beta_vae")
    got = H.import_records(tmp_path / "sel.jsonl")
    assert got and all(r["objective"] == "beta_vae" for r in got)
    with pytest.raises(UsageError):
        H.export(export_records, tmp_path / "x.xml", "xml")
    with pytest.raises(InputError):
        H.export([], tmp_path / "x.csv", "csv")
    with pytest.raises(ConfigurationError):
        H.select(export_records, "objective")


def test_records_have_no_nan_literals(tmp_path):
    cfg = tiny_config(tmp_path, values=(float("nan"),), seeds=1)
    list(H.run_sweep(cfg))
    text = (tmp_path / "records.jsonl").read_text()
    assert "NaN" not in text
    assert math.isnan(cfg.runs()[0]["value"])
