"""Command line entry point (``disbench``)."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import harness as H
from . import impossibility as imp
from . import metrics as M
from .errors import DisbenchError, UsageError
from .factors import VARIANTS, MicroSprites, TableGroundTruth, make_ground_truth
from .objectives import OBJECTIVES, ObjectiveConfig
from .vae import load_checkpoint, save_checkpoint, train_model


def _emit(payload, out):
    text = json.dumps(H._clean(payload), indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


def _metric_list(spec):
    if spec in (None, "", "all"):
        return list(M.METRIC_NAMES)
    names = [s.strip() for s in spec.split(",") if s.strip()]
    unknown = set(names) - set(M.METRIC_NAMES)
    if unknown:
        raise UsageError(f"unknown metrics {sorted(unknown)}; choose from {list(M.METRIC_NAMES)}")
    return names


def resolve_key(key):
    """``mig`` -> ``metrics.mig``; dotted keys pass through."""
    if "." in key or key in H.KEY_GROUPS:
        return key
    if key in M.METRIC_NAMES:
        return f"metrics.{key}"
    if key in H.UNSUPERVISED_KEYS:
        return f"unsupervised.{key}"
    raise UsageError(f"unknown score key {key!r}")


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except UsageError as exc:
            raise click.UsageError(str(exc), ctx) from None
        except DisbenchError as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from None


@click.group(cls=_Group)
def main():
    """Train VAEs, score representations and analyse sweeps."""


# -- dataset ------------------------------------------------------------------

@main.group(cls=_Group)
def dataset():
    """Ground-truth data sets."""


@dataset.command("preview")
@click.option("--model", "model_name", default="micro_sprites", show_default=True)
@click.option("--variant", type=click.Choice(VARIANTS), default="none", show_default=True)
@click.option("--n", default=16, show_default=True, help="number of samples")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def dataset_preview(model_name, variant, n, seed, out):
    """Write sampled observations and factors as .npy plus a JSON manifest."""
    gt = make_ground_truth(model_name, variant)
    factors, x = gt.sample(n, np.random.default_rng(seed))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "observations.npy", np.ascontiguousarray(x, dtype="<f8"))
    np.save(out / "factors.npy", np.ascontiguousarray(factors, dtype="<i8"))
    space = gt.factor_space
    manifest = {
        "model": model_name,
        "variant": variant,
        "seed": seed,
        "observations": {"file": "observations.npy", "shape": list(x.shape), "dtype": "<f8"},
        "factors": {"file": "factors.npy", "shape": list(factors.shape), "dtype": "<i8"},
        "factor_names": list(space.names),
        "cardinalities": list(space.cardinalities),
        "channels": getattr(gt, "channels", 1),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    click.echo(f"wrote {n} samples to {out}")


# -- entangle -----------------------------------------------------------------

@main.group(cls=_Group)
def entangle():
    """Marginal-preserving entanglers."""


@entangle.command("demo")
@click.option("--d", "dimension", default=2, show_default=True)
@click.option("--alpha", default=0.25, show_default=True)
@click.option("--n", default=10000, show_default=True)
@click.option("--marginal", type=click.Choice(["uniform", "normal"]), default="uniform",
              show_default=True)
@click.option("--points", default=100, show_default=True, help="points for the Jacobian check")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def entangle_demo(dimension, alpha, n, marginal, points, seed, out):
    """Build an entangler and report marginal invariance and Jacobian density."""
    ent = imp.build_entangler(dimension, alpha, marginal)
    rng = np.random.default_rng(seed)
    report = imp.marginal_invariance_report(ent, n, rng)
    lo, hi = ent.marginals[0].support
    if np.isfinite(lo):
        interior = rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), size=(points, dimension))
    else:
        interior = rng.uniform(-2.0, 2.0, size=(points, dimension))
    jac = imp.jacobian_summary(ent, interior)
    z = imp.sample_prior(ent, min(n, 1000), rng)
    roundtrip = float(np.abs(imp.apply(ent, imp.apply(ent, z), "inverse") - z).max())
    _emit({
        "dimension": dimension,
        "alpha": alpha,
        "marginal": marginal,
        "v": ent.v.tolist(),
        "matrix": ent.matrix.tolist(),
        "orthogonality_error": float(np.abs(ent.matrix.T @ ent.matrix - np.eye(dimension)).max()),
        "invariance": report,
        "jacobian": {"dense_fraction": jac["dense_fraction"], "floor": jac["floor"],
                     "min_abs_entry": float(min(jac["min_abs_entry"]))},
        "roundtrip_error": roundtrip,
    }, out)


# -- train / evaluate ---------------------------------------------------------

@main.command()
@click.option("--objective", type=click.Choice(OBJECTIVES), required=True)
@click.option("--value", type=float, required=True, help="the objective's hyperparameter")
@click.option("--dataset", "dataset_name", default="micro_sprites", show_default=True)
@click.option("--variant", type=click.Choice(VARIANTS), default="none", show_default=True)
@click.option("--preset", type=click.Choice(sorted(H.PRESETS)), default="desk", show_default=True)
@click.option("--steps", type=int, default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def train(objective, value, dataset_name, variant, preset, steps, seed, out):
    """Train one model and write a checkpoint directory."""
    preset_cfg = H.PRESETS[preset]
    steps = preset_cfg["steps"] if steps is None else steps
    gt = make_ground_truth(dataset_name, variant)
    trained = train_model(ObjectiveConfig(objective, value), preset_cfg["model"], gt, seed, steps,
                          ground_truth_spec={"name": dataset_name, "variant": variant})
    save_checkpoint(trained, out)
    click.echo(f"trained {objective}={value} for {steps} steps; checkpoint in {out}")


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--table", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--metrics", "metric_spec", default="all", show_default=True)
@click.option("--preset", type=click.Choice(sorted(H.PRESETS)), default="desk", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def evaluate(checkpoint, table, metric_spec, preset, seed, out):
    """Score a checkpoint, or an external factor/representation table."""
    if (checkpoint is None) == (table is None):
        raise UsageError("pass exactly one of --checkpoint or --table")
    names = _metric_list(metric_spec)
    settings = H.PRESETS[preset]["evaluation"]
    if table is not None:
        tgt = TableGroundTruth.from_csv(table)
        result = H.evaluate_table(tgt.factors, tgt.representations, settings, seed, names)
        record = {"schema": H.SCHEMA_VERSION, "source": {"table": str(table)}, **result}
    else:
        trained = load_checkpoint(checkpoint)
        spec = trained.ground_truth or {"name": "micro_sprites", "variant": "none"}
        gt = make_ground_truth(spec.get("name", "micro_sprites"), spec.get("variant", "none"))
        result = H.evaluate_trained(trained, gt, settings, seed, names)
        record = {
            "schema": H.SCHEMA_VERSION,
            "source": {"checkpoint": str(checkpoint)},
            "dataset": spec.get("name"),
            "variant": spec.get("variant"),
            "objective": trained.objective.kind,
            "hyperparameter_value": trained.objective.value,
            "seed": trained.seed,
            "steps": trained.steps,
            **result,
        }
    _emit(record, out)


# -- sweep / analyze / export -------------------------------------------------

@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, help="records file (overrides the config)")
@click.option("--workers", type=int, default=None)
def sweep(config_path, out, workers):
    """Run a configured sweep, appending one JSON record per run."""
    cfg = H.ExperimentConfig.from_file(config_path)
    if workers is not None:
        cfg.workers = workers
    total = len(cfg.runs())
    errors = 0
    for record in H.run_sweep(cfg, out):
        errors += record["status"] != "ok"
        click.echo(f"[{record['run_index'] + 1}/{total}] {record['objective']}="
                   f"{record['hyperparameter_value']} seed={record['seed']} {record['status']}",
                   err=True)
    click.echo(f"{total} records ({errors} errors) in {out or cfg.output}")


@main.group(cls=_Group)
def analyze():
    """Analyses over a records file."""


_in_option = click.option("--in", "in_path", default="records.jsonl", show_default=True,
                          type=click.Path(exists=True, dir_okay=False))
_out_option = click.option("--out", default=None, type=click.Path(dir_okay=False))


@analyze.command("correlations")
@_in_option
@click.option("--keys", default="metrics", show_default=True,
              help="comma list of score keys or groups (metrics, unsupervised)")
@click.option("--across-datasets", "score", default=None,
              help="correlate this score between datasets instead")
@_out_option
def analyze_correlations(in_path, keys, score, out):
    records = H.load_records(in_path)
    if score:
        labels, matrix = H.dataset_correlation_matrix(records, resolve_key(score))
    else:
        labels, matrix = H.rank_correlation_matrix(
            records, [resolve_key(k.strip()) for k in keys.split(",") if k.strip()])
    _emit({"keys": labels, "spearman": matrix}, out)


@analyze.command("variance")
@_in_option
@click.option("--score", default="mig", show_default=True)
@_out_option
def analyze_variance(in_path, score, out):
    records = H.load_records(in_path)
    key = resolve_key(score)
    by_dataset = {}
    for r in records:
        by_dataset.setdefault(f"{r['dataset']}/{r.get('variant', 'none')}", []).append(r)
    _emit({"score": key,
           "datasets": {name: H.variance_decomposition(rs, key) for name, rs in sorted(by_dataset.items())}},
          out)


@analyze.command("transfer")
@_in_option
@click.option("--mode", default="same-metric,same-dataset", show_default=True,
              help="same|diff metric, same|diff dataset")
@click.option("--keys", default="metrics", show_default=True)
@click.option("--trials", default=10000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@_out_option
def analyze_transfer(in_path, mode, keys, trials, seed, out):
    records = H.load_records(in_path)
    p = H.transfer_selection_probability(
        records, trials, mode, np.random.default_rng(seed),
        [resolve_key(k.strip()) for k in keys.split(",") if k.strip()])
    _emit({"mode": mode, "trials": trials, "probability": p}, out)


@main.command("export")
@_in_option
@click.option("--format", "fmt", default="csv", show_default=True)
@click.option("--selection", default=None, help="filter such as objective=beta_vae")
@click.option("--out", default=None, type=click.Path(dir_okay=False))
def export_cmd(in_path, fmt, selection, out):
    """Write records as CSV or JSONL with 9 significant digits."""
    if fmt not in ("csv", "jsonl"):
        raise UsageError(f"unknown export format {fmt!r}")
    out = out or str(Path(in_path).with_suffix(f".export.{fmt}"))
    H.export(H.load_records(in_path), out, fmt, selection)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    sys.exit(main())
