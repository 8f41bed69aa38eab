"""Sweeps over (dataset, objective, hyperparameter, seed) and the analyses on their records."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics as M
from . import stats
from .errors import ConfigurationError, DisbenchError, InputError, NonFiniteError, UsageError
from .factors import make_ground_truth
from .objectives import HYPERPARAMETER_NAMES, OBJECTIVES, PAPER_GRIDS, ObjectiveConfig
from .vae import EncoderRepresentation, ModelConfig, train_model

SCHEMA_VERSION = "disbench.runrecord/1"
UNSUPERVISED_KEYS = ("recon", "kl", "elbo", "tc_mean", "tc_sampled", "mi_mean", "mi_sampled")
BASE_COLUMNS = ("schema", "run_index", "dataset", "variant", "objective", "hyperparameter_name",
                "hyperparameter_value", "seed", "run_seed", "steps", "status", "wall_time_s")


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class EvalSettings:
    """Sample sizes for every evaluation step of a run."""

    n_train: int = 10000
    n_test: int = 5000
    n_unsupervised: int = 10000
    batch_size: int = 64
    bins: int = 20
    downstream_sizes: tuple = (10, 100, 1000)
    downstream_test: int = 5000
    downstream_learners: tuple = ("logistic", "tree")
    gbt_stages: int = 10
    gbt_depth: int = 2


PRESETS = {
    "paper": dict(steps=300_000, seeds=50, model=ModelConfig.paper(),
                  evaluation=EvalSettings(downstream_sizes=(10, 100, 1000, 10000),
                                          gbt_stages=100, gbt_depth=3)),
    "desk": dict(steps=5000, seeds=5, model=ModelConfig(), evaluation=EvalSettings()),
    # desk training, but boosted trees at the usual library defaults (slow)
    "paper-gbt": dict(steps=5000, seeds=5, model=ModelConfig(),
                      evaluation=EvalSettings(gbt_stages=100, gbt_depth=3)),
    "smoke": dict(steps=50, seeds=2, model=ModelConfig(latent_dim=3, hidden=(16,), batch_size=16,
                                                       discriminator_hidden=(16,)),
                  evaluation=EvalSettings(n_train=300, n_test=200, n_unsupervised=500,
                                          batch_size=16, downstream_sizes=(10, 100),
                                          downstream_test=200)),
}


@dataclass
class ExperimentConfig:
    datasets: list = field(default_factory=lambda: [{"name": "micro_sprites", "variant": "none"}])
    objectives: list = field(default_factory=lambda: [
        {"kind": k, "values": list(PAPER_GRIDS[k])} for k in OBJECTIVES])
    seeds: int = 5
    base_seed: int = 0
    preset: str = "desk"
    steps: int | None = None
    metrics: list = field(default_factory=lambda: list(M.METRIC_NAMES))
    output: str = "records.jsonl"
    workers: int = 1
    model: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}")
        for o in self.objectives:
            if o.get("kind") not in OBJECTIVES:
                raise ConfigurationError(f"unknown objective {o.get('kind')!r}")
        if isinstance(self.metrics, str):
            spec = self.metrics.strip()
            self.metrics = (list(M.METRIC_NAMES) if spec == "all"
                            else [m.strip() for m in spec.split(",") if m.strip()])
        unknown = set(self.metrics) - set(M.METRIC_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown metrics {sorted(unknown)}")
        for name in ("seeds", "base_seed", "workers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"{name} must be an integer, got {value!r}")
        if self.steps is not None and (isinstance(self.steps, bool) or not isinstance(self.steps, int)):
            raise ConfigurationError(f"steps must be an integer, got {self.steps!r}")
        if self.seeds < 1:
            raise ConfigurationError("seeds must be >= 1")

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown config fields {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return asdict(self)

    @property
    def train_steps(self):
        return self.steps if self.steps is not None else PRESETS[self.preset]["steps"]

    def model_config(self):
        base = PRESETS[self.preset]["model"]
        return replace(base, **{k: tuple(v) if isinstance(v, list) else v
                                for k, v in self.model.items()})

    def eval_settings(self):
        base = PRESETS[self.preset]["evaluation"]
        return replace(base, **{k: tuple(v) if isinstance(v, list) else v
                                for k, v in self.evaluation.items()})

    def runs(self):
        """Every run as a dict, in run-index order."""
        out = []
        for ds in self.datasets:
            for o in self.objectives:
                for value in o["values"]:
                    for seed in range(self.seeds):
                        out.append({"run_index": len(out), "dataset": ds["name"],
                                    "variant": ds.get("variant", "none"), "objective": o["kind"],
                                    "value": float(value), "seed": seed})
        return out


def derive_seed(base_seed, run_index):
    """Independent 64-bit seed per run from a spawn-keyed SeedSequence."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(run_index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- evaluation ---------------------------------------------------------------

def _finite(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    return _finite(obj) if isinstance(obj, float) else obj


METRIC_FUNCTIONS = {
    "beta_vae_score": lambda gt, rep, rng, s: M.beta_vae_metric(
        gt, rep, rng, s.n_train, s.n_test, s.batch_size),
    "factor_vae_score": lambda gt, rep, rng, s: M.factor_vae_metric(
        gt, rep, rng, s.n_train, s.n_test, s.batch_size, strict=False),
    "mig": lambda gt, rep, rng, s: M.mig(gt, rep, rng, s.n_train, s.bins),
    "modularity": lambda gt, rep, rng, s: M.modularity(gt, rep, rng, s.n_train, s.bins),
    "dci_disentanglement": lambda gt, rep, rng, s: M.dci_disentanglement(
        gt, rep, rng, s.n_train, s.n_test, s.gbt_stages, s.gbt_depth),
    "sap": lambda gt, rep, rng, s: M.sap(gt, rep, rng, s.n_train, s.n_test),
}


def evaluate_trained(trained, ground_truth, settings: EvalSettings, seed, metric_names=None,
                     unsupervised=True, downstream=True):
    """All scores for one trained model. Each metric gets its own RNG stream."""
    names = list(metric_names or M.METRIC_NAMES)
    streams = np.random.SeedSequence(int(seed)).spawn(len(M.METRIC_NAMES) + 2)
    rep = EncoderRepresentation(trained.model, "mean")
    out = {"metrics": {}, "unsupervised": {}, "downstream": {}, "errors": {}}
    for i, name in enumerate(M.METRIC_NAMES):
        if name not in names:
            continue
        try:
            out["metrics"][name] = METRIC_FUNCTIONS[name](
                ground_truth, rep, np.random.default_rng(streams[i]), settings).score
        except DisbenchError as exc:
            out["metrics"][name] = None
            out["errors"][name] = str(exc)
    if unsupervised:
        out["unsupervised"] = M.unsupervised_scores(
            trained, ground_truth, np.random.default_rng(streams[-2]),
            settings.n_unsupervised, settings.bins)
    if downstream:
        rng = np.random.default_rng(streams[-1])
        f_train, c_train = M.sample_codes(ground_truth, rep, max(settings.downstream_sizes), rng)
        f_test, c_test = M.sample_codes(ground_truth, rep, settings.downstream_test, rng)
        for learner in settings.downstream_learners:
            res = M.downstream_from_samples(f_train, c_train, f_test, c_test, learner,
                                            settings.downstream_sizes, n_stages=settings.gbt_stages,
                                            depth=settings.gbt_depth)
            out["downstream"][learner] = {
                "accuracy": {str(k): v for k, v in res["accuracy"].items()},
                "efficiency": res["efficiency"],
                "efficiency_sizes": res["efficiency_sizes"],
            }
    if not out["errors"]:
        del out["errors"]
    return out


UNAVAILABLE = "unavailable: requires generative access"


def evaluate_table(factors, codes, settings: EvalSettings, seed, metric_names=None):
    """Scores computable from a fixed (factors, representation) table.

    Rows are shuffled and split in half into train and test sets.  The
    intervention-based metrics are reported as unavailable.
    """
    factors = np.asarray(factors)
    codes = np.asarray(codes, dtype=np.float64)
    if len(factors) < 4:
        raise InputError("a table needs at least four rows")
    names = list(metric_names or M.METRIC_NAMES)
    rng = np.random.default_rng(int(seed))
    order = rng.permutation(len(factors))
    half = len(order) // 2
    tr, te = order[:half], order[half:]
    out = {"metrics": {}, "unavailable": {}}
    computed = {
        "mig": lambda: M.mig_from_samples(factors, codes, None, settings.bins),
        "modularity": lambda: M.modularity_from_samples(factors, codes, settings.bins),
        "dci_disentanglement": lambda: M.dci_from_samples(
            factors[tr], codes[tr], factors[te], codes[te], settings.gbt_stages, settings.gbt_depth),
        "sap": lambda: M.sap_from_samples(factors[tr], codes[tr], factors[te], codes[te]),
    }
    for name in M.METRIC_NAMES:
        if name not in names:
            continue
        if name in M.INTERVENTION_METRICS:
            out["metrics"][name] = None
            out["unavailable"][name] = UNAVAILABLE
            continue
        try:
            out["metrics"][name] = computed[name]().score
        except DisbenchError as exc:
            out["metrics"][name] = None
            out["unavailable"][name] = str(exc)
    return out


def execute_run(run, config: ExperimentConfig):
    """Train and evaluate one run; failures become error records."""
    started = time.perf_counter()
    run_seed = derive_seed(config.base_seed, run["run_index"])
    objective = ObjectiveConfig(run["objective"], run["value"])
    record = {
        "schema": SCHEMA_VERSION,
        "run_index": run["run_index"],
        "dataset": run["dataset"],
        "variant": run["variant"],
        "objective": run["objective"],
        "hyperparameter_name": HYPERPARAMETER_NAMES[run["objective"]],
        "hyperparameter_value": run["value"],
        "seed": run["seed"],
        "run_seed": run_seed,
        "steps": config.train_steps,
        "status": "ok",
    }
    try:
        gt = make_ground_truth(run["dataset"], run["variant"])
        trained = train_model(objective, config.model_config(), gt, run_seed, config.train_steps,
                              ground_truth_spec={"name": run["dataset"], "variant": run["variant"]})
        record.update(evaluate_trained(trained, gt, config.eval_settings(), run_seed ^ 0x5EED,
                                       config.metrics))
    except NonFiniteError as exc:
        record["status"] = "error"
        record["error"] = {"message": str(exc), "step": exc.step, "terms": exc.terms}
    except (DisbenchError, FloatingPointError, np.linalg.LinAlgError) as exc:
        record["status"] = "error"
        record["error"] = {"message": f"{type(exc).__name__}: {exc}", "step": None, "terms": {}}
    record["wall_time_s"] = time.perf_counter() - started
    return _clean(record)


def _execute(args):
    return execute_run(*args)


def dumps_record(record):
    return json.dumps(record, sort_keys=True, allow_nan=False)


def run_sweep(config: ExperimentConfig, output=None):
    """Run every configured run and append its record to the JSONL output.

    Yields records in run-index order.  The output is opened before any
    training so an unwritable path fails immediately.
    """
    path = Path(output or config.output)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        handle = open(path, "w", encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot write records to {path}: {exc}") from exc
    runs = config.runs()
    with handle:
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                for record in pool.map(_execute, [(r, config) for r in runs]):
                    handle.write(dumps_record(record) + "\n")
                    handle.flush()
                    yield record
        else:
            for run in runs:
                record = execute_run(run, config)
                handle.write(dumps_record(record) + "\n")
                handle.flush()
                yield record


def load_records(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# -- record access ------------------------------------------------------------

KEY_GROUPS = {
    "metrics": tuple(f"metrics.{m}" for m in M.METRIC_NAMES),
    "unsupervised": tuple(f"unsupervised.{u}" for u in UNSUPERVISED_KEYS),
}


def expand_keys(keys):
    if isinstance(keys, str):
        keys = [k.strip() for k in keys.split(",") if k.strip()]
    out = []
    for k in keys:
        out.extend(KEY_GROUPS.get(k, (k,)))
    return out


def get_value(record, key):
    node = record
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node if isinstance(node, (int, float)) and not isinstance(node, bool) else None


def _ok(records):
    return [r for r in records if r.get("status", "ok") == "ok"]


def setting_of(record):
    return (record["objective"], float(record["hyperparameter_value"]))


# -- analyses -----------------------------------------------------------------

def rank_correlation_matrix(records, keys):
    """Spearman correlation between score keys over records.

    Returns ``(keys, matrix)``; undefined entries (constant columns or fewer
    than two paired records) are ``None``.
    """
    keys = expand_keys(keys)
    records = _ok(records)
    columns = [[get_value(r, k) for r in records] for k in keys]
    n = len(keys)
    matrix = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            pairs = [(a, b) for a, b in zip(columns[i], columns[j]) if a is not None and b is not None]
            rho = stats.spearman([p[0] for p in pairs], [p[1] for p in pairs]) if len(pairs) >= 2 else None
            matrix[i][j] = matrix[j][i] = rho
    return keys, matrix


def dataset_correlation_matrix(records, score_key):
    """Spearman correlation of one score across datasets, pairing runs by setting and seed."""
    records = _ok(records)
    datasets = sorted({(r["dataset"], r.get("variant", "none")) for r in records})
    table = {d: {} for d in datasets}
    for r in records:
        v = get_value(r, score_key)
        if v is not None:
            table[(r["dataset"], r.get("variant", "none"))][setting_of(r) + (r["seed"],)] = v
    n = len(datasets)
    matrix = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            common = sorted(set(table[datasets[i]]) & set(table[datasets[j]]))
            rho = None
            if len(common) >= 2:
                rho = stats.spearman([table[datasets[i]][c] for c in common],
                                     [table[datasets[j]][c] for c in common])
            matrix[i][j] = matrix[j][i] = rho
    return [f"{d}/{v}" for d, v in datasets], matrix


def variance_decomposition(records, score_key):
    """R^2 of the score explained by the objective, and by objective x hyperparameter."""
    rows = [(r, get_value(r, score_key)) for r in _ok(records)]
    rows = [(r, v) for r, v in rows if v is not None]
    scores = [v for _, v in rows]
    objectives = [r["objective"] for r, _ in rows]
    settings = [setting_of(r) for r, _ in rows]
    if len(set(objectives)) < 2:
        raise InputError("variance decomposition needs at least two objectives")
    if len({s[1] for s in settings}) < 2:
        raise InputError("variance decomposition needs at least two regularisation values")
    coarse = stats.ols_variance_explained(scores, objectives, return_details=True)
    fine = stats.ols_variance_explained(scores, settings, return_details=True)
    return {"r2_model": coarse["r2"], "r2_model_x_reg": fine["r2"], "n": len(scores),
            "rank_deficient": coarse["rank_deficient"] or fine["rank_deficient"]}


TRANSFER_MODES = {
    "same-metric,same-dataset": ("same", "same"),
    "same-metric,diff-dataset": ("same", "different"),
    "diff-metric,same-dataset": ("different", "same"),
    "diff-metric,diff-dataset": ("different", "different"),
}


def _parse_mode(mode):
    if isinstance(mode, tuple):
        return mode
    key = mode.replace(" ", "").replace("different", "diff")
    if key not in TRANSFER_MODES:
        raise ConfigurationError(f"unknown transfer mode {mode!r}; use one of {list(TRANSFER_MODES)}")
    return TRANSFER_MODES[key]


def transfer_selection_probability(records, trials=10000, mode="same-metric,same-dataset",
                                   rng=None, metric_keys="metrics"):
    """Probability that transferred model selection beats a random model.

    Each trial draws a source (seed, metric, dataset), picks the setting
    (objective, hyperparameter) with the best source score, and compares its
    score on a fresh seed under the target (metric, dataset) with that of a
    random other model there.  Ties count as success.
    """
    metric_mode, dataset_mode = _parse_mode(mode)
    rng = rng if rng is not None else np.random.default_rng(0)
    keys = expand_keys(metric_keys)
    # table[dataset][metric][(setting, seed)] = score
    table = {}
    for r in _ok(records):
        ds = (r["dataset"], r.get("variant", "none"))
        for k in keys:
            v = get_value(r, k)
            if v is not None:
                table.setdefault(ds, {}).setdefault(k, {})[(setting_of(r), r["seed"])] = v
    datasets = sorted(table)
    seeds = sorted({key[1] for ds in table.values() for m in ds.values() for key in m})
    if len(seeds) < 2:
        raise ConfigurationError("transfer selection needs at least two seeds")
    if dataset_mode == "different" and len(datasets) < 2:
        raise ConfigurationError("cross-dataset transfer needs at least two datasets")
    metric_names = sorted({k for ds in table.values() for k in ds})
    if metric_mode == "different" and len(metric_names) < 2:
        raise ConfigurationError("cross-metric transfer needs at least two metrics")
    wins = done = 0
    for _ in range(trials):
        src_ds = datasets[rng.integers(len(datasets))]
        src_metrics = sorted(table[src_ds])
        src_metric = src_metrics[rng.integers(len(src_metrics))]
        src_seed = seeds[rng.integers(len(seeds))]
        candidates = {s: v for (s, sd), v in table[src_ds][src_metric].items() if sd == src_seed}
        if not candidates:
            continue
        chosen = max(sorted(candidates), key=lambda s: candidates[s])
        tgt_ds = src_ds
        if dataset_mode == "different":
            others = [d for d in datasets if d != src_ds]
            tgt_ds = others[rng.integers(len(others))]
        tgt_metric = src_metric
        if metric_mode == "different":
            others = [m for m in sorted(table[tgt_ds]) if m != src_metric]
            if not others:
                continue
            tgt_metric = others[rng.integers(len(others))]
        elif tgt_metric not in table[tgt_ds]:
            continue
        target = table[tgt_ds][tgt_metric]
        fresh = [s for s in seeds if s != src_seed]
        tgt_seed = fresh[rng.integers(len(fresh))]
        if (chosen, tgt_seed) not in target:
            continue
        pool = sorted(k for k in target if k[1] != src_seed and k != (chosen, tgt_seed))
        if not pool:
            continue
        rival = pool[rng.integers(len(pool))]
        wins += target[(chosen, tgt_seed)] >= target[rival]
        done += 1
    if done == 0:
        raise ConfigurationError("no trial could be evaluated on these records")
    return wins / done


# -- export -------------------------------------------------------------------

def flatten_record(record):
    flat = {}

    def walk(prefix, node):
        if isinstance(node, dict):
            for k in sorted(node):
                walk(f"{prefix}.{k}" if prefix else str(k), node[k])
        elif isinstance(node, list):
            flat[prefix] = json.dumps(node)
        else:
            flat[prefix] = node

    walk("", record)
    return flat


def export_columns(records):
    flats = [flatten_record(r) for r in records]
    extra = sorted({k for f in flats for k in f} - set(BASE_COLUMNS))
    return list(BASE_COLUMNS) + extra, flats


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def _round9(obj):
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round9(v) for v in obj]
    if isinstance(obj, float):
        return float(format(obj, ".9g"))
    return obj


def parse_selection(selection):
    if not selection:
        return {}
    if isinstance(selection, dict):
        return selection
    out = {}
    for part in selection.split(","):
        if "=" not in part:
            raise ConfigurationError(f"selection terms look like key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def select(records, selection):
    wanted = parse_selection(selection)
    out = []
    for r in records:
        flat = flatten_record(r)
        if all(_fmt(flat.get(k)) == v or str(flat.get(k)) == v for k, v in wanted.items()):
            out.append(r)
    return out


def export(records, path, format="jsonl", selection=None):
    """Write records as JSONL or CSV with floats at 9 significant digits."""
    if format not in ("jsonl", "csv"):
        raise UsageError(f"unknown export format {format!r}")
    records = select(list(records), selection)
    if not records:
        raise InputError("no records to export")
    if format == "jsonl":
        text = "".join(json.dumps(_round9(r), sort_keys=True) + "\n" for r in records)
    else:
        columns, flats = export_columns(records)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for f in flats:
            writer.writerow([_fmt(f.get(c)) for c in columns])
        text = buf.getvalue()
    Path(path).write_text(text, encoding="utf-8")
    return path


def _parse_cell(text):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    if text.startswith("["):
        return json.loads(text)
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def import_records(path, format=None):
    """Inverse of :func:`export` (nested structure restored from dotted columns)."""
    path = Path(path)
    format = format or ("csv" if path.suffix == ".csv" else "jsonl")
    if format == "jsonl":
        return load_records(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    records = []
    for row in rows:
        record = {}
        for key, text in row.items():
            value = _parse_cell(text)
            if value is None and "." in key:
                continue
            node = record
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        records.append(record)
    return records
