"""Command-line pipeline: preprocess, train, evaluate, and analyse.

Each subcommand reads one ExperimentConfig (defaults, then an optional
key=value config file, then command-line flag overrides), writes its
artifacts under the output directory, and records their content hashes in a
manifest. Given the same config and seed every command is idempotent down
to the byte; wall-clock timestamps appear only inside the manifest.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .dataio import (
    SchemaError,
    SplitError,
    SplitSpec,
    TransformError,
    fit_schema,
    load_csv,
    load_design_matrix,
    make_splits,
    save_design_matrix,
    schema_to_json,
    transform,
)
from .evaluation import (
    ResultTable,
    accuracy,
    dolan_more,
    load_result_table,
    mse,
    save_profile_curve,
    save_result_table,
)
from .reports import (
    render_finetune_history,
    render_loss_curves,
    render_profile_curves,
    render_spectra,
    render_variant_bars,
)
from .spectral import SpectralError, gating_diagnostics, spectral_report
from .synth import write_synthetic_csv
from .training import (
    VARIANTS,
    ConfigError,
    TrainConfig,
    build_variant,
    finetune,
    load_checkpoint,
    predict_model,
    pretrain,
    save_checkpoint,
)

OUT_ROOT_ENV = "TANDEM_OUT"
TASKS = ("classification", "regression")


@dataclass
class ExperimentConfig:
    """One experiment run, fully determined by these fields plus the data."""

    data: str = "synth.csv"
    target: str = "label"
    task: str = "classification"
    variant: str = "tandem"
    n_trees: int = 8
    depth: int = 5
    pretrain_epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.0
    finetune_epochs_frozen: int = 25
    finetune_epochs_tuned: int = 25
    finetune_lr_factor: float = 0.1
    lambda_align: float = 1.0
    lambda_lrs: float = 1.0
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    patience: int = 10
    pretrain_per_class: int = 2000
    label_budget: int = 400
    val_frac: float = 0.25
    repeats: int = 1
    out_dir: str = "runs"
    seed: int = 0
    spectral_k: int = 50
    spectral_class: str = "auto"
    gating_subset: str = "all"
    synth_per_class: int = 2500
    synth_informative: int = 10
    synth_noise: int = 40
    synth_categorical: int = 0
    synth_classes: int = 2


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig()


def _coerce(key, value):
    kind = type(getattr(_DEFAULTS, key))
    try:
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def parse_config_text(text, base=None):
    """Parse key=value lines; '#' starts a comment, unknown keys reject."""
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"config line {lineno}: expected key=value, "
                              f"got {line!r}")
        if key not in _FIELDS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, value))
    return cfg


def serialize_config(cfg):
    """Emit the config as key=value lines; parse_config_text inverts this."""
    lines = [f"{name} = {getattr(cfg, name)}" for name in _FIELDS]
    return "\n".join(lines) + "\n"


def load_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def train_config(cfg, seed=None):
    return TrainConfig(
        pretrain_epochs=cfg.pretrain_epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        finetune_epochs_frozen=cfg.finetune_epochs_frozen,
        finetune_epochs_tuned=cfg.finetune_epochs_tuned,
        finetune_lr_factor=cfg.finetune_lr_factor,
        seed=cfg.seed if seed is None else seed,
        lambda_align=cfg.lambda_align,
        lambda_lrs=cfg.lambda_lrs,
        rmsprop_decay=cfg.rmsprop_decay,
        rmsprop_eps=cfg.rmsprop_eps,
        patience=cfg.patience,
    )


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing artifact: {path}; run the "
                                f"upstream command first")
    return path


def _sha256(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def _update_manifest(out_dir, command, seed, names):
    """Merge artifact hashes into out_dir/manifest.json. The timestamp
    lives only here, keeping every other artifact byte-reproducible."""
    path = os.path.join(out_dir, "manifest.json")
    doc = {"version": 1, "artifacts": {}}
    if os.path.exists(path):
        try:
            old = json.loads(open(path).read())
            doc["artifacts"] = dict(old.get("artifacts", {}))
        except (OSError, ValueError):
            pass
    for name in names:
        doc["artifacts"][name] = _sha256(os.path.join(out_dir, name))
    doc["command"] = command
    doc["seed"] = seed
    doc["updated_at"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_json(path, doc):
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_rows_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_design(cfg):
    dm = load_design_matrix(_require(os.path.join(cfg.out_dir, "design.csv")))
    blob = open(_require(os.path.join(cfg.out_dir, "splits.json"))).read()
    return dm, SplitSpec.from_json(blob)


def _check_task(cfg):
    if cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}; expected one of {TASKS}")


def _labels(dm):
    if dm.targets is None:
        raise SchemaError("design matrix has no target column; rerun "
                          "preprocess with a target")
    return dm.targets


def _test_metric(cfg, model, dm, splits):
    X = dm.values[splits.test_idx]
    y = _labels(dm)[splits.test_idx]
    pred = predict_model(model, X).data
    if cfg.task == "classification":
        return "accuracy", accuracy(np.argmax(pred, axis=1), y.astype(int))
    return "mse", mse(pred[:, 0], y)


def cmd_synth(cfg):
    write_synthetic_csv(
        cfg.data,
        n_per_class=cfg.synth_per_class,
        n_informative=cfg.synth_informative,
        n_noise=cfg.synth_noise,
        n_categorical=cfg.synth_categorical,
        n_classes=cfg.synth_classes,
        seed=cfg.seed,
    )
    print(f"wrote {cfg.data}")


def cmd_preprocess(cfg):
    raw = load_csv(_require(cfg.data), target_column=cfg.target or None)
    targets = np.array(raw.target) if raw.target is not None else None
    splits = make_splits(raw.n_rows, targets, cfg.pretrain_per_class,
                         cfg.label_budget, cfg.val_frac, cfg.seed)
    # schema fits on the pretraining pool only, then applies everywhere
    schema = fit_schema(raw, splits.pretrain_idx)
    dm = transform(raw, schema)
    save_design_matrix(dm, os.path.join(cfg.out_dir, "design.csv"))
    with open(os.path.join(cfg.out_dir, "schema.json"), "w") as fh:
        fh.write(schema_to_json(schema))
    with open(os.path.join(cfg.out_dir, "splits.json"), "w") as fh:
        fh.write(splits.to_json())
    _update_manifest(cfg.out_dir, "preprocess", cfg.seed,
                     ["design.csv", "schema.json", "splits.json"])
    print(f"preprocessed {raw.n_rows} rows x {dm.values.shape[1]} features "
          f"-> {cfg.out_dir}")


def cmd_pretrain(cfg):
    dm, splits = _load_design(cfg)
    tc = train_config(cfg)
    model = build_variant(cfg.variant, dm.values.shape[1], cfg.n_trees,
                          cfg.depth, config=tc,
                          rng=np.random.default_rng(cfg.seed))
    result = pretrain(model, dm.values[splits.pretrain_idx], tc)
    names = [f"model_{cfg.variant}.json", f"pretrain_loss_{cfg.variant}.csv"]
    save_checkpoint(model, os.path.join(cfg.out_dir, names[0]), config=tc)
    _write_rows_csv(
        os.path.join(cfg.out_dir, names[1]),
        ["epoch", "recon", "align", "lrs", "total"],
        [[row["epoch"]] + [repr(row[k]) for k in ("recon", "align", "lrs",
                                                  "total")]
         for row in result.history],
    )
    if result.history:
        names.append(f"pretrain_loss_{cfg.variant}.png")
        render_loss_curves(result.history,
                           os.path.join(cfg.out_dir, names[-1]))
    _update_manifest(cfg.out_dir, "pretrain", cfg.seed, names)
    last = result.history[-1]["total"] if result.history else float("nan")
    print(f"pretrained {cfg.variant} for {tc.pretrain_epochs} epochs, "
          f"final loss {last:.6g}")


def cmd_finetune(cfg):
    _check_task(cfg)
    dm, splits = _load_design(cfg)
    y = _labels(dm)
    model, _ = load_checkpoint(
        _require(os.path.join(cfg.out_dir, f"model_{cfg.variant}.json")))
    tc = train_config(cfg)
    result = finetune(model, dm.values[splits.train_idx], y[splits.train_idx],
                      dm.values[splits.val_idx], y[splits.val_idx],
                      cfg.task, tc)
    names = [f"model_{cfg.variant}_tuned.json",
             f"finetune_history_{cfg.variant}.csv"]
    save_checkpoint(model, os.path.join(cfg.out_dir, names[0]), config=tc)
    _write_rows_csv(
        os.path.join(cfg.out_dir, names[1]),
        ["phase", "epoch", "train_loss", "val_metric"],
        [[row["phase"], row["epoch"], repr(row["train_loss"]),
          repr(row["val_metric"])] for row in result.history],
    )
    if result.history:
        names.append(f"finetune_history_{cfg.variant}.png")
        render_finetune_history(result.history,
                                os.path.join(cfg.out_dir, names[-1]))
    _update_manifest(cfg.out_dir, "finetune", cfg.seed, names)
    print(f"finetuned {cfg.variant}: best validation metric "
          f"{result.best_metric:.6g} at epoch {result.best_epoch}")


def _merge_result_cell(table, dataset, method, value, higher_is_better):
    if table is None:
        return ResultTable(datasets=[dataset], methods=[method],
                           values=np.array([[value]]),
                           higher_is_better=higher_is_better)
    datasets = list(table.datasets)
    methods = list(table.methods)
    values = table.values
    if method not in methods:
        methods.append(method)
        values = np.hstack([values, np.full((len(datasets), 1), np.nan)])
    if dataset not in datasets:
        datasets.append(dataset)
        values = np.vstack([values, np.full((1, len(methods)), np.nan)])
    values = values.copy()
    values[datasets.index(dataset), methods.index(method)] = value
    return ResultTable(datasets=datasets, methods=methods, values=values,
                       higher_is_better=higher_is_better)


def cmd_evaluate(cfg):
    _check_task(cfg)
    dm, splits = _load_design(cfg)
    model, _ = load_checkpoint(_require(
        os.path.join(cfg.out_dir, f"model_{cfg.variant}_tuned.json")))
    metric, value = _test_metric(cfg, model, dm, splits)
    dataset = os.path.splitext(os.path.basename(cfg.data))[0]
    names = [f"metrics_{cfg.variant}.json", "results.csv"]
    _write_json(os.path.join(cfg.out_dir, names[0]), {
        "dataset": dataset,
        "variant": cfg.variant,
        "task": cfg.task,
        "metric": metric,
        "value": value,
        "n_test": len(splits.test_idx),
    })
    results_path = os.path.join(cfg.out_dir, "results.csv")
    table = load_result_table(results_path) if os.path.exists(results_path) \
        else None
    table = _merge_result_cell(table, dataset, cfg.variant, value,
                               cfg.task == "classification")
    save_result_table(table, results_path)
    if len(table.methods) >= 2:
        curve = dolan_more(table)
        save_profile_curve(curve, os.path.join(cfg.out_dir, "profile.csv"))
        render_profile_curves(curve, os.path.join(cfg.out_dir, "profile.png"))
        names += ["profile.csv", "profile.png"]
    _update_manifest(cfg.out_dir, "evaluate", cfg.seed, names)
    print(f"{dataset}/{cfg.variant}: {metric} = {value:.6g} "
          f"on {len(splits.test_idx)} test rows")


def _pick_class(cfg, model, dm, splits):
    """Class whose validation accuracy is highest; ties take the lower id."""
    if cfg.task != "classification":
        return None
    if cfg.spectral_class != "auto":
        try:
            return int(cfg.spectral_class)
        except ValueError as exc:
            raise ConfigError(f"spectral_class must be 'auto' or an "
                              f"integer, got {cfg.spectral_class!r}") from exc
    y = _labels(dm)[splits.val_idx].astype(int)
    pred = np.argmax(predict_model(model, dm.values[splits.val_idx]).data,
                     axis=1)
    classes = np.unique(y)
    per_class = [np.mean(pred[y == c] == c) for c in classes]
    return int(classes[int(np.argmax(per_class))])


def _categorical_columns(dm):
    # one-hot features carry their token after '=' in the feature name
    return [j for j, name in enumerate(dm.feature_names) if "=" in name]


def cmd_spectral(cfg):
    _check_task(cfg)
    if cfg.gating_subset not in ("all", "categorical"):
        raise ConfigError(f"unknown gating_subset {cfg.gating_subset!r}")
    dm, splits = _load_design(cfg)
    model, _ = load_checkpoint(_require(
        os.path.join(cfg.out_dir, f"model_{cfg.variant}_tuned.json")))
    class_id = _pick_class(cfg, model, dm, splits)
    X_test = dm.values[splits.test_idx]
    if class_id is None:
        X_sel = X_test
    else:
        y_test = _labels(dm)[splits.test_idx].astype(int)
        X_sel = X_test[y_test == class_id]
    if X_sel.shape[0] == 0:
        raise SpectralError(f"no test samples in class {class_id}")
    report = spectral_report(model, X_sel, k=cfg.spectral_k,
                             class_id=class_id)
    columns = None
    if cfg.gating_subset == "categorical":
        columns = _categorical_columns(dm)
        if not columns:
            raise SpectralError("no one-hot columns in the design matrix")
    diag = gating_diagnostics(model, X_test, columns=columns)
    names = [f"spectral_{cfg.variant}.csv", f"spectral_{cfg.variant}.png",
             f"gating_{cfg.variant}.json"]
    _write_rows_csv(
        os.path.join(cfg.out_dir, names[0]),
        ["frequency", "original", "nn_gated", "tree_gated"],
        [[k, repr(report.spectrum_original[k]), repr(report.spectrum_nn[k]),
          repr(report.spectrum_osdt[k])]
         for k in range(report.spectrum_original.size)],
    )
    render_spectra(report, os.path.join(cfg.out_dir, names[1]))
    _write_json(os.path.join(cfg.out_dir, names[2]), {
        "bin_act_sim": diag.bin_act_sim,
        "corr": diag.corr,
        "var_ratio": diag.var_ratio,
        "mean_act_osdt": diag.mean_act_osdt,
        "mean_act_nn": diag.mean_act_nn,
        "gating_subset": cfg.gating_subset,
        "class_id": class_id,
        "n_samples": report.n_samples,
        "feature_order": [int(j) for j in report.feature_order],
    })
    _update_manifest(cfg.out_dir, "spectral", cfg.seed, names)
    print(f"spectral report over {report.n_samples} samples "
          f"(class {class_id}), diagnostics on {cfg.gating_subset} features")


def cmd_ablate(cfg):
    """Run every model variant under one config; emit a comparison table."""
    _check_task(cfg)
    dm, splits = _load_design(cfg)
    y = _labels(dm)
    metric_name = "accuracy" if cfg.task == "classification" else "mse"
    rows = []
    for variant in VARIANTS:
        values = []
        for r in range(cfg.repeats):
            tc = train_config(cfg, seed=cfg.seed + r)
            model = build_variant(variant, dm.values.shape[1], cfg.n_trees,
                                  cfg.depth, config=tc,
                                  rng=np.random.default_rng(tc.seed))
            pretrain(model, dm.values[splits.pretrain_idx], tc)
            finetune(model, dm.values[splits.train_idx], y[splits.train_idx],
                     dm.values[splits.val_idx], y[splits.val_idx],
                     cfg.task, tc)
            values.append(_test_metric(cfg, model, dm, splits)[1])
        rows.append([variant, repr(float(np.mean(values))),
                     repr(float(np.std(values))), cfg.repeats])
        print(f"{variant}: {metric_name} {float(np.mean(values)):.6g}")
    names = ["ablation.csv", "ablation.png"]
    _write_rows_csv(os.path.join(cfg.out_dir, names[0]),
                    ["variant", f"{metric_name}_mean", f"{metric_name}_std",
                     "repeats"], rows)
    render_variant_bars([row[0] for row in rows],
                        [float(row[1]) for row in rows], metric_name,
                        os.path.join(cfg.out_dir, names[1]))
    _update_manifest(cfg.out_dir, "ablate", cfg.seed, names)


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "spectral": cmd_spectral,
    "ablate": cmd_ablate,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="tandem",
        description="gated tree/neural autoencoder experiment pipeline",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key=value config file")
    for name, field in _FIELDS.items():
        kind = type(getattr(_DEFAULTS, name))
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            type=kind, default=None,
                            help=f"override {name} "
                                 f"(default {field.default!r})")
    return parser


def build_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for name in _FIELDS:
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not os.path.isabs(cfg.out_dir):
        cfg.out_dir = os.path.join(root, cfg.out_dir)
    return cfg


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = build_config(args)
        os.makedirs(cfg.out_dir, exist_ok=True)
        COMMANDS[args.command](cfg)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, TransformError, SplitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
