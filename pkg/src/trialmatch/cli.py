"""Command-line workflows: synth, train, evaluate, match, explain.

Configuration is one JSON document; every setting can be overridden by a
--kebab-case flag named after its dotted path (e.g. train.epochs becomes
--train-epochs). Exit codes: 0 success, 1 usage or config problem, 2 bad
input data, 3 runtime failure. Errors print one machine-parsable line on
stderr: "error: <Type>: <message>".
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import evaluation, synthdata, training
from .ec_parser import INCLUSION, load_trials
from .errors import (
    ConfigError,
    EmptyBatch,
    InfeasibleConfig,
    NonFiniteLoss,
    TrialMatchError,
)
from .matcher import CLASSES
from .memory import SLOT_ORDER, load_patients
from .model import ModelDims, forward_pair, init_params, pair_query
from .persistence import load_model, save_model
from .taxonomy import CODE_TYPES, load_taxonomy
from .text_encoding import make_encoder

DEFAULT_CONFIG = {
    "seed": 0,
    "deterministic": False,
    "missing_code_policy": "error",
    "paths": {
        "out_dir": "out",
        "taxonomy_diagnosis": None,
        "taxonomy_medication": None,
        "taxonomy_procedure": None,
        "patients": None,
        "trials": None,
        "labels": None,
        "embeddings": None,
        "model": None,
        "metrics": None,
        "report": None,
        "attention": None,
        "pca": None,
    },
    "encoder": {"kind": "feature_hash", "embed_dim": 64, "seed": None, "window": 3},
    "dims": {"conv_dim": 16, "mem_dim": 32, "n_highway": 3},
    "train": {
        "learning_rate": 0.001,
        "batch_size": 32,
        "epochs": 20,
        "margin": 0.3,
        "seed": None,
        "distance_loss": True,
    },
    "synth": {
        "seed": None,
        "n_patients": 200,
        "n_trials": 20,
        "n_roots": 8,
        "branching": 2,
        "visits_min": 2,
        "visits_max": 5,
        "codes_min": 2,
        "codes_max": 3,
        "inclusion_min": 2,
        "inclusion_max": 4,
        "exclusion_min": 1,
        "exclusion_max": 3,
        "demo_rate": 0.1,
        "noise_min": 1,
        "noise_max": 3,
    },
}

_PATH_DEFAULTS = {
    "taxonomy_diagnosis": "taxonomy_diagnosis.csv",
    "taxonomy_medication": "taxonomy_medication.csv",
    "taxonomy_procedure": "taxonomy_procedure.csv",
    "patients": "patients.jsonl",
    "trials": "trials.jsonl",
    "labels": "labels.jsonl",
    "model": "model.bin",
    "metrics": "metrics.csv",
    "report": "report.json",
    "attention": "attention.csv",
    "pca": "pca.csv",
}

_OVERRIDES: list[tuple[str, type]] = (
    [("missing_code_policy", str)]
    + [(f"paths.{key}", str) for key in DEFAULT_CONFIG["paths"]]
    + [
        ("encoder.kind", str),
        ("encoder.embed_dim", int),
        ("encoder.seed", int),
        ("encoder.window", int),
        ("dims.conv_dim", int),
        ("dims.mem_dim", int),
        ("dims.n_highway", int),
        ("train.learning_rate", float),
        ("train.batch_size", int),
        ("train.epochs", int),
        ("train.margin", float),
        ("train.seed", int),
        ("train.distance_loss", "bool"),
        ("synth.seed", int),
        ("synth.n_patients", int),
        ("synth.n_trials", int),
        ("synth.n_roots", int),
        ("synth.branching", int),
        ("synth.visits_min", int),
        ("synth.visits_max", int),
        ("synth.codes_min", int),
        ("synth.codes_max", int),
        ("synth.inclusion_min", int),
        ("synth.inclusion_max", int),
        ("synth.exclusion_min", int),
        ("synth.exclusion_max", int),
        ("synth.demo_rate", float),
        ("synth.noise_min", int),
        ("synth.noise_max", int),
    ]
)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: ConfigError: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument(
        "--deterministic",
        action="store_true",
        default=None,
        help="single-threaded bit-reproducible mode",
    )
    for path, kind in _OVERRIDES:
        flag = "--" + path.replace(".", "-").replace("_", "-")
        dest = path.replace(".", "__")
        if kind == "bool":
            common.add_argument(flag, dest=dest, type=_parse_bool, metavar="BOOL")
        else:
            common.add_argument(flag, dest=dest, type=kind)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = _Parser(prog="trialmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train a model")
    sub.add_parser("evaluate", parents=[common], help="score a trained model")
    for name in ("match", "explain"):
        sp = sub.add_parser(
            name,
            parents=[common],
            help="per-criterion predictions for one patient and trial"
            if name == "match"
            else "attention and embedding exports for one patient and trial",
        )
        sp.add_argument("--patient-id", required=True)
        sp.add_argument("--trial-id", required=True)
    return parser


def _merge(base: dict, override: dict, where: str = "") -> dict:
    merged = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be an object")
            merged[key] = _merge(base[key], value, where + key + ".")
        else:
            merged[key] = value
    return merged


def load_config(args: argparse.Namespace) -> dict:
    config = json.loads(json.dumps(DEFAULT_CONFIG))
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        config = _merge(config, user)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.deterministic is not None:
        config["deterministic"] = args.deterministic
    for path, _ in _OVERRIDES:
        value = getattr(args, path.replace(".", "__"), None)
        if value is not None:
            node = config
            *parents, leaf = path.split(".")
            for part in parents:
                node = node[part]
            node[leaf] = value
    if config["missing_code_policy"] not in ("error", "skip"):
        raise ConfigError(
            f"missing_code_policy must be error|skip, got "
            f"{config['missing_code_policy']!r}"
        )
    if config["encoder"]["kind"] not in ("feature_hash", "precomputed_file"):
        raise ConfigError(f"unknown encoder kind {config['encoder']['kind']!r}")
    return config


def resolve_paths(config: dict) -> dict[str, str]:
    paths = dict(config["paths"])
    out_dir = paths["out_dir"]
    for key, default_name in _PATH_DEFAULTS.items():
        if paths.get(key) is None:
            paths[key] = os.path.join(out_dir, default_name)
    return paths


def _sub_seed(config: dict, section: str) -> int:
    value = config[section]["seed"]
    return int(config["seed"] if value is None else value)


def _encoder_config(config: dict, paths: dict) -> dict:
    enc = dict(config["encoder"])
    enc["seed"] = _sub_seed(config, "encoder")
    if enc["kind"] == "precomputed_file":
        if paths.get("embeddings") is None:
            raise ConfigError("precomputed_file encoder needs paths.embeddings")
        enc["path"] = paths["embeddings"]
        enc.pop("window", None)
    return enc


def _load_inputs(paths: dict):
    taxonomies = {
        ct: load_taxonomy(paths[f"taxonomy_{ct}"], ct) for ct in CODE_TYPES
    }
    patients = load_patients(paths["patients"])
    trials = load_trials(paths["trials"])
    return taxonomies, patients, trials


def _train_config(config: dict) -> training.TrainConfig:
    section = config["train"]
    try:
        return training.TrainConfig(
            learning_rate=float(section["learning_rate"]),
            batch_size=int(section["batch_size"]),
            epochs=int(section["epochs"]),
            margin=float(section["margin"]),
            seed=_sub_seed(config, "train"),
            use_distance_loss=bool(section["distance_loss"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _synth_config(config: dict) -> synthdata.SynthConfig:
    s = config["synth"]
    return synthdata.SynthConfig(
        seed=_sub_seed(config, "synth"),
        n_patients=int(s["n_patients"]),
        n_trials=int(s["n_trials"]),
        n_roots=int(s["n_roots"]),
        branching=int(s["branching"]),
        visits_range=(int(s["visits_min"]), int(s["visits_max"])),
        codes_per_visit=(int(s["codes_min"]), int(s["codes_max"])),
        inclusion_range=(int(s["inclusion_min"]), int(s["inclusion_max"])),
        exclusion_range=(int(s["exclusion_min"]), int(s["exclusion_max"])),
        demo_rate=float(s["demo_rate"]),
        noise_leaves_range=(int(s["noise_min"]), int(s["noise_max"])),
    )


def cmd_synth(config: dict) -> int:
    paths = resolve_paths(config)
    result = synthdata.generate(_synth_config(config))
    written = synthdata.write_synth_files(result, paths["out_dir"])
    print(
        f"synth: {len(result.patients)} patients, {len(result.trials)} trials, "
        f"{len(result.labels)} labeled pairs -> {paths['out_dir']}"
    )
    for role in sorted(written):
        print(f"  {role}: {written[role]}")
    return 0


def _labels_map(rows: list[dict]) -> dict:
    return {
        (r["patient_id"], r["trial_id"], r["polarity"], r["criterion_index"]): r["label"]
        for r in rows
    }


def cmd_train(config: dict) -> int:
    paths = resolve_paths(config)
    taxonomies, patients, trials = _load_inputs(paths)
    label_rows = synthdata.load_labels(paths["labels"])
    enrollments = synthdata.enrollments_from_labels(label_rows)
    encoder_cfg = _encoder_config(config, paths)
    encoder = make_encoder(encoder_cfg)
    dims = ModelDims(
        embed_dim=encoder.embed_dim,
        conv_dim=int(config["dims"]["conv_dim"]),
        mem_dim=int(config["dims"]["mem_dim"]),
        n_highway=int(config["dims"]["n_highway"]),
    )
    train_cfg = _train_config(config)
    dataset = training.make_dataset(
        patients, trials, enrollments, train_cfg.seed, labels=_labels_map(label_rows)
    )
    prep = training.prepare_data(
        patients, trials, taxonomies, encoder, config["missing_code_policy"]
    )
    params = init_params(dims, train_cfg.seed)

    def log(row):
        print(
            f"epoch {row['epoch']:3d}: train_loss={row['train_loss']:.4f} "
            f"val_accuracy={row['val_accuracy']:.4f} "
            f"val_auroc={row['val_auroc'] if row['val_auroc'] is not None else 'n/a'}"
        )

    best, metrics = training.train(params, dims, prep, dataset, train_cfg, log=log)
    header = {
        "dims": dims.to_dict(),
        "seed": train_cfg.seed,
        "encoder": encoder.config(),
    }
    save_model(paths["model"], header, best)
    training.write_metrics_csv(metrics, paths["metrics"])
    print(f"model: {paths['model']}")
    print(f"metrics: {paths['metrics']}")
    return 0


def _load_model_side(config: dict, paths: dict):
    header, params = load_model(paths["model"])
    dims = ModelDims.from_dict(header["dims"])
    encoder_cfg = dict(header["encoder"])
    if encoder_cfg.get("kind") == "precomputed_file" and paths.get("embeddings"):
        encoder_cfg["path"] = paths["embeddings"]
    encoder = make_encoder(encoder_cfg)
    return header, params, dims, encoder


def cmd_evaluate(config: dict) -> int:
    paths = resolve_paths(config)
    taxonomies, patients, trials = _load_inputs(paths)
    label_rows = synthdata.load_labels(paths["labels"])
    enrollments = synthdata.enrollments_from_labels(label_rows)
    header, params, dims, encoder = _load_model_side(config, paths)
    labels = _labels_map(label_rows)
    dataset = training.make_dataset(
        patients, trials, enrollments, int(header["seed"]), labels=labels
    )
    if not dataset.test_pairs:
        raise EmptyBatch("test split is empty; nothing to evaluate")
    prep = training.prepare_data(
        patients, trials, taxonomies, encoder, config["missing_code_policy"]
    )
    train_cfg = _train_config(config)
    preds = training.predictions_for(params, dims, prep, dataset.test_pairs, train_cfg)
    criteria_level = evaluation.criteria_metrics(preds)

    trials_by_id = {t.trial_id: t for t in trials}
    results = []
    for pid, tid in enrollments:
        if dataset.split_of.get(pid) != "test":
            continue
        trial = trials_by_id[tid]
        predicted = []
        required = []
        for criterion in trial.criteria:
            pair = training.LabeledPair(
                pid, tid, criterion.polarity, criterion.index, "unknown"
            )
            _, pred, _, _ = training.pair_forward(params, dims, prep, pair, train_cfg)
            predicted.append(CLASSES[int(np.argmax(pred.probs))])
            required.append(
                labels.get(
                    (pid, tid, criterion.polarity, criterion.index),
                    "match" if criterion.polarity == INCLUSION else "mismatch",
                )
            )
        results.append(
            evaluation.aggregate_trial(pid, tid, predicted, required)
        )
    strata = evaluation.stratified_report(results, patients, trials)
    report = evaluation.build_report(criteria_level, results, strata)
    evaluation.write_report_json(report, paths["report"])
    auroc = criteria_level["auroc_micro"]
    line = f"criteria accuracy={criteria_level['accuracy']:.4f}"
    if auroc is not None:
        line += f" auroc={auroc:.4f}"
    print(line)
    print(f"report: {paths['report']}")
    return 0


def _pair_predictions(config, paths, patient_id, trial_id):
    taxonomies, patients, trials = _load_inputs(paths)
    _, params, dims, encoder = _load_model_side(config, paths)
    patients_by_id = {p.patient_id: p for p in patients}
    trials_by_id = {t.trial_id: t for t in trials}
    if patient_id not in patients_by_id:
        raise EmptyBatch(f"no such patient {patient_id!r}")
    if trial_id not in trials_by_id:
        raise EmptyBatch(f"no such trial {trial_id!r}")
    patient = patients_by_id[patient_id]
    trial = trials_by_id[trial_id]
    prep = training.prepare_data(
        [patient], [trial], taxonomies, encoder, config["missing_code_policy"]
    )
    train_cfg = _train_config(config)
    rows = []
    for criterion in trial.criteria:
        pair = training.LabeledPair(
            patient_id, trial_id, criterion.polarity, criterion.index, "unknown"
        )
        _, pred, cache, _ = training.pair_forward(params, dims, prep, pair, train_cfg)
        rows.append((criterion, pred, pair_query(cache)))
    return patient, trial, rows


def cmd_match(config: dict, patient_id: str, trial_id: str) -> int:
    paths = resolve_paths(config)
    _, trial, rows = _pair_predictions(config, paths, patient_id, trial_id)
    predicted = [CLASSES[int(np.argmax(pred.probs))] for _, pred, _ in rows]
    required = [
        "match" if c.polarity == INCLUSION else "mismatch" for c, _, _ in rows
    ]
    result = evaluation.aggregate_trial(patient_id, trial_id, predicted, required)
    out = {
        "patient_id": patient_id,
        "trial_id": trial_id,
        "criteria": [
            {
                "index": c.index,
                "polarity": c.polarity,
                "text": c.text,
                "predicted": CLASSES[int(np.argmax(pred.probs))],
                "probs": {cls: float(p) for cls, p in zip(CLASSES, pred.probs)},
            }
            for c, pred, _ in rows
        ],
        "fraction_correct": result.fraction_correct,
        "matched_at": {f"{t:g}": bool(v) for t, v in result.matched_at.items()},
    }
    json.dump(out, sys.stdout, indent=2)
    print()
    return 0


def cmd_explain(config: dict, patient_id: str, trial_id: str) -> int:
    paths = resolve_paths(config)
    _, trial, rows = _pair_predictions(config, paths, patient_id, trial_id)
    with open(paths["attention"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["trial_id", "criterion_index", "polarity", "slot_type", "slot_level", "weight"]
        )
        for criterion, pred, _ in rows:
            for (slot_type, slot_level), weight in zip(SLOT_ORDER, pred.attention):
                writer.writerow(
                    [
                        trial_id,
                        criterion.index,
                        criterion.polarity,
                        slot_type,
                        slot_level,
                        f"{weight:.8g}",
                    ]
                )

    vectors = []
    meta = []
    for criterion, pred, query in rows:
        kind = "ec_inclusion" if criterion.polarity == INCLUSION else "ec_exclusion"
        vectors.append(query)
        meta.append((f"{trial_id}:{criterion.polarity}:{criterion.index}", kind))
        vectors.append(pred.retrieved)
        meta.append((f"{patient_id}:{criterion.polarity}:{criterion.index}", "ehr"))
    projected, _ = evaluation.pca_project(np.array(vectors), k=2)
    entries = [
        (ident, kind, float(point[0]), float(point[1]))
        for (ident, kind), point in zip(meta, projected)
    ]
    evaluation.write_pca_csv(entries, paths["pca"])
    print(f"attention: {paths['attention']}")
    print(f"pca: {paths['pca']}")
    return 0


_EXIT_DATA = 2
_EXIT_RUNTIME = 3

_DATA_ERRORS = (
    "MalformedRow", "CycleDetected", "LevelGap", "DuplicateId", "UnknownCode",
    "NotALeaf", "EmptySentence", "MissingKey", "DimMismatch", "NoCriteria",
    "InsufficientTrials", "UnknownConcept", "DegenerateLabels", "IoError",
    "FormatVersionMismatch",
)


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, (ConfigError, InfeasibleConfig)):
        return 1
    if isinstance(exc, TrialMatchError) and type(exc).__name__ in _DATA_ERRORS:
        return _EXIT_DATA
    if isinstance(exc, (NonFiniteLoss, EmptyBatch)):
        return _EXIT_RUNTIME
    return _EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        if args.command == "match":
            return cmd_match(config, args.patient_id, args.trial_id)
        if args.command == "explain":
            return cmd_explain(config, args.patient_id, args.trial_id)
        raise ConfigError(f"unknown command {args.command!r}")
    except TrialMatchError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        message = " ".join(str(exc).split())
        print(f"error: IoError: {message}", file=sys.stderr)
        return _EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
