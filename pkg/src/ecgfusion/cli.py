"""Command-line frontend composing all stages into reproducible runs.

Every command writes its resolved configuration into the output directory
so a run can be replayed exactly.  Option precedence is flags > config
file (``--config``, a flat JSON object) > built-in defaults.  Exit codes:
0 success, 1 input error, 2 output error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import FEATURES_PER_LEAD, NetConfig, _features_of, compare_augmentation, \
    cross_validate, evaluate, train
from .cleanse import DEFAULT_COMPONENTS, cleanse_dataset
from .core_data import CPSC_CLASS_COUNTS, CPSC_CLASS_NAMES, DatasetManifest, EcgRecord, \
    RngStream, save_record, synthesize_dataset
from .errors import ArgumentError, InputError, InternalError, OutputError
from .fusion import FusedSample, FusionConfig, load_rebalanced, run_pipeline, save_rebalanced
from .noise import NOISE_KINDS, SNR_SWEEP_DB, inject_external, load_noise_file, sweep

logger = logging.getLogger(__name__)

CPSC_MINI_SCALE = 50  # cpsc-mini preset: full-scale class counts divided by this


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors map to the input-error exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ArgumentError(message)


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError as exc:
        raise ArgumentError(f"expected comma-separated integers, got {text!r}") from exc


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok != ""]
    except ValueError as exc:
        raise ArgumentError(f"expected comma-separated numbers, got {text!r}") from exc


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    try:
        with open(p, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON config: {exc}") from exc
    if not isinstance(payload, dict):
        raise InputError(f"{p}: config must be a JSON object")
    return payload


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """flags > config file > defaults, for the keys in ``defaults``."""
    file_values = _load_config_file(getattr(args, "config", None))
    resolved = dict(defaults)
    for key in defaults:
        if key in file_values:
            resolved[key] = file_values[key]
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _write_json(payload: dict, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _echo_config(command: str, resolved: dict, out_dir: Path) -> None:
    payload = {"command": command, "version": __version__, **resolved}
    _write_json(payload, out_dir / "config.json")
    logger.info("resolved config: %s", json.dumps(payload, sort_keys=True))


def cmd_synth(args) -> int:
    defaults = {"classes": 3, "counts": [20, 200, 200], "length_range": [3000, 6000],
                "seed": 0, "preset": None, "names": None}
    cfg = _resolve(args, defaults)
    if cfg["preset"] is not None:
        if cfg["preset"] != "cpsc-mini":
            raise ArgumentError(f"unknown preset {cfg['preset']!r}")
        cfg["classes"] = len(CPSC_CLASS_NAMES)
        cfg["counts"] = [max(1, round(c / CPSC_MINI_SCALE)) for c in CPSC_CLASS_COUNTS]
        cfg["names"] = list(CPSC_CLASS_NAMES)
    out_dir = Path(args.out)
    lo, hi = cfg["length_range"]
    manifest = synthesize_dataset(out_dir, cfg["classes"], cfg["counts"],
                                  length_range=(int(lo), int(hi)),
                                  seed=RngStream(int(cfg["seed"])),
                                  class_names=cfg["names"])
    _echo_config("synth", cfg, out_dir)
    logger.info("wrote %d records under %s", len(manifest.entries), out_dir)
    return 0


def cmd_clean(args) -> int:
    defaults = {"pca_components": DEFAULT_COMPONENTS}
    cfg = _resolve(args, defaults)
    manifest = DatasetManifest.load(args.manifest)
    if not manifest.entries:
        raise InputError(f"manifest {args.manifest} has no entries")
    out_dir = Path(args.out)
    cleansed, report = cleanse_dataset(manifest, out_dir, r=int(cfg["pca_components"]))
    _write_json(report.to_json(), out_dir / "rejections.json")
    _echo_config("clean", {**cfg, "manifest": str(args.manifest)}, out_dir)
    logger.info("kept %d records, rejected %d", len(cleansed.entries), len(report.rejected))
    return 0


def cmd_rebalance(args) -> int:
    defaults = {"delta": None, "p": 4, "seed": 0, "pair_budget": 50000}
    cfg = _resolve(args, defaults)
    manifest = DatasetManifest.load(args.manifest)
    config = FusionConfig(delta=cfg["delta"], p=int(cfg["p"]),
                          seed=RngStream(int(cfg["seed"])),
                          pair_budget=int(cfg["pair_budget"]))
    dataset = run_pipeline(manifest, config)
    out_dir = Path(args.out)
    save_rebalanced(dataset, out_dir)
    _write_json(dataset.report.to_json(), out_dir / "report.json")
    _echo_config("rebalance", {**cfg, "manifest": str(args.manifest)}, out_dir)
    return 0


def cmd_noise(args) -> int:
    defaults = {"kinds": list(NOISE_KINDS), "levels": list(SNR_SWEEP_DB),
                "seed": 0, "noise_file": None}
    cfg = _resolve(args, defaults)
    dataset = load_rebalanced(args.dataset)
    if not dataset.test:
        raise InputError(f"dataset under {args.dataset} has an empty test split")
    out_dir = Path(args.out)
    levels = [float(v) for v in cfg["levels"]]
    index: dict = {"configs": []}
    if cfg["noise_file"] is not None:
        shape = dataset.test[0].matrix.shape
        matrix = load_noise_file(cfg["noise_file"], shape)
        noisy_by_key = {}
        for level in levels:
            noisy = []
            for sample in dataset.test:
                rec = EcgRecord(sample.matrix, label=sample.label, id=sample.id)
                injected = inject_external(rec, matrix, level)
                noisy.append(FusedSample(matrix=injected.leads, label=sample.label,
                                         source_id=sample.source_id,
                                         library_index=sample.library_index,
                                         id=injected.id))
            noisy_by_key[("file", level)] = noisy
    else:
        noisy_by_key = sweep(dataset.test, [str(k) for k in cfg["kinds"]], levels,
                             RngStream(int(cfg["seed"])))
    for (kind, level), samples in noisy_by_key.items():
        sub = out_dir / f"{kind}_{level:g}dB"
        try:
            sub.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create {sub}: {exc}") from exc
        entries = []
        for i, sample in enumerate(samples):
            rel = f"{sub.name}/test_{i:05d}.csv"
            save_record(EcgRecord(sample.matrix, label=sample.label, id=sample.id),
                        out_dir / rel)
            entries.append({"path": rel, "label": sample.label.index,
                            "name": sample.label.name, "source_id": sample.source_id,
                            "id": sample.id})
        index["configs"].append({"kind": kind, "snr_db": level, "entries": entries})
    _write_json(index, out_dir / "sweep.json")
    _echo_config("noise", {**cfg, "dataset": str(args.dataset)}, out_dir)
    return 0


def _net_config(cfg: dict, n_features: int, n_classes: int) -> NetConfig:
    hidden = [int(h) for h in cfg["hidden"]]
    return NetConfig(widths=(n_features, *hidden, n_classes),
                     learning_rate=float(cfg["learning_rate"]),
                     batch_size=int(cfg["batch_size"]),
                     epochs=int(cfg["epochs"]),
                     steps_per_epoch=None if cfg["steps_per_epoch"] in (None, 0)
                     else int(cfg["steps_per_epoch"]),
                     seed=RngStream(int(cfg["seed"])))


_NET_DEFAULTS = {"hidden": [64], "learning_rate": 0.001, "batch_size": 10,
                 "epochs": 40, "steps_per_epoch": 50, "seed": 0}


def cmd_train_eval(args) -> int:
    defaults = {**_NET_DEFAULTS, "folds": 5}
    cfg = _resolve(args, defaults)
    dataset = load_rebalanced(args.dataset)
    if not dataset.train or not dataset.test:
        raise InputError(f"dataset under {args.dataset} is missing a split")
    out_dir = Path(args.out)
    cache: dict[str, np.ndarray] = {}
    features = _features_of(dataset.train, cache)
    classes = sorted({s.label.index for s in dataset.train})
    net = _net_config(cfg, features.shape[1], len(classes))
    folds = int(cfg["folds"])
    per_fold, summary = cross_validate(dataset.train, net, folds=folds)
    for i, metrics in enumerate(per_fold, start=1):
        _write_json(metrics.to_json(), out_dir / f"fold_{i}.json")
    _write_json(summary, out_dir / "cv_summary.json")
    model = train(dataset.train, net, cache)
    metrics = evaluate(model, dataset.test, cache)
    _write_json(metrics.to_json(), out_dir / "test_metrics.json")
    curve_lines = ["epoch,loss,train_accuracy"]
    for i, (lo, acc) in enumerate(zip(model.curves.loss, model.curves.accuracy), start=1):
        curve_lines.append(f"{i},{lo!r},{acc!r}")
    try:
        (out_dir / "curves.csv").write_text("\n".join(curve_lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write curves.csv: {exc}") from exc
    _echo_config("train-eval", {**cfg, "dataset": str(args.dataset)}, out_dir)
    logger.info("cv mean accuracy %.4f, test accuracy %.4f",
                summary["mean_accuracy"], metrics.accuracy)
    return 0


def cmd_compare(args) -> int:
    defaults = {**_NET_DEFAULTS, "seeds": 5, "delta": None, "p": 2, "pair_budget": 50000}
    cfg = _resolve(args, defaults)
    manifest = DatasetManifest.load(args.manifest)
    out_dir = Path(args.out)
    runs = []
    deltas = []
    for rep in range(int(cfg["seeds"])):
        seed = int(cfg["seed"]) + rep
        fusion_cfg = FusionConfig(delta=cfg["delta"], p=int(cfg["p"]),
                                  seed=RngStream(seed),
                                  pair_budget=int(cfg["pair_budget"]))
        sample = manifest.load_entry(manifest.entries[0])
        n_features = sample.n_leads * FEATURES_PER_LEAD
        n_classes = len(manifest.class_ids())
        net = _net_config({**cfg, "seed": seed}, n_features, n_classes)
        report = compare_augmentation(manifest, fusion_cfg, net)
        report["seed"] = seed
        runs.append(report)
        deltas.append(report["minority_recall_delta"])
    payload = {"runs": runs,
               "median_minority_recall_delta": float(np.median(deltas)),
               "deltas": deltas}
    _write_json(payload, out_dir / "compare_report.json")
    _echo_config("compare", {**cfg, "manifest": str(args.manifest)}, out_dir)
    logger.info("median minority recall delta: %.3f", payload["median_minority_recall_delta"])
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ecgfusion",
                     description="Wavelet-fusion rebalancing toolkit for "
                                 "imbalanced multi-lead ECG datasets")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--classes", type=int)
    p.add_argument("--counts", type=_csv_ints)
    p.add_argument("--length-range", dest="length_range", type=_csv_ints,
                   metavar="LO,HI")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=["cpsc-mini"])
    p.add_argument("--names", type=lambda s: s.split(","))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("clean", help="cleanse a dataset to the standard shape")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--pca-components", dest="pca_components", type=int)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("rebalance", help="run the fusion rebalancing pipeline")
    p.add_argument("--manifest", required=True, help="cleansed manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--delta", type=float)
    p.add_argument("--p", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pair-budget", dest="pair_budget", type=int)
    p.set_defaults(func=cmd_rebalance)

    p = sub.add_parser("noise", help="inject SNR-calibrated noise into a test split")
    p.add_argument("--dataset", required=True, help="rebalance output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--noise", "--kind", "--kinds", dest="kinds",
                   type=lambda s: s.split(","), metavar="{bw,em,ma}[,..]")
    p.add_argument("--snr-db", "--levels", dest="levels", type=_csv_floats,
                   metavar="DB[,..]")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-file", dest="noise_file")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("train-eval", help="cross-validate and evaluate the classifier")
    p.add_argument("--dataset", required=True, help="rebalance output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--folds", type=int)
    p.add_argument("--hidden", type=_csv_ints)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("compare", help="three-arm augmentation benefit study")
    p.add_argument("--manifest", required=True, help="raw (imbalanced) manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seeds", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--p", type=int)
    p.add_argument("--pair-budget", dest="pair_budget", type=int)
    p.add_argument("--hidden", type=_csv_ints)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        logging.getLogger("ecgfusion").setLevel(
            logging.DEBUG if args.verbose else logging.INFO)
        return args.func(args)
    except (InputError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OutputError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 2
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
