"""Command-line surface: synth, featurize, train, eval, compare, anova.

Every command is deterministic given its flags and seeds, writes its
resolved configuration to a ``.meta.json`` sidecar next to its primary
output, and renders matplotlib figures alongside the delimited reports.

Exit codes: 0 ok, 2 usage, 3 io, 4 data, 5 degenerate statistics.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, network, pipeline
from .dataio import (
    CLASS_NAMES,
    emit_report,
    load_manifest,
    render_json,
    _write_text,
)
from .emd import emd_features, save_templates
from .errors import (
    DataError,
    DegenerateError,
    FormatError,
    IoError,
    MissingFileError,
    ParamError,
    SchemaError,
    SpecError,
    TrainError,
    VersionError,
)
from .evaluate import (
    anova_f,
    confusion,
    f_isf,
    one_vs_rest_metrics,
    overall_metrics,
    quartile_summary,
)
from .network import TrainConfig, default_spec, emd_mlp_spec, load_model, save_model, train
from .synth import SynthParams, gen_dataset

DEFAULTS: dict[str, dict] = {
    "synth": {"out": None, "n": 100, "seed": 0},
    "featurize": {"manifest": None, "mode": "fft-emd", "out": None,
                  "emit_plots": False, "emd_refs": "both"},
    "train": {"features": None, "spec": "default", "epochs": 150, "seed": 0,
              "out": None, "batch_size": 16, "lr": 0.001},
    "eval": {"model": None, "features": None, "split": "test", "out": None},
    "compare": {"manifest": None, "methods": "fft-emd,wt,hog", "seed": 0,
                "out": None, "epochs": 150},
    "anova": {"features": None, "columns": None, "out": None},
}


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def _load_config_file(path: str) -> dict:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise MissingFileError(f"config file {path}: {e}") from e
    if p.suffix.lower() == ".json":
        try:
            return json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"config file {path}: invalid JSON ({e})") from e
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise FormatError(f"config file {path}: invalid TOML ({e})") from e


def resolve_config(args: argparse.Namespace, command: str) -> dict:
    """defaults < config file (flat keys, then [command] section) < CLI flags."""
    merged = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        cfg = _load_config_file(args.config)
        if not isinstance(cfg, dict):
            raise FormatError("config file must contain a table/object")
        for key, value in cfg.items():
            if key in merged and not isinstance(value, dict):
                merged[key] = value
        section = cfg.get(command, {})
        if not isinstance(section, dict):
            raise FormatError(f"config section {command!r} must be a table")
        for key, value in section.items():
            if key in merged:
                merged[key] = value
    for key in merged:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = cli_value
    return merged


def _write_meta(path: Path, command: str, config: dict) -> None:
    payload = {
        "command": command,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()},
        "tool_version": __version__,
    }
    _write_text(path, render_json(payload) + "\n")


def _stem(out: Path) -> Path:
    return out.with_suffix("") if out.suffix in (".csv", ".json") else out


def _require(config: dict, command: str, *keys: str) -> None:
    for key in keys:
        if config.get(key) in (None, ""):
            raise ParamError(f"{command}: missing required option --{key.replace('_', '-')}")


def _pct(v: float | None) -> str | None:
    return None if v is None else format(100.0 * v, ".1f")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, "synth")
    _require(cfg, "synth", "out")
    if int(cfg["n"]) < 1:
        raise ParamError("synth: --n must be >= 1")
    params = SynthParams(n_per_class=int(cfg["n"]), seed=int(cfg["seed"]))
    manifest_path = gen_dataset(params, cfg["out"])
    _write_meta(Path(cfg["out"]) / "run.meta.json", "synth", cfg)
    print(f"wrote {4 * params.n_per_class} records under {cfg['out']} ({manifest_path})")
    return 0


def cmd_featurize(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, "featurize")
    _require(cfg, "featurize", "manifest", "out")
    mode = cfg["mode"]
    if mode not in pipeline.MODES:
        raise ParamError(f"featurize: unknown mode {mode!r}")
    if cfg["emd_refs"] not in ("both", "normal-only"):
        raise ParamError(f"featurize: unknown --emd-refs value {cfg['emd_refs']!r}")
    manifest = load_manifest(cfg["manifest"])
    feats = pipeline.extract_all(manifest, modes=(mode,))
    bank = None
    out = Path(cfg["out"])
    if mode == "fft-emd":
        bank = pipeline.build_template_bank(manifest, feats)
        save_templates(bank, _stem(out).with_name(_stem(out).name + "_templates.json"))
    pipeline.write_feature_table(out, mode, feats, bank, refs=cfg["emd_refs"])
    if cfg["emit_plots"]:
        _emit_plots(_stem(out).with_name(_stem(out).name + "_plots"), feats)
    _write_meta(out.with_name(out.name + ".meta.json"), "featurize", cfg)
    print(f"wrote feature table {out} ({len(feats)} records, mode {mode})")
    return 0


def _emit_plots(plot_dir: Path, feats: list[pipeline.RecordFeatures]) -> None:
    from . import figures

    plot_dir.mkdir(parents=True, exist_ok=True)
    for f in feats:
        t = np.arange(f.filtered.size) / f.fs
        emit_report(
            {"columns": ["time", "voltage"], "rows": list(zip(t, f.filtered))},
            plot_dir / f"{f.id}_wave.csv", format="csv")
        emit_report(
            {"columns": ["freq", "magnitude"],
             "rows": list(zip(f.ecg_spectrum.centers, f.ecg_spectrum.weights))},
            plot_dir / f"{f.id}_fft.csv", format="csv")
        emit_report(
            {"columns": ["radius", "weight"],
             "rows": list(zip(f.fundus_spectrum.centers, f.fundus_spectrum.weights))},
            plot_dir / f"{f.id}_radial.csv", format="csv")
        figures.render_record(plot_dir / f"{f.id}.png", f.id, f.fs, f.filtered,
                              f.ecg_spectrum, f.image.pixels, f.fundus_spectrum)


def _labels_to_indices(classes: list[str]) -> np.ndarray:
    try:
        return np.array([CLASS_NAMES.index(c) for c in classes], dtype=np.intp)
    except ValueError:
        bad = sorted(set(classes) - set(CLASS_NAMES))
        raise DataError(f"unknown class labels in feature table: {bad}") from None


def cmd_train(args: argparse.Namespace) -> int:
    from . import figures

    cfg = resolve_config(args, "train")
    _require(cfg, "train", "features", "out")
    if cfg["spec"] not in ("default", "emd-mlp"):
        raise ParamError(f"train: unknown spec {cfg['spec']!r}")
    table = pipeline.read_feature_table(cfg["features"])
    classifier = cfg["spec"]
    if classifier == "emd-mlp" and table.mode != "fft-emd":
        raise DataError("emd-mlp needs a feature table with transport-distance columns")
    x = pipeline.model_inputs(table, classifier)
    y = _labels_to_indices(table.classes)
    mask = np.array([s == "train" for s in table.splits])
    if not mask.any():
        raise DataError("feature table has no rows tagged split=train")
    seed = int(cfg["seed"])
    spec = emd_mlp_spec(seed) if classifier == "emd-mlp" else default_spec(seed)
    config = TrainConfig(lr=float(cfg["lr"]), epochs=int(cfg["epochs"]),
                         batch_size=int(cfg["batch_size"]), seed=seed)
    weights, history = train(x[mask], y[mask], spec, config)

    out = Path(cfg["out"])
    templates = _stem(Path(cfg["features"]))
    templates = templates.with_name(templates.name + "_templates.json")
    save_model(out, spec, weights, pipeline=table.mode,
               templates_path=templates.name if templates.is_file() else None,
               train_seed=seed)
    hist_path = _stem(out).with_name(_stem(out).name + "_history.csv")
    emit_report({"columns": ["epoch", "loss", "train_acc"],
                 "rows": [[h["epoch"], h["loss"], h["train_acc"]] for h in history]},
                hist_path, format="csv")
    if history:
        figures.render_history(hist_path.with_suffix(".png"), history)
    _write_meta(out.with_name(out.name + ".meta.json"), "train", cfg)
    final_acc = history[-1]["train_acc"] if history else float("nan")
    print(f"trained {classifier} model on {int(mask.sum())} records "
          f"({config.epochs} epochs, final train acc {final_acc:.3f}) -> {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from . import figures

    cfg = resolve_config(args, "eval")
    _require(cfg, "eval", "model", "features", "out")
    if cfg["split"] not in ("train", "test", "all"):
        raise ParamError(f"eval: unknown split {cfg['split']!r}")
    spec, weights, _templates, model_mode = load_model(cfg["model"])
    table = pipeline.read_feature_table(cfg["features"])
    if table.mode != model_mode:
        raise DataError(f"model was trained on {model_mode!r} features, table is {table.mode!r}")
    classifier = "emd-mlp" if spec.input_len == 4 else "default"
    x = pipeline.model_inputs(table, classifier)
    y = _labels_to_indices(table.classes)
    if cfg["split"] != "all":
        mask = np.array([s == cfg["split"] for s in table.splits])
        if not mask.any():
            raise DataError(f"feature table has no rows tagged split={cfg['split']}")
        x, y = x[mask], y[mask]
    probs = network.forward_batch(weights, spec, x)
    preds = probs.argmax(axis=1)
    cm = confusion(preds, y)
    class_rows = []
    for c in range(len(CLASS_NAMES)):
        m = one_vs_rest_metrics(cm, c)
        class_rows.append({"class": CLASS_NAMES[c], "accuracy": m.accuracy,
                           "sensitivity": m.sensitivity, "specificity": m.specificity,
                           "tp": m.tp, "tn": m.tn, "fp": m.fp, "fn": m.fn})
    overall = overall_metrics(cm)

    stem = _stem(Path(cfg["out"]))
    report = {
        "config": {k: str(v) if isinstance(v, Path) else v for k, v in cfg.items()},
        "n_samples": cm.total,
        "split": cfg["split"],
        "overall": overall,
        "classes": class_rows,
        "confusion": cm.counts,
    }
    emit_report(report, stem.with_suffix(".json"), format="json")
    csv_rows = [[r["class"], _pct(r["accuracy"]), _pct(r["sensitivity"]),
                 _pct(r["specificity"])] for r in class_rows]
    csv_rows.append(["overall", _pct(overall["accuracy"]), _pct(overall["sensitivity"]),
                     _pct(overall["specificity"])])
    emit_report({"columns": ["class", "accuracy", "sensitivity", "specificity"],
                 "rows": csv_rows}, stem.with_suffix(".csv"), format="csv")
    figures.render_class_metrics(stem.with_suffix(".png"), class_rows)
    _write_meta(stem.with_name(stem.name + ".meta.json"), "eval", cfg)
    print(f"eval split={cfg['split']}: overall accuracy "
          f"{overall['accuracy']:.3f} over {cm.total} records -> {stem}.csv")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    from . import figures

    cfg = resolve_config(args, "compare")
    _require(cfg, "compare", "manifest", "out")
    methods = [m.strip() for m in str(cfg["methods"]).split(",") if m.strip()]
    if not methods or any(m not in pipeline.MODES for m in methods):
        raise ParamError(f"compare: methods must be a comma list from {pipeline.MODES}")
    manifest = load_manifest(cfg["manifest"])
    feats = pipeline.extract_all(manifest, modes=tuple(methods))
    bank = pipeline.build_template_bank(manifest, feats) if "fft-emd" in methods else None
    y = _labels_to_indices([f.class_name for f in feats])
    train_mask = np.array([f.split == "train" for f in feats])
    test_mask = np.array([f.split == "test" for f in feats])
    if not train_mask.any() or not test_mask.any():
        raise DataError("compare needs both train and test rows in the manifest")
    seed = int(cfg["seed"])
    config = TrainConfig(epochs=int(cfg["epochs"]), seed=seed)

    rows = []
    for method in methods:
        x = np.stack([_assemble_for(method, f, bank) for f in feats])
        weights, _history = train(x[train_mask], y[train_mask], default_spec(seed), config)
        probs = network.forward_batch(weights, default_spec(seed), x[test_mask])
        cm = confusion(probs.argmax(axis=1), y[test_mask])
        overall = overall_metrics(cm)
        rows.append({"method": method,
                     "accuracy": 100.0 * overall["accuracy"],
                     "sensitivity": 100.0 * overall["sensitivity"],
                     "specificity": 100.0 * overall["specificity"]})

    out = Path(cfg["out"])
    emit_report({"columns": ["method", "accuracy", "sensitivity", "specificity"],
                 "rows": [[r["method"], format(r["accuracy"], ".1f"),
                           format(r["sensitivity"], ".1f"),
                           format(r["specificity"], ".1f")] for r in rows]},
                out, format="csv")
    figures.render_compare(_stem(out).with_suffix(".png"), rows)
    _write_meta(out.with_name(out.name + ".meta.json"), "compare", cfg)
    for r in rows:
        print(f"{r['method']}: accuracy {r['accuracy']:.1f}%")
    return 0


def _assemble_for(method: str, f: pipeline.RecordFeatures, bank) -> np.ndarray:
    if method == "fft-emd":
        d = emd_features(f.ecg_spectrum, f.fundus_spectrum, bank)
        return network.assemble_input("fft-emd", ecg_spec=f.ecg_spectrum,
                                      fundus_spec=f.fundus_spectrum, emd4=d)
    if method == "wt":
        return network.assemble_input("wt", wt=f.wt)
    return network.assemble_input("hog", hog=f.hog)


def cmd_anova(args: argparse.Namespace) -> int:
    from . import figures

    cfg = resolve_config(args, "anova")
    _require(cfg, "anova", "features", "columns", "out")
    table = pipeline.read_feature_table(cfg["features"])
    columns = [c.strip() for c in str(cfg["columns"]).split(",") if c.strip()]
    if not columns:
        raise ParamError("anova: --columns must name at least one feature column")
    col_index = {c: i - 3 for i, c in enumerate(table.columns) if i >= 3}
    missing = [c for c in columns if c not in col_index]
    if missing:
        raise DataError(f"feature table has no columns {missing}")

    class_arr = np.asarray(table.classes)
    rows = []
    quartile_rows = []
    boxes: dict[str, dict[str, list[float]]] = {}
    degenerate = False
    for col in columns:
        values = table.values[:, col_index[col]]
        groups = []
        group_values: dict[str, np.ndarray] = {}
        for cname in CLASS_NAMES:
            v = values[(class_arr == cname) & ~np.isnan(values)]
            if v.size:
                group_values[cname] = v
            if v.size >= 2:
                groups.append(v)
        if len(groups) < 2:
            raise DataError(f"column {col!r} has fewer than two usable class groups")
        try:
            res = anova_f(groups, feature_name=col)
            rows.append({"feature": col, "f_stat": res.f_stat, "p_value": res.p_value,
                         "significant": res.significant,
                         "f_crit": f_isf(0.05, res.df_between, res.df_within)})
        except DegenerateError:
            degenerate = True
            rows.append({"feature": col, "f_stat": float("inf"), "p_value": 0.0,
                         "significant": True, "f_crit": None})
        qs = quartile_summary(group_values)
        boxes[col] = {c: list(v) for c, v in group_values.items()}
        for cname in CLASS_NAMES:
            if cname in qs:
                q = qs[cname]
                quartile_rows.append([col, cname, q["min"], q["q1"], q["median"],
                                      q["q3"], q["max"]])

    stem = _stem(Path(cfg["out"]))
    emit_report({"columns": ["feature", "f_stat", "p_value", "significant"],
                 "rows": [[r["feature"], r["f_stat"], r["p_value"], r["significant"]]
                          for r in rows]}, stem.with_suffix(".csv"), format="csv")
    emit_report({"columns": ["feature", "class", "min", "q1", "median", "q3", "max"],
                 "rows": quartile_rows},
                stem.with_name(stem.name + "_quartiles.csv"), format="csv")
    figures.render_anova(stem.with_suffix(".png"), rows)
    figures.render_quartiles(stem.with_name(stem.name + "_quartiles.png"), boxes)
    _write_meta(stem.with_name(stem.name + ".meta.json"), "anova", cfg)
    for r in rows:
        flag = "degenerate" if not np.isfinite(r["f_stat"]) else f"p={r['p_value']:.4g}"
        print(f"{r['feature']}: F={r['f_stat']:.4g} ({flag})")
    return 5 if degenerate else 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cardiofusion",
        description="Multimodal ECG + fundus classification pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML or JSON config file (CLI flags win)")
        return p

    p = add("synth", "generate a labeled synthetic dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n", type=int, help="records per class (default 100)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.set_defaults(func=cmd_synth)

    p = add("featurize", "extract features for every manifest record")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--mode", choices=pipeline.MODES, help="feature pipeline (default fft-emd)")
    p.add_argument("--out", help="feature table CSV path")
    p.add_argument("--emit-plots", action="store_const", const=True, dest="emit_plots",
                   help="also write per-record waveform/spectrum CSVs and figures")
    p.add_argument("--emd-refs", choices=("both", "normal-only"), dest="emd_refs",
                   help="transport references: both templates or normal-only")
    p.set_defaults(func=cmd_featurize)

    p = add("train", "train the classifier on a feature table")
    p.add_argument("--features", help="feature table CSV")
    p.add_argument("--spec", choices=("default", "emd-mlp"), help="network layout")
    p.add_argument("--epochs", type=int, help="training epochs (default 150)")
    p.add_argument("--seed", type=int, help="init/shuffle seed (default 0)")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="mini-batch size")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    p.add_argument("--out", help="model JSON path")
    p.set_defaults(func=cmd_train)

    p = add("eval", "evaluate a model on a feature table split")
    p.add_argument("--model", help="model JSON path")
    p.add_argument("--features", help="feature table CSV")
    p.add_argument("--split", choices=("train", "test", "all"), help="rows to evaluate")
    p.add_argument("--out", help="report stem (writes .json, .csv, .png)")
    p.set_defaults(func=cmd_eval)

    p = add("compare", "train and evaluate several feature methods on one split")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--methods", help="comma list from fft-emd,wt,hog")
    p.add_argument("--seed", type=int, help="shared classifier seed")
    p.add_argument("--epochs", type=int, help="training epochs per method")
    p.add_argument("--out", help="comparison table CSV path")
    p.set_defaults(func=cmd_compare)

    p = add("anova", "one-way ANOVA of feature columns across the four classes")
    p.add_argument("--features", help="feature table CSV")
    p.add_argument("--columns", help="comma list of feature columns")
    p.add_argument("--out", help="report stem (writes .csv, _quartiles.csv, figures)")
    p.set_defaults(func=cmd_anova)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ParamError, SpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except DegenerateError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except (FormatError, SchemaError, MissingFileError, DataError,
            TrainError, VersionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (IoError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
