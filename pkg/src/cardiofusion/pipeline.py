"""Record-level feature extraction and the feature-table interchange format.

The feature table CSV is the handoff between `featurize`, `train`, `eval`,
and `anova`: one row per record with id, class, split, the mode-specific
model features, and the scalar timing/spectral features. The active mode is
recoverable from the column names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, ecg, network, spectral
from .dataio import DatasetManifest, GrayImage, emit_report, parse_ecg_csv, parse_pgm, read_csv
from .emd import TemplateBank, build_templates, emd_features
from .errors import DataError, FormatError, ParamError
from .spectral import Spectrum

MODES = ("fft-emd", "wt", "hog")
SCALAR_COLUMNS = ("hrv_sdnn", "qrs_width_var", "mean_hr", "hf_ratio")
EMD_COLUMNS = ("emd_ecg_normal", "emd_ecg_abnormal", "emd_fundus_normal", "emd_fundus_abnormal")
HF_CUTOFF = 0.125  # normalized frequency; mass at or above counts as high-frequency


@dataclass
class RecordFeatures:
    id: str
    class_name: str
    split: str
    ecg_spectrum: Spectrum
    beats: ecg.BeatSet
    filtered: np.ndarray
    fs: float
    fundus_spectrum: Spectrum
    image: GrayImage
    scalars: dict[str, float]
    wt: np.ndarray | None = None
    hog: np.ndarray | None = None
    tortuosity: float | None = None


def extract_record(entry, modes: tuple[str, ...]) -> RecordFeatures:
    """Run the preprocessing chain for one manifest entry."""
    record = parse_ecg_csv(entry.ecg_path)
    kernel = ecg.design_bandpass(record.fs)
    filtered = ecg.apply_filter(record, kernel)
    peaks = ecg.detect_r_peaks(filtered)
    beats = ecg.segment_beats(filtered, peaks)
    if beats.beats.shape[0] == 0:
        raise DataError(f"record {entry.id}: no usable beats detected")
    ecg_spec = spectral.beat_avg_spectrum(beats)
    scalars = ecg.ecg_scalar_features(filtered, peaks)
    scalars["hf_ratio"] = float(ecg_spec.weights[ecg_spec.centers >= HF_CUTOFF].sum())

    image = parse_pgm(entry.fundus_od_path)
    fundus_spec = spectral.radial_spectrum(image)

    feats = RecordFeatures(
        id=entry.id,
        class_name=entry.joint_class.joint,
        split=entry.split,
        ecg_spectrum=ecg_spec,
        beats=beats,
        filtered=filtered.samples,
        fs=record.fs,
        fundus_spectrum=fundus_spec,
        image=image,
        scalars=scalars,
    )
    if "wt" in modes:
        feats.wt = baselines.wt_features(beats)
    if "hog" in modes:
        feats.hog = baselines.hog_features(image)
    truth_path = entry.ecg_path.parent.parent / "truth" / f"{entry.id}.json"
    if truth_path.is_file():
        try:
            sidecar = json.loads(truth_path.read_text(encoding="utf-8"))
            feats.tortuosity = float(sidecar["tortuosity"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            pass  # a malformed sidecar only loses the optional column
    return feats


def extract_all(manifest: DatasetManifest, modes: tuple[str, ...]) -> list[RecordFeatures]:
    out = []
    for entry in manifest.records:
        try:
            out.append(extract_record(entry, modes))
        except DataError:
            raise
        except Exception as e:
            raise DataError(f"record {entry.id}: {e}") from e
    return out


def build_template_bank(manifest: DatasetManifest,
                        feats: list[RecordFeatures]) -> TemplateBank:
    spectra = {f.id: (f.ecg_spectrum, f.fundus_spectrum) for f in feats}
    return build_templates(manifest.records, spectra)


# ---------------------------------------------------------------------------
# Feature table
# ---------------------------------------------------------------------------

def feature_columns(mode: str, with_tortuosity: bool) -> list[str]:
    cols = ["id", "class", "split"]
    if mode == "fft-emd":
        cols += [f"ecg_s_{k:03d}" for k in range(128)]
        cols += [f"fun_r_{k:03d}" for k in range(64)]
        cols += list(EMD_COLUMNS)
    elif mode == "wt":
        cols += [f"wt_e{k}" for k in range(1, 6)] + ["wt_approx"]
    elif mode == "hog":
        cols += [f"hog_{k:03d}" for k in range(576)]
    else:
        raise ParamError(f"unknown mode {mode!r}")
    cols += list(SCALAR_COLUMNS)
    if with_tortuosity:
        cols.append("tortuosity")
    return cols


def feature_rows(mode: str, feats: list[RecordFeatures],
                 bank: TemplateBank | None, refs: str = "both") -> tuple[list[str], list[list]]:
    """Assemble the CSV payload for one mode."""
    with_tortuosity = any(f.tortuosity is not None for f in feats)
    cols = feature_columns(mode, with_tortuosity)
    rows: list[list] = []
    for f in feats:
        row: list = [f.id, f.class_name, f.split]
        if mode == "fft-emd":
            if bank is None:
                raise ParamError("fft-emd mode needs a template bank")
            row += list(f.ecg_spectrum.weights)
            row += list(f.fundus_spectrum.weights)
            row += list(emd_features(f.ecg_spectrum, f.fundus_spectrum, bank, refs=refs))
        elif mode == "wt":
            row += list(f.wt)
        elif mode == "hog":
            row += list(f.hog)
        row += [f.scalars.get(name) for name in SCALAR_COLUMNS]
        if with_tortuosity:
            row.append(f.tortuosity)
        rows.append(row)
    return cols, rows


def write_feature_table(path: str | Path, mode: str, feats: list[RecordFeatures],
                        bank: TemplateBank | None, refs: str = "both") -> None:
    cols, rows = feature_rows(mode, feats, bank, refs=refs)
    emit_report({"columns": cols, "rows": rows}, path, format="csv")


@dataclass
class FeatureTable:
    ids: list[str]
    classes: list[str]
    splits: list[str]
    columns: list[str]
    values: np.ndarray  # numeric cells, NaN where NA
    mode: str | None  # None when no model-feature block is present


def infer_mode(columns: list[str]) -> str | None:
    if "ecg_s_000" in columns:
        return "fft-emd"
    if "wt_e1" in columns:
        return "wt"
    if "hog_000" in columns:
        return "hog"
    return None


def read_feature_table(path: str | Path) -> FeatureTable:
    columns, raw_rows = read_csv(path)
    if columns[:3] != ["id", "class", "split"]:
        raise FormatError(f"{path}: feature table must start with id,class,split")
    ids, classes, splits = [], [], []
    values = np.full((len(raw_rows), len(columns) - 3), np.nan)
    for i, row in enumerate(raw_rows):
        if len(row) != len(columns):
            raise FormatError(f"{path}: row {i + 2} has {len(row)} cells")
        ids.append(row[0])
        classes.append(row[1])
        splits.append(row[2])
        for j, cell in enumerate(row[3:]):
            if cell != "NA":
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise FormatError(f"{path}: row {i + 2}: bad number {cell!r}") from None
    return FeatureTable(ids=ids, classes=classes, splits=splits,
                        columns=columns, values=values, mode=infer_mode(columns))


def model_inputs(table: FeatureTable, classifier: str = "default") -> np.ndarray:
    """Map table rows to classifier input vectors via the mode's assembly rule."""
    if table.mode is None:
        raise FormatError("feature table has no model-feature columns")
    idx = {c: i - 3 for i, c in enumerate(table.columns) if i >= 3}

    def block(names: list[str]) -> np.ndarray:
        missing = [n for n in names if n not in idx]
        if missing:
            raise FormatError(f"feature table missing columns {missing[:3]}...")
        return table.values[:, [idx[n] for n in names]]

    if classifier == "emd-mlp":
        return block(list(EMD_COLUMNS))
    if table.mode == "fft-emd":
        e = block([f"ecg_s_{k:03d}" for k in range(128)])
        f = block([f"fun_r_{k:03d}" for k in range(64)])
        d = block(list(EMD_COLUMNS))
        return np.stack([
            network.assemble_input("fft-emd", ecg_spec=e[i], fundus_spec=f[i], emd4=d[i])
            for i in range(len(table.ids))
        ])
    if table.mode == "wt":
        w = block([f"wt_e{k}" for k in range(1, 6)] + ["wt_approx"])
        return np.stack([network.assemble_input("wt", wt=w[i]) for i in range(len(table.ids))])
    h = block([f"hog_{k:03d}" for k in range(576)])
    return np.stack([network.assemble_input("hog", hog=h[i]) for i in range(len(table.ids))])
