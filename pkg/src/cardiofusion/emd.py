"""Earth mover's distance on the line, class templates, and fusion features.

For distributions over a common ordered grid the optimal transport cost has
a closed form: the absolute CDF difference integrated against the bin
spacing. ``emd_bruteforce`` enumerates all bijections between small
equal-size point sets and exists purely as an independent oracle.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import EXACT_FLOAT_FMT, ManifestEntry, render_json, _write_text
from .errors import DataError, FormatError, ParamError, VersionError
from .spectral import Spectrum, normalize

BRUTEFORCE_MAX = 8
TEMPLATE_GROUPS = ("ecg_normal", "ecg_abnormal", "fundus_normal", "fundus_abnormal")


def emd_1d(p: Spectrum, q: Spectrum) -> float:
    """Closed-form transport distance between spectra on the same grid.

    cost = sum_i |CDF_P(i) - CDF_Q(i)| * delta_i with delta_i the spacing to
    the next center (the final gap reuses the previous spacing; its CDF
    difference is zero anyway since both CDFs end at 1).
    """
    if p.centers.size != q.centers.size or not np.array_equal(p.centers, q.centers):
        raise ParamError("spectra must share the same centers grid")
    cdf_diff = np.abs(np.cumsum(p.weights) - np.cumsum(q.weights))
    if p.centers.size == 1:
        return 0.0
    gaps = np.diff(p.centers)
    deltas = np.concatenate([gaps, gaps[-1:]])
    return float(np.sum(cdf_diff * deltas))


def emd_bruteforce(p_points, q_points) -> float:
    """Minimal bijection cost between equal-size point sets (test oracle).

    Factorial enumeration, so sizes are capped at 8.
    """
    p = np.asarray(p_points, dtype=np.float64)
    q = np.asarray(q_points, dtype=np.float64)
    if p.ndim != 1 or q.ndim != 1 or p.size != q.size:
        raise ParamError("point sets must be 1D and of equal size")
    if p.size == 0 or p.size > BRUTEFORCE_MAX:
        raise ParamError(f"point set size must be in [1, {BRUTEFORCE_MAX}]")
    best = np.inf
    for perm in itertools.permutations(range(q.size)):
        cost = float(np.abs(p - q[list(perm)]).sum())
        if cost < best:
            best = cost
    return best


@dataclass
class TemplateBank:
    """Per-(modality, label) mean spectra built from the training split."""

    ecg_normal: Spectrum
    ecg_abnormal: Spectrum
    fundus_normal: Spectrum
    fundus_abnormal: Spectrum
    built_from: list[str]
    split: str = "train"


def build_templates(manifest_records: list[ManifestEntry],
                    spectra: dict[str, tuple[Spectrum, Spectrum]]) -> TemplateBank:
    """Average training-split spectra per (modality, label) group.

    ``spectra`` maps record id to (ecg_spectrum, fundus_spectrum). Only
    entries tagged split == "train" contribute, which keeps the EMD
    reference free of test-set leakage.
    """
    groups: dict[str, list[Spectrum]] = {name: [] for name in TEMPLATE_GROUPS}
    used: list[str] = []
    for entry in manifest_records:
        if entry.split != "train" or entry.id not in spectra:
            continue
        ecg_spec, fundus_spec = spectra[entry.id]
        groups[f"ecg_{entry.ecg_label}"].append(ecg_spec)
        groups[f"fundus_{entry.fundus_label}"].append(fundus_spec)
        used.append(entry.id)
    templates: dict[str, Spectrum] = {}
    for name, members in groups.items():
        if not members:
            raise DataError(f"no training records for template group {name!r}")
        centers = members[0].centers
        for s in members[1:]:
            if not np.array_equal(s.centers, centers):
                raise ParamError(f"inconsistent centers within group {name!r}")
        mean = np.mean([s.weights for s in members], axis=0)
        templates[name] = normalize(mean, centers)
    return TemplateBank(built_from=used, **templates)


def emd_features(ecg_spec: Spectrum, fundus_spec: Spectrum, bank: TemplateBank,
                 refs: str = "both") -> np.ndarray:
    """Four transport distances to the bank templates, fixed ordering.

    [ecg vs ecg_normal, ecg vs ecg_abnormal,
     fundus vs fundus_normal, fundus vs fundus_abnormal]

    With refs="normal-only" the two abnormal-template slots are zeroed,
    which reproduces the literal two-scalar fusion vector while keeping the
    feature layout (and the classifier input width) unchanged.
    """
    if refs not in ("both", "normal-only"):
        raise ParamError(f"unknown refs mode {refs!r}")
    values = np.array([
        emd_1d(ecg_spec, bank.ecg_normal),
        emd_1d(ecg_spec, bank.ecg_abnormal) if refs == "both" else 0.0,
        emd_1d(fundus_spec, bank.fundus_normal),
        emd_1d(fundus_spec, bank.fundus_abnormal) if refs == "both" else 0.0,
    ])
    return values


def save_templates(bank: TemplateBank, path: str | Path) -> None:
    payload = {
        "version": "1",
        "split": bank.split,
        "built_from": list(bank.built_from),
        "centers_ecg": bank.ecg_normal.centers,
        "centers_fundus": bank.fundus_normal.centers,
        "ecg_normal": bank.ecg_normal.weights,
        "ecg_abnormal": bank.ecg_abnormal.weights,
        "fundus_normal": bank.fundus_normal.weights,
        "fundus_abnormal": bank.fundus_abnormal.weights,
    }
    _write_text(path, render_json(payload, float_fmt=EXACT_FLOAT_FMT) + "\n")


def load_templates(path: str | Path) -> TemplateBank:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read template bank {path}: {e}") from e
    if not isinstance(raw, dict) or "version" not in raw:
        raise FormatError(f"{path}: not a template bank file")
    if raw["version"] != "1":
        raise VersionError(f"{path}: unsupported template bank version {raw['version']!r}")
    try:
        ce = np.asarray(raw["centers_ecg"], dtype=np.float64)
        cf = np.asarray(raw["centers_fundus"], dtype=np.float64)
        return TemplateBank(
            ecg_normal=Spectrum(np.asarray(raw["ecg_normal"]), ce),
            ecg_abnormal=Spectrum(np.asarray(raw["ecg_abnormal"]), ce),
            fundus_normal=Spectrum(np.asarray(raw["fundus_normal"]), cf),
            fundus_abnormal=Spectrum(np.asarray(raw["fundus_abnormal"]), cf),
            built_from=[str(s) for s in raw["built_from"]],
            split=str(raw.get("split", "train")),
        )
    except (KeyError, ParamError) as e:
        raise FormatError(f"{path}: malformed template bank ({e})") from e
