"""Deterministic synthetic dataset generator with known ground truth.

Every record draws from its own counter-based Philox stream keyed by
(master seed, record counter), so outputs are reproducible regardless of
generation order. ECG morphology is a sum of Gaussian waves per beat (not
a physiological model, but it exercises every pipeline stage); fundus-like
images are branching vessel trees whose curvature is controlled by a
tortuosity parameter sampled from the label's range, with bright blobs and
width beading added for the abnormal class.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import (
    EXACT_FLOAT_FMT,
    EcgRecord,
    GrayImage,
    render_json,
    write_ecg_csv,
    write_manifest,
    write_pgm,
    _write_text,
)
from .errors import ParamError

TORTUOSITY_RANGES = {"normal": (1.0, 2.0), "abnormal": (2.0, 3.5)}
ECG_ANOMALIES = ("widened_r", "st_offset", "rr_jitter")
# Morphology anomalies dominate the draw: irregular RR is deliberately
# invisible to beat-aligned spectra (it only moves beat timing), so it is
# kept rarer to stay detectable via HRV without flattening the spectral
# class contrast.
ECG_ANOMALY_PROBS = (0.45, 0.45, 0.1)
TRAIN_FRACTION = 0.75

# (offset s, width s, amplitude mV) for the P, Q, R, S, T waves.
BEAT_WAVES = (
    (-0.170, 0.025, 0.12),
    (-0.035, 0.010, -0.12),
    (0.000, 0.012, 1.00),
    (0.035, 0.010, -0.18),
    (0.220, 0.045, 0.28),
)
NOISE_SD_MV = 0.02
RR_JITTER_NORMAL_S = 0.010
RR_JITTER_ABNORMAL_S = 0.080
ST_OFFSET_MV = 0.15
R_WIDEN_FACTOR = 1.6

CLASS_LABELS = (
    ("normal", "normal"),
    ("normal", "abnormal"),
    ("abnormal", "normal"),
    ("abnormal", "abnormal"),
)


@dataclass
class SynthParams:
    n_per_class: int
    seed: int
    fs: float = 500.0
    duration: float = 10.0
    image_size: int = 256
    tortuosity_ranges: dict = field(default_factory=lambda: dict(TORTUOSITY_RANGES))

    def __post_init__(self) -> None:
        if self.n_per_class < 1:
            raise ParamError("n_per_class must be >= 1")
        if self.fs <= 0 or self.duration <= 0:
            raise ParamError("fs and duration must be positive")


def _record_rng(params: SynthParams, record_seed: int) -> np.random.Generator:
    key = ((params.seed & (2**64 - 1)) << 64) | (record_seed & (2**64 - 1))
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# ECG
# ---------------------------------------------------------------------------

def gen_ecg(label: str, params: SynthParams, record_seed: int
            ) -> tuple[EcgRecord, np.ndarray, str]:
    """Generate one labeled record; returns (record, true peak times, anomaly)."""
    if label not in ("normal", "abnormal"):
        raise ParamError(f"unknown label {label!r}")
    rng = _record_rng(params, record_seed)
    hr_bpm = rng.uniform(55.0, 95.0)
    rr_base = 60.0 / hr_bpm
    anomaly = "none"
    if label == "abnormal":
        anomaly = ECG_ANOMALIES[rng.choice(len(ECG_ANOMALIES), p=ECG_ANOMALY_PROBS)]
    rr_sd = RR_JITTER_ABNORMAL_S if anomaly == "rr_jitter" else RR_JITTER_NORMAL_S

    # Small per-record morphology jitter keeps records distinct while the
    # anomaly contrast stays dominant.
    amp_scale = rng.uniform(0.97, 1.03, size=len(BEAT_WAVES))
    width_scale = rng.uniform(0.97, 1.03, size=len(BEAT_WAVES))

    peak_times = []
    t = rng.uniform(0.35, 0.55)
    while t < params.duration - 0.25:
        peak_times.append(t)
        t += max(0.35, rr_base + rng.normal(0.0, rr_sd))
    peaks = np.asarray(peak_times)

    n = int(round(params.duration * params.fs))
    grid = np.arange(n) / params.fs
    sig = np.zeros(n)
    for wi, (off, width, amp) in enumerate(BEAT_WAVES):
        w = width * width_scale[wi]
        a = amp * amp_scale[wi]
        if wi == 2 and anomaly == "widened_r":
            w *= R_WIDEN_FACTOR
        for tb in peaks:
            sig += a * np.exp(-0.5 * ((grid - tb - off) / w) ** 2)
    if anomaly == "st_offset":
        for tb in peaks:
            sig += ST_OFFSET_MV * np.exp(-0.5 * ((grid - tb - 0.11) / 0.05) ** 2)
    sig += rng.normal(0.0, NOISE_SD_MV, size=n)
    record = EcgRecord(sig, fs=params.fs, label=label)
    return record, peaks, anomaly


# ---------------------------------------------------------------------------
# Fundus-like images
# ---------------------------------------------------------------------------

def _stamp(canvas: np.ndarray, y: float, x: float, sigma: float, intensity: float) -> None:
    """Max-blend an anti-aliased Gaussian dot onto the canvas."""
    size = canvas.shape[0]
    reach = max(1, int(np.ceil(3.0 * sigma)))
    y0, y1 = int(np.floor(y)) - reach, int(np.floor(y)) + reach + 1
    x0, x1 = int(np.floor(x)) - reach, int(np.floor(x)) + reach + 1
    y0, y1 = max(0, y0), min(size, y1)
    x0, x1 = max(0, x0), min(size, x1)
    if y0 >= y1 or x0 >= x1:
        return
    yy = np.arange(y0, y1)[:, None] - y
    xx = np.arange(x0, x1)[None, :] - x
    dot = intensity * np.exp(-(yy * yy + xx * xx) / (2.0 * sigma * sigma))
    region = canvas[y0:y1, x0:x1]
    np.maximum(region, dot, out=region)


def _draw_branch(canvas: np.ndarray, rng: np.random.Generator, y: float, x: float,
                 angle: float, steps: int, width: float, intensity: float,
                 sigma_turn: float, depth: int, beading: bool, step_count: list[int]) -> None:
    size = canvas.shape[0]
    step_len = 2.0
    for _ in range(steps):
        angle += rng.normal(0.0, sigma_turn)
        y += step_len * np.sin(angle)
        x += step_len * np.cos(angle)
        if not (-8 <= y < size + 8 and -8 <= x < size + 8):
            break
        step_count[0] += 1
        w = width
        if beading:
            w *= 1.0 + 0.4 * np.sin(2.0 * np.pi * step_count[0] / 18.0)
        _stamp(canvas, y, x, sigma=max(0.45, w / 1.6), intensity=intensity)
    if depth > 0:
        spread = rng.uniform(0.25, 0.65)
        for sign in (-1.0, 1.0):
            _draw_branch(canvas, rng, y, x, angle + sign * spread,
                         max(6, int(steps * 0.65)), width * 0.74, intensity * 0.96,
                         sigma_turn, depth - 1, beading, step_count)


def gen_fundus(label: str, params: SynthParams, record_seed: int
               ) -> tuple[GrayImage, float]:
    """Generate one fundus-like image; returns (image, ground-truth tortuosity)."""
    if label not in TORTUOSITY_RANGES:
        raise ParamError(f"unknown label {label!r}")
    rng = _record_rng(params, record_seed)
    lo, hi = params.tortuosity_ranges[label]
    tortuosity = float(rng.uniform(lo, hi))
    sigma_turn = 0.16 * (tortuosity - 1.0) + 0.04

    size = params.image_size
    canvas = np.full((size, size), 0.10)
    disc_y = size / 2 + rng.uniform(-18.0, 18.0)
    disc_x = 0.16 * size + rng.uniform(-8.0, 8.0)
    _stamp(canvas, disc_y, disc_x, sigma=7.0, intensity=0.55)

    n_roots = 6
    base_intensity = 0.70 + rng.uniform(0.0, 0.15)
    for k in range(n_roots):
        angle = (k - (n_roots - 1) / 2.0) * 0.42 + rng.uniform(-0.15, 0.15)
        _draw_branch(canvas, rng, disc_y, disc_x, angle, steps=55, width=2.2,
                     intensity=base_intensity, sigma_turn=sigma_turn, depth=3,
                     beading=(label == "abnormal"), step_count=[0])

    if label == "abnormal":
        for _ in range(int(rng.integers(3, 9))):
            by = rng.uniform(0.1 * size, 0.9 * size)
            bx = rng.uniform(0.1 * size, 0.9 * size)
            _stamp(canvas, by, bx, sigma=rng.uniform(1.6, 3.2), intensity=0.88)

    # Quantize to the 16-bit PGM grid so on-disk round-trips are exact.
    pixels = np.clip(np.rint(canvas * 65535.0) / 65535.0, 0.0, 1.0)
    return GrayImage(pixels), tortuosity


# ---------------------------------------------------------------------------
# Whole datasets
# ---------------------------------------------------------------------------

def gen_dataset(params: SynthParams, out_dir: str | Path) -> Path:
    """Write a balanced four-class dataset; returns the manifest path.

    Layout: ecg/<id>.csv, fundus/<id>_od.pgm, truth/<id>.json (ground-truth
    peak times, tortuosity, anomaly kind) and manifest.json at the root.
    The split is a stratified 75/25 draw per class with at least one
    training record per class.
    """
    out = Path(out_dir)
    for sub in ("ecg", "fundus", "truth"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    n = params.n_per_class
    split_rng = np.random.Generator(np.random.Philox(key=params.seed))
    records = []
    for ci, (ecg_label, fundus_label) in enumerate(CLASS_LABELS):
        n_train = max(1, int(TRAIN_FRACTION * n + 0.5))
        order = split_rng.permutation(n)
        is_train = np.zeros(n, dtype=bool)
        is_train[order[:n_train]] = True
        for i in range(n):
            idx = ci * n + i
            rid = f"c{ci + 1}_{i:04d}"
            ecg, peaks, anomaly = gen_ecg(ecg_label, params, record_seed=2 * idx)
            ecg.id = rid
            img, tortuosity = gen_fundus(fundus_label, params, record_seed=2 * idx + 1)
            img.id = rid
            write_ecg_csv(ecg, out / "ecg" / f"{rid}.csv")
            write_pgm(img, out / "fundus" / f"{rid}_od.pgm")
            truth = {
                "true_peaks_s": peaks,
                "tortuosity": tortuosity,
                "anomaly_kind": anomaly,
            }
            _write_text(out / "truth" / f"{rid}.json",
                        render_json(truth, float_fmt=EXACT_FLOAT_FMT) + "\n")
            records.append({
                "id": rid,
                "ecg_path": f"ecg/{rid}.csv",
                "fundus_od_path": f"fundus/{rid}_od.pgm",
                "ecg_label": ecg_label,
                "fundus_od_label": fundus_label,
                "split": "train" if is_train[i] else "test",
            })
    manifest_path = out / "manifest.json"
    write_manifest({"seed": params.seed, "records": records}, manifest_path)
    return manifest_path
