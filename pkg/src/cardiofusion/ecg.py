"""ECG preprocessing: bandpass filtering, R-peak detection, beat segmentation.

The filter is a windowed-sinc FIR bandpass (Hamming window, about one
second of taps) rather than an IIR design: unconditionally stable, exactly
linear phase, and reproducible to the last bit. The detector follows the
classic energy-based chain (difference, squaring, 150 ms moving-window
integration) with an adaptive decaying-peak threshold and a 200 ms
refractory period.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import EcgRecord
from .errors import ParamError

BANDPASS_LO_HZ = 0.5
BANDPASS_HI_HZ = 50.0
INTEGRATION_WINDOW_S = 0.150
REFRACTORY_S = 0.200
THRESHOLD_FACTOR = 0.5
PEAK_DECAY_TAU_S = 2.0
BEAT_PRE_S = 0.3
BEAT_POST_S = 0.5
BEAT_SAMPLES = 256
QRS_ENERGY_FRACTION = 0.5


@dataclass
class FilterKernel:
    """Symmetric FIR taps for one (fs, lo, hi) band."""

    taps: np.ndarray
    fs: float
    lo: float
    hi: float


@dataclass
class BeatSet:
    """Fixed-length, amplitude-normalized beat windows plus peak timing."""

    beats: np.ndarray          # (n_beats, BEAT_SAMPLES)
    peak_indices: np.ndarray   # all accepted peaks, in samples
    rr_intervals: np.ndarray   # seconds, one per consecutive peak pair

    def __post_init__(self) -> None:
        self.beats = np.asarray(self.beats, dtype=np.float64).reshape(-1, BEAT_SAMPLES)
        self.peak_indices = np.asarray(self.peak_indices, dtype=np.intp)
        self.rr_intervals = np.asarray(self.rr_intervals, dtype=np.float64)
        if np.any(np.diff(self.peak_indices) <= 0):
            raise ParamError("peak indices must be strictly increasing")
        if self.rr_intervals.size != max(0, self.peak_indices.size - 1):
            raise ParamError("need one RR interval per consecutive peak pair")
        if np.any(self.rr_intervals <= REFRACTORY_S):
            raise ParamError(f"RR intervals must exceed {REFRACTORY_S} s")


def _lowpass_taps(fs: float, fc: float, n: np.ndarray, window: np.ndarray) -> np.ndarray:
    h = (2.0 * fc / fs) * np.sinc(2.0 * fc / fs * n) * window
    return h / h.sum()  # unit DC gain


def design_bandpass(fs: float, lo: float = BANDPASS_LO_HZ, hi: float = BANDPASS_HI_HZ
                    ) -> FilterKernel:
    """Windowed-sinc FIR bandpass; tap count is the smallest odd integer >= fs."""
    if not (0 < lo < hi < fs / 2):
        raise ParamError(f"need 0 < lo < hi < fs/2, got lo={lo}, hi={hi}, fs={fs}")
    ntaps = int(np.ceil(fs))
    if ntaps % 2 == 0:
        ntaps += 1
    m = ntaps - 1
    n = np.arange(ntaps) - m / 2.0
    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(ntaps) / m)
    taps = _lowpass_taps(fs, hi, n, window) - _lowpass_taps(fs, lo, n, window)
    return FilterKernel(taps=taps, fs=fs, lo=lo, hi=hi)


def kernel_response(k: FilterKernel, freq_hz: float) -> float:
    """Magnitude response |H(f)| of a kernel (used by tests and docs)."""
    n = np.arange(k.taps.size)
    return float(np.abs(np.sum(k.taps * np.exp(-2j * np.pi * freq_hz * n / k.fs))))


def apply_filter(record: EcgRecord, k: FilterKernel) -> EcgRecord:
    """Zero-phase filtering: reflection padding plus group-delay alignment."""
    if record.fs != k.fs:
        raise ParamError(f"kernel designed for fs={k.fs}, record has fs={record.fs}")
    pad = k.taps.size // 2
    xp = np.pad(record.samples, pad, mode="reflect")
    y = np.convolve(xp, k.taps, mode="valid")
    return EcgRecord(y, fs=record.fs, label=record.label, id=record.id)


def detect_r_peaks(record: EcgRecord) -> np.ndarray:
    """Locate R-peaks in an already bandpassed record.

    Chain: first difference, squaring, 150 ms moving-window integration,
    then an adaptive threshold at 0.5x the running energy peak (exponential
    decay, 2 s time constant). Each above-threshold run yields one
    candidate at the maximum of the filtered signal over the run extended
    backwards by the integration window; candidates closer than the 200 ms
    refractory keep whichever has the stronger energy peak.
    """
    x = record.samples
    fs = record.fs
    n = x.size
    d = np.diff(x, prepend=x[:1])
    s = d * d
    win = max(1, int(round(INTEGRATION_WINDOW_S * fs)))
    c = np.concatenate(([0.0], np.cumsum(s)))
    m = (c[1:] - c[np.maximum(np.arange(n) + 1 - win, 0)]) / win

    decay = float(np.exp(-1.0 / (PEAK_DECAY_TAU_S * fs)))
    active = np.zeros(n, dtype=bool)
    level = 0.0
    for i in range(n):
        level = max(level * decay, m[i])
        active[i] = m[i] > THRESHOLD_FACTOR * level and m[i] > 0.0

    padded = np.concatenate(([False], active, [False]))
    flips = np.flatnonzero(np.diff(padded.astype(np.int8)))
    runs = list(zip(flips[::2], flips[1::2] - 1))  # inclusive [start, end] runs

    refractory = int(round(REFRACTORY_S * fs))
    peaks: list[int] = []
    strengths: list[float] = []
    for lo, hi in runs:
        search_lo = max(0, lo - win)
        cand = search_lo + int(np.argmax(x[search_lo : hi + 1]))
        strength = float(m[lo : hi + 1].max())
        if peaks and cand - peaks[-1] <= refractory:
            if strength > strengths[-1]:
                peaks[-1], strengths[-1] = cand, strength
            continue
        peaks.append(cand)
        strengths.append(strength)
    return np.asarray(peaks, dtype=np.intp)


def segment_beats(record: EcgRecord, peaks) -> BeatSet:
    """Cut [peak-0.3 s, peak+0.5 s] windows, resample to 256, normalize.

    Windows running past either record boundary are dropped (a window whose
    end lands exactly on the record end is kept). Each kept window is
    linearly resampled to 256 samples, shifted to zero mean, and scaled to
    unit max-abs; flat windows are dropped to avoid dividing by zero.
    """
    peaks = np.asarray(peaks, dtype=np.intp)
    n = record.samples.size
    if peaks.size and (peaks.min() < 0 or peaks.max() >= n):
        raise ParamError("peaks must lie within the record")
    pre = int(round(BEAT_PRE_S * record.fs))
    post = int(round(BEAT_POST_S * record.fs))
    grid = np.linspace(0.0, pre + post - 1.0, BEAT_SAMPLES)
    base = np.arange(pre + post, dtype=np.float64)
    beats = []
    for p in peaks:
        start, end = p - pre, p + post
        if start < 0 or end > n:
            continue
        w = np.interp(grid, base, record.samples[start:end])
        w = w - w.mean()
        scale = np.abs(w).max()
        if scale <= 1e-12 * max(1.0, float(np.abs(record.samples[start:end]).max())):
            continue
        beats.append(w / scale)
    rr = np.diff(peaks) / record.fs
    beat_arr = np.array(beats) if beats else np.empty((0, BEAT_SAMPLES))
    return BeatSet(beats=beat_arr, peak_indices=peaks, rr_intervals=rr)


def ecg_scalar_features(record: EcgRecord, peaks) -> dict[str, float]:
    """Timing-based scalar features; keys absent when undefined.

    mean_hr needs >= 2 peaks; hrv_sdnn (population SD of RR intervals) and
    qrs_width_var (population variance of per-beat energy widths) need
    >= 3. Width is how long the 150 ms integrated energy of a beat window
    stays above half its own maximum, so the features are invariant to
    amplitude scaling.
    """
    peaks = np.asarray(peaks, dtype=np.intp)
    out: dict[str, float] = {}
    if peaks.size < 2:
        return out
    rr = np.diff(peaks) / record.fs
    out["mean_hr"] = float(60.0 / rr.mean())
    if peaks.size < 3:
        return out
    out["hrv_sdnn"] = float(np.std(rr))

    fs = record.fs
    pre = int(round(BEAT_PRE_S * fs))
    post = int(round(BEAT_POST_S * fs))
    win = max(1, int(round(INTEGRATION_WINDOW_S * fs)))
    widths = []
    for p in peaks:
        start, end = p - pre, p + post
        if start < 0 or end > record.samples.size:
            continue
        seg = record.samples[start:end]
        s = seg * seg
        c = np.concatenate(([0.0], np.cumsum(s)))
        idx = np.arange(seg.size)
        env = (c[idx + 1] - c[np.maximum(idx + 1 - win, 0)]) / win
        peak_env = env.max()
        if peak_env <= 0:
            continue
        widths.append(np.count_nonzero(env >= QRS_ENERGY_FRACTION * peak_env) / fs)
    if len(widths) >= 2:
        out["qrs_width_var"] = float(np.var(np.asarray(widths)))
    return out
