"""On-disk formats: ECG CSV, PGM images, dataset manifests, and report files.

Formats are deliberately minimal and bit-stable:

* ECG CSV: UTF-8, LF endings, ``# key=value`` header lines (``fs_hz``
  required), then one decimal sample per line, values in millivolts.
* Images: PGM P2 (ASCII) or P5 (binary), maxval up to 65535, P5 multi-byte
  samples big-endian.
* Manifest: JSON, schema documented in :func:`load_manifest`.
* Reports: JSON with sorted keys, or header-row CSV. Floats in reports are
  written with 9 significant digits so identical payloads give identical
  bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    IoError,
    MissingFileError,
    ParamError,
    SchemaError,
    TooShortError,
)

LABELS = ("normal", "abnormal")
CLASS_NAMES = ("C1", "C2", "C3", "C4")
SPLITS = ("train", "test", "unassigned")

# Report floats: 9 significant digits, fixed for golden-file determinism.
REPORT_FLOAT_FMT = ".9g"
# Serialized numeric state (models, templates): 17 significant digits so a
# parse of the emitted file reproduces the float64 exactly.
EXACT_FLOAT_FMT = ".17g"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class EcgRecord:
    """A uniformly sampled single-lead voltage series in millivolts."""

    samples: np.ndarray
    fs: float
    label: str = "unknown"
    id: str = ""

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.fs <= 0:
            raise ParamError(f"sampling rate must be positive, got {self.fs}")
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ParamError("an ECG record needs at least 2 samples")
        if not np.all(np.isfinite(self.samples)):
            raise ParamError("ECG samples must be finite")
        if self.label not in LABELS + ("unknown",):
            raise ParamError(f"unknown ECG label {self.label!r}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


@dataclass
class GrayImage:
    """A 2D grayscale intensity grid with values in [0, 1], row-major."""

    pixels: np.ndarray
    id: str = ""

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ParamError("image pixels must be a 2D array")
        h, w = self.pixels.shape
        if h < 16 or w < 16:
            raise ParamError(f"image must be at least 16x16, got {w}x{h}")
        if not np.all(np.isfinite(self.pixels)):
            raise ParamError("image pixels must be finite")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ParamError("image pixels must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ClassLabel:
    """Joint four-way class derived from the two binary modality labels."""

    joint: str
    ecg: str
    fundus: str

    @property
    def index(self) -> int:
        return CLASS_NAMES.index(self.joint)


def class_from_labels(ecg_label: str, fundus_label: str) -> ClassLabel:
    """Map (ecg, fundus) binary labels to the joint class C1..C4."""
    if ecg_label not in LABELS or fundus_label not in LABELS:
        raise ParamError(f"labels must be one of {LABELS}")
    idx = 2 * (ecg_label == "abnormal") + (fundus_label == "abnormal")
    return ClassLabel(CLASS_NAMES[idx], ecg_label, fundus_label)


def class_to_labels(joint: str) -> tuple[str, str]:
    """Inverse of :func:`class_from_labels`."""
    if joint not in CLASS_NAMES:
        raise ParamError(f"unknown class {joint!r}")
    idx = CLASS_NAMES.index(joint)
    return LABELS[idx // 2], LABELS[idx % 2]


def combine_eye_labels(od_label: str, os_label: str | None) -> str:
    """Per-eye fundus labels collapse to abnormal if either eye is abnormal."""
    for lab in (od_label,) + ((os_label,) if os_label is not None else ()):
        if lab not in LABELS:
            raise SchemaError(f"unknown fundus label token {lab!r}")
    if od_label == "abnormal" or os_label == "abnormal":
        return "abnormal"
    return "normal"


@dataclass
class ManifestEntry:
    id: str
    ecg_path: Path
    fundus_od_path: Path
    fundus_os_path: Path | None
    ecg_label: str
    fundus_label: str
    split: str

    @property
    def joint_class(self) -> ClassLabel:
        return class_from_labels(self.ecg_label, self.fundus_label)


@dataclass
class DatasetManifest:
    records: list[ManifestEntry]
    seed: int | None = None
    base_dir: Path = field(default_factory=Path)


# ---------------------------------------------------------------------------
# ECG CSV
# ---------------------------------------------------------------------------

def parse_ecg_csv(path: str | Path) -> EcgRecord:
    """Parse one ECG record from the single-column CSV format.

    Header lines start with ``# ``; ``fs_hz`` is required, ``units``
    (default mV), ``id`` and ``label`` are optional. The body is one decimal
    sample per line.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise MissingFileError(str(e)) from e
    header: dict[str, str] = {}
    samples: list[float] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if "=" not in body:
                raise FormatError(f"{path}:{lineno}: malformed header line {line!r}")
            key, _, value = body.partition("=")
            header[key.strip()] = value.strip()
            continue
        try:
            samples.append(float(line))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric sample {line!r}") from None
    if "fs_hz" not in header:
        raise FormatError(f"{path}: missing required header fs_hz")
    try:
        fs = float(header["fs_hz"])
    except ValueError:
        raise FormatError(f"{path}: invalid fs_hz value {header['fs_hz']!r}") from None
    if not math.isfinite(fs) or fs <= 0:
        raise FormatError(f"{path}: fs_hz must be positive, got {fs}")
    units = header.get("units", "mV")
    if units != "mV":
        raise FormatError(f"{path}: unsupported units {units!r}")
    if len(samples) < 2 * fs:
        raise TooShortError(
            f"{path}: {len(samples)} samples at {fs} Hz is shorter than the 2 s minimum"
        )
    label = header.get("label", "unknown")
    if label not in LABELS + ("unknown",):
        raise FormatError(f"{path}: unknown label {label!r}")
    return EcgRecord(np.array(samples), fs=fs, label=label, id=header.get("id", path.stem))


def write_ecg_csv(record: EcgRecord, path: str | Path) -> None:
    """Emit an ECG record; sample values round-trip exactly."""
    lines = [f"# fs_hz={format_float(record.fs, EXACT_FLOAT_FMT)}", "# units=mV"]
    if record.id:
        lines.append(f"# id={record.id}")
    if record.label != "unknown":
        lines.append(f"# label={record.label}")
    lines.extend(repr(float(v)) for v in record.samples)
    _write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def parse_pgm(path: str | Path) -> GrayImage:
    """Parse a PGM image (P2 ASCII or P5 binary), normalizing to [0, 1]."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MissingFileError(str(e)) from e
    magic = data[:2]
    if magic == b"P3" or magic == b"P6":
        raise FormatError(f"{path}: color PNM ({magic.decode()}) is not supported")
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a PGM file (magic {magic!r})")

    # Header tokens: magic, width, height, maxval. '#' starts a comment.
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3 and pos < len(data):
        c = data[pos : pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(data) and data[end : end + 1] not in b" \t\r\n":
                end += 1
            tok = data[pos:end]
            try:
                tokens.append(int(tok))
            except ValueError:
                raise FormatError(f"{path}: bad header token {tok!r}") from None
            pos = end
    if len(tokens) < 3:
        raise FormatError(f"{path}: truncated PGM header")
    width, height, maxval = tokens
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"{path}: maxval {maxval} outside [1, 65535]")

    n = width * height
    if magic == b"P2":
        raw = data[pos:].split()
        if len(raw) < n:
            raise FormatError(f"{path}: expected {n} samples, found {len(raw)}")
        try:
            values = np.array([int(t) for t in raw[:n]], dtype=np.int64)
        except ValueError:
            raise FormatError(f"{path}: non-integer P2 sample") from None
    else:
        pos += 1  # single whitespace byte after maxval
        nbytes = n * (2 if maxval > 255 else 1)
        payload = data[pos : pos + nbytes]
        if len(payload) < nbytes:
            raise FormatError(f"{path}: truncated P5 payload ({len(payload)}/{nbytes} bytes)")
        dtype = ">u2" if maxval > 255 else np.uint8
        values = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    if values.min() < 0 or values.max() > maxval:
        raise FormatError(f"{path}: sample value outside [0, {maxval}]")
    pixels = values.reshape(height, width).astype(np.float64) / maxval
    return GrayImage(pixels, id=path.stem)


def write_pgm(img: GrayImage, path: str | Path, maxval: int = 65535, binary: bool = True) -> None:
    """Emit a GrayImage as PGM, quantizing intensities to the maxval grid."""
    if not 1 <= maxval <= 65535:
        raise ParamError(f"maxval {maxval} outside [1, 65535]")
    q = np.rint(img.pixels * maxval).astype(np.int64)
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n{maxval}\n"
    if binary:
        dtype = ">u2" if maxval > 255 else np.uint8
        payload = q.astype(dtype).tobytes()
        _write_bytes(path, header.encode("ascii") + payload)
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in q)
        _write_text(path, header + body + "\n")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Schema::

        {"seed": int?, "records": [{"id": str, "ecg_path": str,
          "fundus_od_path": str, "fundus_os_path": str?,
          "ecg_label": "normal"|"abnormal",
          "fundus_od_label": "normal"|"abnormal",
          "fundus_os_label": ("normal"|"abnormal")?,
          "split": "train"|"test"|"unassigned"}]}

    Paths are resolved relative to the manifest's directory and must exist.
    Per-eye fundus labels are combined (abnormal if either eye abnormal).
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise MissingFileError(str(e)) from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(raw, dict) or not isinstance(raw.get("records"), list):
        raise SchemaError(f"{path}: manifest must be an object with a 'records' array")
    if not raw["records"]:
        raise SchemaError(f"{path}: empty records array")
    seed = raw.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise SchemaError(f"{path}: seed must be an integer")

    base = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for i, rec in enumerate(raw["records"]):
        if not isinstance(rec, dict):
            raise SchemaError(f"{path}: record {i} is not an object")
        try:
            rid = rec["id"]
            ecg_rel = rec["ecg_path"]
            od_rel = rec["fundus_od_path"]
            ecg_label = rec["ecg_label"]
            od_label = rec["fundus_od_label"]
            split = rec["split"]
        except KeyError as e:
            raise SchemaError(f"{path}: record {i} missing field {e.args[0]!r}") from None
        if rid in seen:
            raise SchemaError(f"{path}: duplicate record id {rid!r}")
        seen.add(rid)
        if ecg_label not in LABELS:
            raise SchemaError(f"{path}: record {rid!r}: unknown ecg_label {ecg_label!r}")
        if split not in SPLITS:
            raise SchemaError(f"{path}: record {rid!r}: unknown split {split!r}")
        os_rel = rec.get("fundus_os_path")
        os_label = rec.get("fundus_os_label")
        if (os_rel is None) != (os_label is None):
            raise SchemaError(
                f"{path}: record {rid!r}: fundus OS path and label must come together"
            )
        fundus_label = combine_eye_labels(od_label, os_label)
        ecg_path = base / ecg_rel
        od_path = base / od_rel
        os_path = base / os_rel if os_rel is not None else None
        for p in (ecg_path, od_path) + ((os_path,) if os_path is not None else ()):
            if not p.is_file():
                raise MissingFileError(f"{path}: record {rid!r} references missing file {p}")
        entries.append(
            ManifestEntry(
                id=rid,
                ecg_path=ecg_path,
                fundus_od_path=od_path,
                fundus_os_path=os_path,
                ecg_label=ecg_label,
                fundus_label=fundus_label,
                split=split,
            )
        )
    return DatasetManifest(records=entries, seed=seed, base_dir=base)


def write_manifest(payload: dict, path: str | Path) -> None:
    """Write a manifest dict as deterministic JSON (raw schema, not resolved)."""
    _write_text(path, render_json(payload, float_fmt=EXACT_FLOAT_FMT) + "\n")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def format_float(v: float, fmt: str = REPORT_FLOAT_FMT) -> str:
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return format(v, fmt)


def format_cell(v, float_fmt: str = REPORT_FLOAT_FMT) -> str:
    """Render one CSV cell. None becomes NA (undefined-metric convention)."""
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (float, np.floating)):
        return format_float(float(v), float_fmt)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def render_json(obj, float_fmt: str = REPORT_FLOAT_FMT, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, fixed float formatting."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(k))}: {render_json(v, float_fmt, indent + 1)}'
            for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        rendered = [render_json(v, float_fmt, indent + 1) for v in seq]
        if all(len(r) < 24 and "\n" not in r for r in rendered):
            return "[" + ", ".join(rendered) + "]"
        return "[\n" + ",\n".join(f"{pad}  {r}" for r in rendered) + f"\n{pad}]"
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return json.dumps(format_float(v))
        return format_float(v, float_fmt)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise SchemaError(f"cannot serialize {type(obj).__name__} into a report")


def emit_report(payload, path: str | Path, format: str = "json",
                float_fmt: str = REPORT_FLOAT_FMT) -> None:
    """Write a report file with byte-deterministic output.

    ``format="json"``: any JSON-able payload (dict/list/scalars).
    ``format="csv"``: payload must be ``{"columns": [...], "rows": [[...]]}``
    with rectangular rows; cells are rendered via :func:`format_cell`.
    """
    if format == "json":
        _write_text(path, render_json(payload, float_fmt) + "\n")
        return
    if format != "csv":
        raise ParamError(f"unknown report format {format!r}")
    if not isinstance(payload, dict) or "columns" not in payload or "rows" not in payload:
        raise SchemaError("csv payload must have 'columns' and 'rows'")
    columns = list(payload["columns"])
    ncol = len(columns)
    lines = [",".join(str(c) for c in columns)]
    for i, row in enumerate(payload["rows"]):
        row = list(row)
        if len(row) != ncol:
            raise SchemaError(f"csv row {i} has {len(row)} cells, expected {ncol}")
        cells = [format_cell(v, float_fmt) for v in row]
        if any("," in c or "\n" in c or '"' in c for c in cells):
            raise SchemaError(f"csv row {i} contains a cell needing quoting")
        lines.append(",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a report-style CSV back into (columns, string rows)."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise MissingFileError(str(e)) from e
    if not lines:
        raise FormatError(f"{path}: empty CSV")
    columns = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:] if line]
    return columns, rows


def _write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _write_bytes(path: str | Path, blob: bytes) -> None:
    try:
        Path(path).write_bytes(blob)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
