"""UEA/sktime ``.ts`` archives: parsing, normalisation, slotting and batching."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, ParseError

BUNDLED_DIR = Path(__file__).parent / "datasets"
DATA_DIR_ENV = "TODYNET_DATA_DIR"

# name: (type, dimensions, length, classes, train size, test size)
UEA_TABLE = {
    "ArticularyWordRecognition": ("MOTION", 9, 144, 25, 275, 300),
    "AtrialFibrillation": ("ECG", 2, 640, 3, 15, 15),
    "BasicMotions": ("HAR", 6, 100, 4, 40, 40),
    "Cricket": ("HAR", 6, 1197, 12, 108, 72),
    "DuckDuckGeese": ("AUDIO", 1345, 270, 5, 50, 50),
    "EigenWorms": ("MOTION", 6, 17984, 5, 128, 131),
    "Epilepsy": ("HAR", 3, 206, 4, 137, 138),
    "EthanolConcentration": ("OTHER", 3, 1751, 4, 261, 263),
    "ERing": ("HAR", 4, 65, 6, 30, 270),
    "FaceDetection": ("EEG", 144, 62, 2, 5890, 3524),
    "FingerMovements": ("EEG", 28, 50, 2, 316, 100),
    "HandMovementDirection": ("EEG", 10, 400, 4, 160, 74),
    "Handwriting": ("HAR", 3, 152, 26, 150, 850),
    "Heartbeat": ("AUDIO", 61, 405, 2, 204, 205),
    "Libras": ("HAR", 2, 45, 15, 180, 180),
    "LSST": ("OTHER", 6, 36, 14, 2459, 2466),
    "MotorImagery": ("EEG", 64, 3000, 2, 278, 100),
    "NATOPS": ("HAR", 24, 51, 6, 180, 180),
    "PenDigits": ("MOTION", 2, 8, 10, 7494, 3498),
    "PEMS-SF": ("MISC", 963, 144, 7, 267, 173),
    "PhonemeSpectra": ("SOUND", 11, 217, 39, 3315, 3353),
    "RacketSports": ("HAR", 6, 30, 4, 151, 152),
    "SelfRegulationSCP1": ("EEG", 6, 896, 2, 268, 293),
    "SelfRegulationSCP2": ("EEG", 7, 1152, 2, 200, 180),
    "StandWalkJump": ("ECG", 4, 2500, 3, 12, 15),
    "UWaveGestureLibrary": ("HAR", 3, 315, 8, 120, 320),
}


@dataclass(frozen=True)
class TSHeader:
    problem_name: str
    dimensions: int
    series_length: int
    equal_length: bool
    class_labels: tuple

    def __post_init__(self):
        if self.dimensions < 1 or self.series_length < 1:
            raise DataError(f"header needs positive dimensions/length, got {self.dimensions}/{self.series_length}")
        if not self.class_labels:
            raise DataError("header declares no class labels")
        if len(set(self.class_labels)) != len(self.class_labels):
            raise DataError(f"duplicate class labels in header: {self.class_labels}")

    @property
    def n_classes(self):
        return len(self.class_labels)


@dataclass(frozen=True)
class TSDataset:
    """``X`` is ``m x d x l`` (float64 unless cast); ``y`` indexes ``header.class_labels``."""

    header: TSHeader
    X: np.ndarray
    y: np.ndarray
    split: str = "train"
    source: str = field(default="", compare=False)

    def __post_init__(self):
        h = self.header
        if self.X.ndim != 3 or self.X.shape[1:] != (h.dimensions, h.series_length):
            raise DataError(f"series array {self.X.shape} does not match header d={h.dimensions}, l={h.series_length}")
        if self.y.shape != (self.X.shape[0],):
            raise DataError("one label per series required")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= h.n_classes):
            raise DataError("label index outside the header's class list")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_classes(self):
        return self.header.n_classes

    def astype(self, dtype):
        return replace(self, X=self.X.astype(dtype))


def _parse_bool(token, line_no, path):
    t = token.strip().lower()
    if t in ("true", "false"):
        return t == "true"
    raise ParseError(f"expected true/false, got {token!r}", line_no, path)


def parse_ts(path) -> TSDataset:
    """Parse an equal-length, labelled ``.ts`` file."""
    path = Path(path)
    text = path.read_text()
    split = "test" if "_TEST" in path.name.upper() else "train"
    return parse_ts_text(text, path=path, split=split)


def parse_ts_text(text, path=None, split="train") -> TSDataset:
    meta = {}
    labels = None
    rows = []
    in_data = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not in_data:
            if not line.startswith("@"):
                raise ParseError("data line before @data", line_no, path)
            tag, _, rest = line.partition(" ")
            tag = tag.lower()
            rest = rest.strip()
            if tag == "@data":
                in_data = True
            elif tag == "@problemname":
                meta["problem_name"] = rest
            elif tag in ("@timestamps", "@missing", "@univariate", "@equallength"):
                meta[tag[1:]] = _parse_bool(rest, line_no, path)
            elif tag == "@dimensions":
                meta["dimensions"] = _parse_int(rest, line_no, path)
            elif tag == "@serieslength":
                meta["serieslength"] = _parse_int(rest, line_no, path)
            elif tag == "@classlabel":
                parts = rest.split()
                if not parts or not _parse_bool(parts[0], line_no, path):
                    raise ParseError("only labelled (classification) archives are supported", line_no, path)
                labels = tuple(parts[1:])
                if not labels:
                    raise ParseError("@classLabel true lists no labels", line_no, path)
            # unknown tags (e.g. @targetlabel) are ignored
            continue
        rows.append((line_no, line))

    if not in_data:
        raise ParseError("missing @data section", None, path)
    if meta.get("timestamps"):
        raise ParseError("timestamped series are not supported", None, path)
    if meta.get("equallength") is False:
        raise ParseError("unequal-length archives are not supported", None, path)
    if labels is None:
        raise ParseError("missing @classLabel declaration", None, path)

    d = meta.get("dimensions")
    if d is None and meta.get("univariate"):
        d = 1
    length = meta.get("serieslength")
    label_index = {lab: i for i, lab in enumerate(labels)}
    series, ys = [], []
    for line_no, line in rows:
        fields = line.split(":")
        if len(fields) < 2:
            raise ParseError("data line has no class label field", line_no, path)
        dims, label = fields[:-1], fields[-1].strip()
        if d is None:
            d = len(dims)
        if len(dims) != d:
            raise ParseError(f"expected {d} dimensions, found {len(dims)}", line_no, path)
        values = []
        for j, dim in enumerate(dims):
            if "?" in dim:
                raise ParseError(f"missing value in dimension {j}", line_no, path)
            try:
                vals = [float(v) for v in dim.split(",")]
            except ValueError:
                raise ParseError(f"non-numeric value in dimension {j}", line_no, path) from None
            if any(np.isnan(v) for v in vals):
                raise ParseError(f"missing value in dimension {j}", line_no, path)
            if length is None:
                length = len(vals)
            if len(vals) != length:
                raise ParseError(f"dimension {j} has length {len(vals)}, expected {length}", line_no, path)
            values.append(vals)
        if label not in label_index:
            raise ParseError(f"unknown class label {label!r}", line_no, path)
        series.append(values)
        ys.append(label_index[label])

    if d is None or length is None:
        raise ParseError("cannot determine dimensions/length from an empty archive", None, path)
    header = TSHeader(
        problem_name=meta.get("problem_name", ""),
        dimensions=d,
        series_length=length,
        equal_length=True,
        class_labels=labels,
    )
    X = np.asarray(series, dtype=np.float64).reshape(len(series), d, length)
    return TSDataset(header, X, np.asarray(ys, dtype=np.int64), split=split, source=str(path or ""))


def _parse_int(token, line_no, path):
    try:
        return int(token.strip())
    except ValueError:
        raise ParseError(f"expected an integer, got {token!r}", line_no, path) from None


def to_ts_text(ds: TSDataset) -> str:
    """Serialise back to ``.ts`` text; floats use shortest round-trip repr."""
    h = ds.header
    out = [
        f"@problemName {h.problem_name}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if h.dimensions == 1 else 'false'}",
        f"@dimensions {h.dimensions}",
        "@equalLength true",
        f"@seriesLength {h.series_length}",
        "@classLabel true " + " ".join(h.class_labels),
        "@data",
    ]
    for x, y in zip(ds.X, ds.y):
        dims = [",".join(repr(float(v)) for v in row) for row in x]
        out.append(":".join(dims) + ":" + h.class_labels[int(y)])
    return "\n".join(out) + "\n"


def write_ts(ds: TSDataset, path):
    Path(path).write_text(to_ts_text(ds))


def znormalize(ds: TSDataset) -> TSDataset:
    """Per-series, per-dimension z-score (population std).

    Dimensions with std below 1e-8 are only mean-centred, i.e. become zero.
    """
    X = ds.X.astype(np.float64)
    mu = X.mean(axis=2, keepdims=True)
    sd = X.std(axis=2, keepdims=True)
    Z = X - mu
    flat = sd < 1e-8
    Z = np.where(flat, 0.0, Z / np.where(flat, 1.0, sd))
    return replace(ds, X=Z.astype(ds.X.dtype))


@dataclass(frozen=True)
class SlotPartition:
    boundaries: tuple

    @property
    def S(self):
        return len(self.boundaries) - 1

    @property
    def length(self):
        return self.boundaries[-1]

    @property
    def lengths(self):
        b = self.boundaries
        return tuple(b[i + 1] - b[i] for i in range(self.S))

    @property
    def max_len(self):
        return max(self.lengths)


def partition_slots(length, S) -> SlotPartition:
    """Near-isometric split: boundary ``i`` is ``floor(i * length / S)``."""
    if S < 1:
        raise ConfigurationError(f"slot count must be >= 1, got {S}")
    if length < 1:
        raise ConfigurationError(f"series length must be >= 1, got {length}")
    if S > length:
        raise ConfigurationError(f"cannot split length {length} into {S} slots")
    return SlotPartition(tuple((i * length) // S for i in range(S + 1)))


def batch_iterator(ds: TSDataset, batch_size, seed, epoch=0):
    """Yield ``(X_batch, y_batch)`` over a seeded shuffle for this epoch.

    The last batch may be short.  The order depends only on ``(seed, epoch)``.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {batch_size}")
    m = len(ds)
    if m == 0:
        raise ConfigurationError("cannot iterate over an empty dataset")
    order = np.random.default_rng([seed, epoch]).permutation(m)
    for start in range(0, m, batch_size):
        idx = order[start:start + batch_size]
        yield ds.X[idx], ds.y[idx]


def find_dataset_files(name, data_dir=None):
    """Locate ``<name>_TRAIN.ts`` / ``<name>_TEST.ts``.

    Search order: ``data_dir``, ``$TODYNET_DATA_DIR``, then the bundled
    datasets.  Both flat and ``<name>/`` sub-directory layouts are accepted.
    """
    roots = []
    if data_dir:
        roots.append(Path(data_dir))
    elif os.environ.get(DATA_DIR_ENV):
        roots.append(Path(os.environ[DATA_DIR_ENV]))
    roots.append(BUNDLED_DIR)
    for root in roots:
        for base in (root, root / name):
            train, test = base / f"{name}_TRAIN.ts", base / f"{name}_TEST.ts"
            if train.is_file() and test.is_file():
                return train, test
    searched = ", ".join(str(r) for r in roots)
    raise FileNotFoundError(f"dataset {name!r} not found (searched {searched})")


def bundled_datasets():
    return sorted(p.name for p in BUNDLED_DIR.iterdir() if p.is_dir())


def file_digest(*paths):
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def load_uea(name, data_dir=None, normalize=True):
    """Load the train/test pair; returns ``(train, test, digest)``."""
    train_path, test_path = find_dataset_files(name, data_dir)
    train, test = parse_ts(train_path), parse_ts(test_path)
    if train.header.class_labels != test.header.class_labels:
        raise DataError("train and test headers declare different class labels")
    if train.header.dimensions != test.header.dimensions or train.header.series_length != test.header.series_length:
        raise DataError("train and test headers disagree on dimensions or length")
    if normalize:
        train, test = znormalize(train), znormalize(test)
    return train, test, file_digest(train_path, test_path)
