"""Loading multichannel EEG from delimited text and slicing it into windows.

A column map describes where each channel lives in the file and where the
fatigue label comes from::

    channels: {TP9: 1, AF7: 2, AF8: 3, TP10: 4}   # index (0-based) or header name
    label: {column: 5}          # or {value: 0} or {sidecar: labels.yaml}
    sample_rate_hz: 256
    header: auto                # true | false | auto
    delimiter: auto             # "," | "\t" | auto

Files written by :func:`write_recording` carry their own metadata and load
without a map.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

LABEL_COLUMN = "fatigue_level"
_META_PREFIX = "# fdnml"

# Muse headband export as redistributed with CogBeacon: the four EEG columns
# are named after their electrodes in the header row.
COGBEACON_MAPPING = {
    "channels": {"TP9": "TP9", "AF7": "AF7", "AF8": "AF8", "TP10": "TP10"},
    "sample_rate_hz": 256.0,
    "header": True,
    "delimiter": "auto",
}


@dataclass(frozen=True, eq=False)
class EegRecording:
    """One trial of multichannel EEG.

    Attributes:
        channels: Channel names, one per row of ``samples``.
        samples: Array of shape (n_channels, n_samples), raw source units.
        sample_rate_hz: Sampling rate.
        trial_id: Identifier of the trial (usually the file stem).
        fatigue_level: Integer label in {0, 1, 2}.
        diagnostics: Cleaning report ``{rows_read, rows_dropped, channels}``.
    """

    channels: list[str]
    samples: np.ndarray
    sample_rate_hz: float
    trial_id: str
    fatigue_level: int
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2:
            raise DataError(f"samples must be 2-D, got shape {samples.shape}")
        if samples.shape[0] < 1 or samples.shape[0] != len(self.channels):
            raise DataError(
                f"{samples.shape[0]} sample rows for {len(self.channels)} channel names"
            )
        if not self.sample_rate_hz > 0:
            raise DataError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.fatigue_level not in (0, 1, 2):
            raise DataError(f"fatigue level {self.fatigue_level!r} outside {{0, 1, 2}}")
        if not np.all(np.isfinite(samples)):
            raise DataError("recording contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channels", list(self.channels))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    length_samples: int = 512
    stride_samples: int = 256
    channel_subset: list[str] | None = None

    def __post_init__(self):
        if self.length_samples < 64:
            raise ConfigError("window length must be at least 64 samples")
        if self.stride_samples < 1:
            raise ConfigError("window stride must be at least 1 sample")


@dataclass(frozen=True, eq=False)
class WindowedSeries:
    """Windows cut from one recording.

    ``windows`` has shape (n_windows, n_channels, length); ``window_times``
    holds the start index of each window in the source recording.
    """

    windows: np.ndarray
    window_times: np.ndarray
    label: int
    channels: list[str]
    trial_id: str
    sample_rate_hz: float

    def __len__(self):
        return self.windows.shape[0]


def load_mapping(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"column map not found: {path}")
    with open(path) as fh:
        mapping = yaml.safe_load(fh)
    if not isinstance(mapping, dict):
        raise ConfigError(f"column map {path} is not a key-value document")
    return mapping


def _sniff_delimiter(text: str) -> str:
    sample = "\n".join(line for line in text.splitlines()[:20] if not line.startswith("#"))
    try:
        return csv.Sniffer().sniff(sample, delimiters=",\t").delimiter
    except csv.Error:
        return "\t" if "\t" in sample else ","


def _looks_like_header(first_line: str, delimiter: str) -> bool:
    for cell in first_line.split(delimiter):
        cell = cell.strip()
        if not cell:
            continue
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _read_meta(text: str) -> dict | None:
    first = text.split("\n", 1)[0]
    if not first.startswith(_META_PREFIX):
        return None
    return json.loads(first[len(_META_PREFIX):])


def _resolve_label(mapping: dict, frame: pd.DataFrame, path: Path, trial_id: str):
    spec = mapping.get("label")
    if spec is None:
        raise ConfigError("column map names no label source")
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("label must be one of {column: ...}, {value: ...}, {sidecar: ...}")
    kind, value = next(iter(spec.items()))
    if kind == "value":
        return value, None
    if kind == "column":
        column = _column_key(frame, value)
        return None, column
    if kind == "sidecar":
        sidecar = Path(value)
        if not sidecar.is_absolute():
            sidecar = path.parent / sidecar
        if not sidecar.exists():
            raise DataError(f"label sidecar not found: {sidecar}")
        with open(sidecar) as fh:
            content = yaml.safe_load(fh)
        if isinstance(content, dict):
            for key in (trial_id, path.name, path.stem):
                if key in content:
                    return content[key], None
            raise DataError(f"sidecar {sidecar} has no label for trial {trial_id!r}")
        return content, None
    raise ConfigError(f"unknown label source {kind!r}")


def _column_key(frame: pd.DataFrame, ref):
    if isinstance(ref, str) and ref in frame.columns:
        return ref
    if isinstance(ref, int) and not isinstance(ref, bool) and 0 <= ref < frame.shape[1]:
        return frame.columns[ref]
    raise DataError(f"mapped column {ref!r} absent from file (has {list(frame.columns)})")


def _to_float(column: pd.Series) -> np.ndarray:
    # Python's float() is correctly rounded, so canonical files reload bit-exactly.
    values = column.to_numpy(dtype=object)
    try:
        return values.astype(float)
    except (TypeError, ValueError):
        out = np.empty(values.size)
        for i, v in enumerate(values):
            try:
                out[i] = float(v)
            except (TypeError, ValueError):
                out[i] = np.nan
        return out


def _as_level(value) -> int:
    try:
        level = int(value)
    except (TypeError, ValueError):
        raise DataError(f"fatigue label {value!r} is not an integer") from None
    if level != value and float(value) != level:
        raise DataError(f"fatigue label {value!r} is not an integer")
    if level not in (0, 1, 2):
        raise DataError(f"fatigue label {level} outside {{0, 1, 2}}")
    return level


def load_recording(path, mapping: dict | str | Path | None = None) -> EegRecording:
    """Load one trial from a delimited text file.

    Rows where any mapped channel is non-finite (or unparsable) are dropped
    and counted in ``diagnostics["rows_dropped"]``.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"recording not found: {path}")
    text = path.read_text()
    meta = _read_meta(text)
    if mapping is None and meta is None:
        raise ConfigError(f"{path} is not in canonical layout; a column map is required")
    if isinstance(mapping, (str, Path)):
        mapping = load_mapping(mapping)

    body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
    if meta is not None and mapping is None:
        mapping = {
            "channels": {ch: ch for ch in meta["channels"]},
            "label": {"column": LABEL_COLUMN},
            "sample_rate_hz": meta["sample_rate_hz"],
            "header": True,
            "delimiter": ",",
        }
    if not mapping.get("channels"):
        raise ConfigError("column map names no channels")

    delimiter = mapping.get("delimiter", "auto")
    if delimiter == "auto":
        delimiter = _sniff_delimiter(body)
    header = mapping.get("header", "auto")
    if header == "auto":
        first = body.split("\n", 1)[0]
        header = _looks_like_header(first, delimiter)

    frame = pd.read_csv(
        io.StringIO(body), sep=delimiter, header=0 if header else None, dtype=str,
        skipinitialspace=True, keep_default_na=False,
    )
    trial_id = str(mapping.get("trial_id") or (meta or {}).get("trial_id") or path.stem)
    label_value, label_column = _resolve_label(mapping, frame, path, trial_id)

    names = list(mapping["channels"])
    columns = [_column_key(frame, ref) for ref in mapping["channels"].values()]
    numeric = np.column_stack([_to_float(frame[c]) for c in columns])
    keep = np.all(np.isfinite(numeric), axis=1)
    if label_column is not None:
        labels = _to_float(frame[label_column])
        keep &= np.isfinite(labels)
    rows_read = int(numeric.shape[0])
    dropped = int(rows_read - keep.sum())
    if not keep.any():
        raise DataError(f"{path}: no finite rows left after cleaning")
    if label_column is not None:
        distinct = np.unique(labels[keep])
        if distinct.size != 1:
            raise DataError(f"{path}: label column holds several values {distinct.tolist()}")
        label_value = distinct[0]
    level = _as_level(label_value)
    if dropped:
        logger.info("%s: dropped %d non-finite rows of %d", path.name, dropped, rows_read)

    rate = mapping.get("sample_rate_hz")
    if rate is None:
        raise ConfigError("column map gives no sample_rate_hz")
    return EegRecording(
        channels=names,
        samples=numeric[keep].T.copy(),
        sample_rate_hz=float(rate),
        trial_id=trial_id,
        fatigue_level=level,
        diagnostics={"rows_read": rows_read, "rows_dropped": dropped, "channels": len(names)},
    )


def write_recording(rec: EegRecording, path) -> Path:
    """Write ``rec`` in the canonical layout; reloading is bit-exact."""
    path = Path(path)
    meta = {"channels": rec.channels, "sample_rate_hz": rec.sample_rate_hz,
            "trial_id": rec.trial_id}
    lines = [_META_PREFIX + " " + json.dumps(meta, sort_keys=True),
             ",".join(rec.channels + [LABEL_COLUMN])]
    for row in rec.samples.T:
        lines.append(",".join(repr(float(v)) for v in row) + f",{rec.fatigue_level}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_diagnostics(rec: EegRecording, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(rec.diagnostics, indent=2, sort_keys=True) + "\n")
    return path


def window_count(n_samples: int, length: int, stride: int) -> int:
    if n_samples < length:
        return 0
    return (n_samples - length) // stride + 1


def window(rec: EegRecording, spec: WindowSpec | None = None) -> WindowedSeries:
    """Cut ``rec`` into contiguous windows of ``spec.length_samples``."""
    spec = spec or WindowSpec()
    if rec.n_samples < spec.length_samples:
        raise DataError(
            f"trial {rec.trial_id}: {rec.n_samples} samples is shorter than one "
            f"window of {spec.length_samples}"
        )
    channels = rec.channels
    samples = rec.samples
    if spec.channel_subset is not None:
        missing = [ch for ch in spec.channel_subset if ch not in channels]
        if missing:
            raise DataError(f"channels {missing} not in recording")
        idx = [channels.index(ch) for ch in spec.channel_subset]
        samples = samples[idx]
        channels = list(spec.channel_subset)
    count = window_count(rec.n_samples, spec.length_samples, spec.stride_samples)
    starts = np.arange(count) * spec.stride_samples
    windows = np.stack([samples[:, s:s + spec.length_samples] for s in starts])
    return WindowedSeries(
        windows=windows,
        window_times=starts,
        label=rec.fatigue_level,
        channels=channels,
        trial_id=rec.trial_id,
        sample_rate_hz=rec.sample_rate_hz,
    )
