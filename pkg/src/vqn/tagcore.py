"""Photon time-tag data model, DWDM grid arithmetic and tag-file I/O.

Timestamps are signed 64-bit picoseconds relative to a per-stream epoch,
which keeps arithmetic exact over ~106 days of acquisition.  Streams are
immutable after construction and therefore safe to share across threads.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

SPEED_OF_LIGHT_NM_THZ = 299792.458  # c expressed in nm * THz

# 100 GHz ITU grid: channel n sits at 190.0 + 0.1 * n THz.  The offset is
# fixed by fitting the eight wavelengths used by the hardware channel plan.
GRID_BASE_THZ = 190.0
GRID_STEP_THZ = 0.1

# Supported signal/idler plan: signals 23-26 pair with idlers 19-16 so that
# every valid pair has a constant index sum.
SIGNAL_CHANNELS = (23, 24, 25, 26)
IDLER_CHANNELS = (16, 17, 18, 19)
PAIR_INDEX_SUM = 42
SUPPORTED_CHANNELS = frozenset(SIGNAL_CHANNELS) | frozenset(IDLER_CHANNELS)

ENERGY_TOLERANCE_THZ = 0.2  # SPDC output is broadband; frequency match is approximate

MAGIC = b"VQTT"
FORMAT_VERSION = 1
HEADER_SIZE = 12  # 4 magic + 2 version + 6 record count
RECORD_DTYPE = np.dtype([("channel", "<u2"), ("timestamp_ps", "<i8")])
CSV_HEADER = "channel,timestamp_ps"


class InvalidChannelError(ValueError):
    """Channel index outside the sane ITU range."""


class UnsupportedChannelError(ValueError):
    """Channel not part of the signal/idler plan."""


class TagFileError(Exception):
    """Base class for tag-file parse failures."""


class MalformedHeaderError(TagFileError):
    pass


class TruncatedFileError(TagFileError):
    pass


class UnsortedRecordsError(TagFileError):
    pass


def itu_frequency_thz(index: int) -> float:
    """Grid frequency of channel ``index`` in THz."""
    if not 1 <= index <= 100:
        raise InvalidChannelError(f"channel index {index} outside 1..100")
    return GRID_BASE_THZ + GRID_STEP_THZ * index


def itu_wavelength_nm(index: int) -> float:
    """Vacuum wavelength of channel ``index`` in nm."""
    return SPEED_OF_LIGHT_NM_THZ / itu_frequency_thz(index)


@dataclass(frozen=True)
class ItuChannel:
    """One 100 GHz grid channel with derived frequency and wavelength."""

    index: int
    frequency_thz: float
    wavelength_nm: float

    def __post_init__(self):
        expected = itu_frequency_thz(self.index)
        if abs(self.frequency_thz - expected) > 1e-9:
            raise InvalidChannelError(
                f"channel {self.index}: frequency {self.frequency_thz} THz off grid"
            )
        rel = abs(self.wavelength_nm * self.frequency_thz - SPEED_OF_LIGHT_NM_THZ)
        if rel > 1e-6 * SPEED_OF_LIGHT_NM_THZ:
            raise InvalidChannelError(
                f"channel {self.index}: wavelength/frequency product violates c"
            )

    @classmethod
    def from_index(cls, index: int) -> "ItuChannel":
        return cls(index, itu_frequency_thz(index), itu_wavelength_nm(index))


def partner_channel(channel: int) -> int:
    """Opposite member of a signal/idler pair.  Involution on the plan."""
    if channel not in SUPPORTED_CHANNELS:
        raise UnsupportedChannelError(
            f"channel {channel} not in supported plan {sorted(SUPPORTED_CHANNELS)}"
        )
    return PAIR_INDEX_SUM - channel


class EnergyCheck(tuple):
    """(ok, residual_thz) result of an energy-conservation check."""

    __slots__ = ()

    def __new__(cls, ok: bool, residual_thz: float):
        return super().__new__(cls, (ok, residual_thz))

    @property
    def ok(self) -> bool:
        return self[0]

    @property
    def residual_thz(self) -> float:
        return self[1]


def energy_conservation_check(
    signal: int, pump_wavelength_nm: float, tolerance_thz: float = ENERGY_TOLERANCE_THZ
) -> EnergyCheck:
    """Check f(signal) + f(idler) against the pump frequency.

    The comparison is toleranced: the grid frequency sum (384.2 THz for every
    supported pair) and a 780 nm pump differ by ~0.15 THz, which the broadband
    source still covers.
    """
    if pump_wavelength_nm <= 0:
        raise ValueError("pump wavelength must be positive")
    idler = partner_channel(signal)
    pair_sum = itu_frequency_thz(signal) + itu_frequency_thz(idler)
    pump = SPEED_OF_LIGHT_NM_THZ / pump_wavelength_nm
    residual = abs(pair_sum - pump)
    return EnergyCheck(residual <= tolerance_thz, residual)


@dataclass(frozen=True)
class TagRecord:
    """One photon detection: channel index and picosecond timestamp."""

    channel: int
    timestamp_ps: int


def _normalize_metadata(metadata: Mapping | None) -> dict:
    out = {"seed": None, "config_hash": ""}
    if metadata:
        out.update(metadata)
    return out


class TagStream:
    """Time-ordered photon detections on one or more channels.

    Stored as parallel numpy arrays (uint16 channel, int64 picoseconds) so
    that multi-million-tag acquisitions stay cheap to analyze.  Records are
    sorted by timestamp with ties broken by ascending channel; every
    timestamp lies in ``[0, duration_ps]``.
    """

    __slots__ = ("channels", "timestamps_ps", "duration_ps", "metadata")

    def __init__(self, channels, timestamps_ps, duration_ps: int, metadata=None, *, validate: bool = True):
        ch = np.ascontiguousarray(channels, dtype=np.uint16)
        ts = np.ascontiguousarray(timestamps_ps, dtype=np.int64)
        if ch.ndim != 1 or ts.ndim != 1 or ch.shape != ts.shape:
            raise ValueError("channels and timestamps must be 1-d arrays of equal length")
        if validate:
            _validate_order(ch, ts)
            if ts.size and (ts[0] < 0 or ts[-1] > duration_ps):
                raise ValueError("timestamps outside [0, duration_ps]")
        ch.flags.writeable = False
        ts.flags.writeable = False
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "timestamps_ps", ts)
        object.__setattr__(self, "duration_ps", int(duration_ps))
        object.__setattr__(self, "metadata", _normalize_metadata(metadata))

    def __setattr__(self, name, value):
        raise AttributeError("TagStream is immutable")

    def __len__(self) -> int:
        return int(self.timestamps_ps.size)

    def __iter__(self) -> Iterator[TagRecord]:
        for c, t in zip(self.channels, self.timestamps_ps):
            yield TagRecord(int(c), int(t))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            self.duration_ps == other.duration_ps
            and self.metadata == other.metadata
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.timestamps_ps, other.timestamps_ps)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"TagStream({len(self)} records, duration_ps={self.duration_ps})"

    @property
    def records(self) -> list[TagRecord]:
        return list(self)

    @classmethod
    def from_records(cls, records: Sequence[TagRecord], duration_ps: int, metadata=None) -> "TagStream":
        ch = np.fromiter((r.channel for r in records), dtype=np.uint16, count=len(records))
        ts = np.fromiter((r.timestamp_ps for r in records), dtype=np.int64, count=len(records))
        return cls(ch, ts, duration_ps, metadata)

    @classmethod
    def from_unsorted(cls, channels, timestamps_ps, duration_ps: int, metadata=None) -> "TagStream":
        """Sort (timestamp, channel) lexicographically, then construct."""
        ch = np.asarray(channels, dtype=np.uint16)
        ts = np.asarray(timestamps_ps, dtype=np.int64)
        order = np.lexsort((ch, ts))
        stream = cls(ch[order], ts[order], duration_ps, metadata, validate=False)
        if ts.size and (stream.timestamps_ps[0] < 0 or stream.timestamps_ps[-1] > duration_ps):
            raise ValueError("timestamps outside [0, duration_ps]")
        return stream


def _validate_order(ch: np.ndarray, ts: np.ndarray) -> None:
    if ts.size < 2:
        return
    dt = np.diff(ts)
    if np.any(dt < 0):
        raise UnsortedRecordsError("timestamps decrease")
    ties = dt == 0
    if np.any(ties & (np.diff(ch.astype(np.int32)) < 0)):
        raise UnsortedRecordsError("channel order violated on equal timestamps")


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_stream(stream: TagStream, path) -> None:
    """Write the binary tag file plus its sibling ``.meta.json``."""
    path = Path(path)
    n = len(stream)
    rec = np.empty(n, dtype=RECORD_DTYPE)
    rec["channel"] = stream.channels
    rec["timestamp_ps"] = stream.timestamps_ps
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(n.to_bytes(6, "little"))
        fh.write(rec.tobytes())
    meta = {"duration_ps": stream.duration_ps, **stream.metadata}
    _meta_path(path).write_text(json.dumps(meta))


def read_stream(path) -> TagStream:
    """Read a binary ``VQTT`` tag file, or a CSV fallback with the documented header."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        return _read_binary(raw, path)
    return _read_csv(raw, path)


def _read_sidecar(path: Path) -> dict | None:
    meta_file = _meta_path(path)
    if meta_file.exists():
        return json.loads(meta_file.read_text())
    return None


def _read_binary(raw: bytes, path: Path) -> TagStream:
    if len(raw) < HEADER_SIZE:
        raise MalformedHeaderError(f"{path}: header shorter than {HEADER_SIZE} bytes")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported format version {version}")
    count = int.from_bytes(raw[6:12], "little")
    payload = raw[HEADER_SIZE:]
    if len(payload) != count * RECORD_DTYPE.itemsize:
        raise TruncatedFileError(
            f"{path}: expected {count * RECORD_DTYPE.itemsize} record bytes, got {len(payload)}"
        )
    rec = np.frombuffer(payload, dtype=RECORD_DTYPE)
    meta = _read_sidecar(path)
    if meta is not None:
        meta = dict(meta)
        duration = meta.pop("duration_ps")
    else:
        duration = int(rec["timestamp_ps"][-1]) if count else 0
        meta = None
    try:
        return TagStream(rec["channel"], rec["timestamp_ps"], duration, meta)
    except ValueError as exc:
        raise UnsortedRecordsError(f"{path}: {exc}") from exc


def _read_csv(raw: bytes, path: Path) -> TagStream:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedHeaderError(f"{path}: neither VQTT magic nor text CSV") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedHeaderError(f"{path}: empty file") from None
    except csv.Error as exc:
        raise MalformedHeaderError(f"{path}: neither VQTT magic nor text CSV") from exc
    if [h.strip() for h in header] != CSV_HEADER.split(","):
        raise MalformedHeaderError(f"{path}: expected CSV header '{CSV_HEADER}'")
    channels: list[int] = []
    times: list[int] = []
    for row in reader:
        if not row:
            continue
        try:
            channels.append(int(row[0]))
            times.append(int(row[1]))
        except (IndexError, ValueError) as exc:
            raise TruncatedFileError(f"{path}: bad CSV record {row!r}") from exc
    meta = _read_sidecar(path)
    if meta is not None:
        meta = dict(meta)
        duration = meta.pop("duration_ps")
    else:
        duration = max(times) if times else 0
        meta = None
    ch = np.asarray(channels, dtype=np.uint16)
    ts = np.asarray(times, dtype=np.int64)
    try:
        return TagStream(ch, ts, duration, meta)
    except ValueError as exc:
        raise UnsortedRecordsError(f"{path}: {exc}") from exc


def merge_streams(streams: Sequence[TagStream]) -> TagStream:
    """Merge per-detector streams into one time-ordered stream.

    All inputs must share the same duration; the result is the sorted
    multiset union of their records.
    """
    if not streams:
        raise ValueError("need at least one stream")
    duration = streams[0].duration_ps
    if any(s.duration_ps != duration for s in streams):
        raise ValueError("streams have mismatched durations")
    ch = np.concatenate([s.channels for s in streams])
    ts = np.concatenate([s.timestamps_ps for s in streams])
    return TagStream.from_unsorted(ch, ts, duration)
