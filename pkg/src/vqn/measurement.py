"""Virtual time-tagger measurement functions over tag streams.

Implements the four user-facing analyses: per-channel count rates, binned
arrival histograms, cross-channel delay histograms with peak search, and
windowed coincidence counting (coincidence rate, accidental rate, CAR).

All timestamp arithmetic is exact integer picoseconds.  Cross-pair counting
uses sorted-array window searches, so the cost is O((n_a + n_b) log + P)
where P is the number of pairs inside the search span, never O(n_a * n_b).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .tagcore import TagStream

DEFAULT_WINDOW_PS = 500
DEFAULT_BACKGROUND_OFFSET_PS = 1000
DEFAULT_BACKGROUND_WIDTH_PS = 500

# Peak search defaults: +/-50 ns comfortably contains detector jitter and any
# emulated cable delay; 25 ps bins resolve the correlation peak.  Both the bin
# width and the resulting bin count are odd so the delta bins partition the
# search span symmetrically around the center.
PEAK_SEARCH_RANGE_PS = 100_000
PEAK_SEARCH_BIN_PS = 25


class MeasurementError(ValueError):
    """Base class for measurement-layer errors."""


class MissingChannelError(MeasurementError):
    def __init__(self, channels):
        self.channels = sorted(channels)
        super().__init__(f"channels not present in acquisition: {self.channels}")


class NoPeakError(MeasurementError):
    """Delay histogram has no nonzero bin."""


class UndefinedCarError(MeasurementError):
    """CAR requested with a non-positive accidental rate."""


@dataclass(frozen=True)
class HistogramSpec:
    bin_width_ps: int
    n_bins: int

    def __post_init__(self):
        if self.bin_width_ps < 1:
            raise MeasurementError("bin_width_ps must be >= 1")
        if self.n_bins < 1:
            raise MeasurementError("n_bins must be >= 1")


@dataclass(frozen=True)
class Histogram:
    """Binned counts; bin k spans picoseconds [origin + k*w, origin + (k+1)*w)."""

    spec: HistogramSpec
    origin_ps: int
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != self.spec.n_bins:
            raise MeasurementError("counts length must equal n_bins")
        if any(c < 0 for c in counts):
            raise MeasurementError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    def bin_center_ps(self, k: int) -> int:
        return self.origin_ps + k * self.spec.bin_width_ps + self.spec.bin_width_ps // 2

    def total(self) -> int:
        return sum(self.counts)

    def to_dict(self) -> dict:
        return {
            "bin_width_ps": self.spec.bin_width_ps,
            "origin_ps": self.origin_ps,
            "counts": list(self.counts),
        }


@dataclass(frozen=True)
class CoincidenceSpec:
    """Window geometry for coincidence analysis.

    The coincidence window is centered on the histogram peak; the two
    background windows sit symmetrically ``background_offset_ps`` away and
    must not overlap the coincidence window.
    """

    window_ps: int = DEFAULT_WINDOW_PS
    background_offset_ps: int = DEFAULT_BACKGROUND_OFFSET_PS
    background_width_ps: int = DEFAULT_BACKGROUND_WIDTH_PS

    def __post_init__(self):
        if min(self.window_ps, self.background_offset_ps, self.background_width_ps) < 1:
            raise MeasurementError("coincidence spec values must be positive")
        if self.background_offset_ps <= self.window_ps / 2 + self.background_width_ps / 2:
            raise MeasurementError(
                "background windows overlap the coincidence window: "
                f"offset {self.background_offset_ps} <= "
                f"{self.window_ps / 2 + self.background_width_ps / 2}"
            )


@dataclass(frozen=True)
class CoincidenceResult:
    rate_a_hz: float
    rate_b_hz: float
    coincidence_rate_hz: float
    accidental_rate_hz: float
    car: float | None
    peak_delay_ps: int

    def to_dict(self) -> dict:
        return {
            "rate_a_hz": self.rate_a_hz,
            "rate_b_hz": self.rate_b_hz,
            "cc_hz": self.coincidence_rate_hz,
            "acc_hz": self.accidental_rate_hz,
            "car": self.car,
            "peak_delay_ps": self.peak_delay_ps,
        }


def count_rate(
    streams: Mapping[int, TagStream], channels, duration_s: float
) -> dict[int, float]:
    """Detection events per second for each requested channel."""
    if duration_s <= 0:
        raise MeasurementError("duration_s must be positive")
    wanted = list(channels)
    missing = [ch for ch in wanted if ch not in streams]
    if missing:
        raise MissingChannelError(missing)
    return {ch: len(streams[ch]) / duration_s for ch in wanted}


def counter(stream: TagStream, spec: HistogramSpec, start_ps: int = 0) -> Histogram:
    """Time-resolved histogram of arrivals; tags outside the span are ignored."""
    t = stream.timestamps_ps
    idx = (t - start_ps) // spec.bin_width_ps
    mask = (idx >= 0) & (idx < spec.n_bins)
    counts = np.bincount(idx[mask].astype(np.int64), minlength=spec.n_bins)
    return Histogram(spec, int(start_ps), tuple(int(c) for c in counts))


def _pair_window_count(a: np.ndarray, b: np.ndarray, lo_ps: int, hi_ps: int) -> int:
    """Number of cross pairs (i, j) with t_b[j] - t_a[i] in [lo_ps, hi_ps]."""
    lo = np.searchsorted(b, a + lo_ps, side="left")
    hi = np.searchsorted(b, a + hi_ps, side="right")
    return int(np.sum(hi - lo))


def _pair_deltas(a: np.ndarray, b: np.ndarray, lo_ps: int, hi_ps: int) -> np.ndarray:
    """All delta values t_b - t_a falling in [lo_ps, hi_ps], unsorted."""
    lo = np.searchsorted(b, a + lo_ps, side="left")
    hi = np.searchsorted(b, a + hi_ps, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    # expand [lo_i, hi_i) index ranges into one flat index vector
    starts = np.repeat(lo, counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return b[starts + offsets] - np.repeat(a, counts)


def delay_histogram(
    a: TagStream,
    b: TagStream,
    bin_width_ps: int = PEAK_SEARCH_BIN_PS,
    range_ps: int = PEAK_SEARCH_RANGE_PS,
    center_ps: int = 0,
) -> Histogram:
    """Histogram of arrival-time differences t_b - t_a around ``center_ps``.

    The bin count is forced odd so the covered delta span is symmetric about
    the center; with an odd ``bin_width_ps`` every bin covers exactly
    ``bin_width_ps`` integer deltas and swapping the inputs mirrors the
    histogram exactly.
    """
    if bin_width_ps < 1:
        raise MeasurementError("bin_width_ps must be >= 1")
    if range_ps < bin_width_ps:
        raise MeasurementError("range_ps must be >= bin_width_ps")
    m = range_ps // (2 * bin_width_ps)
    n_bins = 2 * m + 1
    span = n_bins * bin_width_ps
    lo_d = center_ps - span // 2
    hi_d = lo_d + span - 1
    deltas = _pair_deltas(a.timestamps_ps, b.timestamps_ps, lo_d, hi_d)
    idx = (deltas - lo_d) // bin_width_ps
    counts = np.bincount(idx, minlength=n_bins)
    return Histogram(HistogramSpec(bin_width_ps, n_bins), int(lo_d), tuple(int(c) for c in counts))


def find_peak(h: Histogram) -> int:
    """Center of the maximal bin; ties prefer small |delay|, then small delay."""
    counts = np.asarray(h.counts)
    top = counts.max()
    if top == 0:
        raise NoPeakError("all histogram bins are zero")
    candidates = [h.bin_center_ps(int(k)) for k in np.flatnonzero(counts == top)]
    return min(candidates, key=lambda c: (abs(c), c))


def car(cc_hz: float, acc_hz: float) -> float:
    """Coincidence-to-accidental ratio."""
    if acc_hz <= 0:
        raise UndefinedCarError(f"accidental rate must be positive, got {acc_hz}")
    return cc_hz / acc_hz


def coincidence_count(
    a: TagStream,
    b: TagStream,
    spec: CoincidenceSpec = CoincidenceSpec(),
    duration_s: float | None = None,
) -> CoincidenceResult:
    """Windowed coincidence analysis of two channels.

    Locates the correlation peak with a delay histogram, integrates cross
    pairs inside the coincidence window (closed interval, all pairs counted),
    and estimates accidentals as the mean of the two offset background
    windows.  A zero accidental estimate reports CAR as absent rather than
    infinite.
    """
    if duration_s is None:
        duration_s = a.duration_ps / 1e12
    if duration_s <= 0:
        raise MeasurementError("duration_s must be positive")
    hist = delay_histogram(a, b)
    peak = find_peak(hist)

    ta, tb = a.timestamps_ps, b.timestamps_ps
    half = spec.window_ps // 2
    cc_count = _pair_window_count(ta, tb, peak - half, peak + half)
    bg_half = spec.background_width_ps // 2
    bg_counts = [
        _pair_window_count(ta, tb, c - bg_half, c + bg_half)
        for c in (peak - spec.background_offset_ps, peak + spec.background_offset_ps)
    ]
    cc_hz = cc_count / duration_s
    acc_hz = (bg_counts[0] + bg_counts[1]) / 2 / duration_s
    return CoincidenceResult(
        rate_a_hz=len(a) / duration_s,
        rate_b_hz=len(b) / duration_s,
        coincidence_rate_hz=cc_hz,
        accidental_rate_hz=acc_hz,
        car=car(cc_hz, acc_hz) if acc_hz > 0 else None,
        peak_delay_ps=peak,
    )
