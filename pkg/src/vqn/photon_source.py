"""Stochastic emulation of the entangled-pair source, filters and detectors.

Each configured signal/idler pair emits correlated detection times as a
homogeneous Poisson process; both detections get independent Gaussian timing
jitter and are quantized to 1 ps.  Uncorrelated background (including dark
counts) is an independent Poisson process per channel.  Detection efficiency
is folded into the configured detected rates, so every parameter here is
directly measurable from the emitted streams.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .tagcore import TagStream, partner_channel

PS_PER_S = 1_000_000_000_000
MAX_CONCURRENT_PAIRS = 3  # six detectors, two per pair

# Singles target for the emulated testbed: mid-band of the measured
# 230k..300k counts/s range.
TESTBED_SINGLES_HZ = 265_000.0
TESTBED_PAIR_RATES_HZ = {26: 53106.45, 25: 45601.10, 24: 45738.53}
DEFAULT_JITTER_SIGMA_PS = 30.0


class SourceConfigError(ValueError):
    """Invalid source configuration."""


@dataclass(frozen=True)
class PairConfig:
    """One signal/idler channel pair of the emulated source.

    ``detected_pair_rate_hz`` is the rate of coincidence-detectable pairs;
    the background rates are uncorrelated singles per channel.
    """

    signal: int
    idler: int
    detected_pair_rate_hz: float
    background_signal_hz: float = 0.0
    background_idler_hz: float = 0.0
    jitter_sigma_ps: float = DEFAULT_JITTER_SIGMA_PS

    def __post_init__(self):
        if self.idler != partner_channel(self.signal):
            raise SourceConfigError(
                f"idler {self.idler} is not the partner of signal {self.signal}"
            )
        for name in ("detected_pair_rate_hz", "background_signal_hz", "background_idler_hz", "jitter_sigma_ps"):
            if getattr(self, name) < 0:
                raise SourceConfigError(f"{name} must be >= 0")


@dataclass(frozen=True)
class SourceConfig:
    duration_s: float
    pairs: tuple[PairConfig, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if self.duration_s <= 0:
            raise SourceConfigError("duration_s must be positive")
        if len(self.pairs) > MAX_CONCURRENT_PAIRS:
            raise SourceConfigError(
                f"at most {MAX_CONCURRENT_PAIRS} pairs can be active concurrently"
            )
        used: set[int] = set()
        for p in self.pairs:
            for ch in (p.signal, p.idler):
                if ch in used:
                    raise SourceConfigError(f"channel {ch} used by more than one pair")
                used.add(ch)

    @property
    def duration_ps(self) -> int:
        return round(self.duration_s * PS_PER_S)

    def config_hash(self) -> str:
        blob = json.dumps(
            {
                "duration_s": self.duration_s,
                "seed": self.seed,
                "pairs": [
                    [p.signal, p.idler, p.detected_pair_rate_hz,
                     p.background_signal_hz, p.background_idler_hz, p.jitter_sigma_ps]
                    for p in self.pairs
                ],
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, doc: dict) -> "SourceConfig":
        pairs = tuple(PairConfig(**p) for p in doc.get("pairs", []))
        return cls(duration_s=doc["duration_s"], pairs=pairs, seed=doc.get("seed", 0))


def expected_accidental_rate(rate_a_hz: float, rate_b_hz: float, window_s: float) -> float:
    """Poisson accidental-coincidence rate r_a * r_b * tau (per second).

    Serves as the independent oracle for the accidental estimate produced by
    the windowed coincidence analysis.
    """
    if rate_a_hz < 0 or rate_b_hz < 0 or window_s < 0:
        raise ValueError("rates and window must be >= 0")
    return rate_a_hz * rate_b_hz * window_s


def testbed_preset(duration_s: float = 60.0, seed: int = 7, jitter_sigma_ps: float = DEFAULT_JITTER_SIGMA_PS) -> SourceConfig:
    """Three-pair configuration emulating the lab source.

    Pair rates reproduce the measured coincidence rates; backgrounds top the
    per-channel singles up to ~265k counts/s, the middle of the measured
    230k..300k band.
    """
    pairs = []
    for signal in sorted(TESTBED_PAIR_RATES_HZ, reverse=True):  # 26, 25, 24
        pair_rate = TESTBED_PAIR_RATES_HZ[signal]
        background = TESTBED_SINGLES_HZ - pair_rate
        pairs.append(
            PairConfig(
                signal=signal,
                idler=partner_channel(signal),
                detected_pair_rate_hz=pair_rate,
                background_signal_hz=background,
                background_idler_hz=background,
                jitter_sigma_ps=jitter_sigma_ps,
            )
        )
    return SourceConfig(duration_s=duration_s, pairs=tuple(pairs), seed=seed)


def _poisson_times(rng: np.random.Generator, rate_hz: float, duration_ps: int, duration_s: float) -> np.ndarray:
    """Arrival times (float ps, unsorted) of a homogeneous Poisson process."""
    n = rng.poisson(rate_hz * duration_s)
    return rng.uniform(0.0, float(duration_ps), size=n)


def generate(config: SourceConfig) -> dict[int, TagStream]:
    """Emit one TagStream per configured channel; deterministic per (config, seed)."""
    duration_ps = config.duration_ps
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(len(config.pairs))

    meta_base = {"seed": config.seed, "config_hash": config.config_hash()}
    streams: dict[int, TagStream] = {}
    for pair, child in zip(config.pairs, children):
        rng = np.random.default_rng(child)
        emission = _poisson_times(rng, pair.detected_pair_rate_hz, duration_ps, config.duration_s)
        per_channel = {}
        for ch, background in (
            (pair.signal, pair.background_signal_hz),
            (pair.idler, pair.background_idler_hz),
        ):
            if pair.jitter_sigma_ps > 0:
                detected = emission + rng.normal(0.0, pair.jitter_sigma_ps, size=emission.size)
            else:
                detected = emission
            tags = np.rint(detected).astype(np.int64)
            bg = np.rint(_poisson_times(rng, background, duration_ps, config.duration_s)).astype(np.int64)
            both = np.concatenate([tags, bg])
            both = both[(both >= 0) & (both <= duration_ps)]
            per_channel[ch] = both
        for ch, times in per_channel.items():
            channels = np.full(times.size, ch, dtype=np.uint16)
            streams[ch] = TagStream.from_unsorted(
                channels, times, duration_ps, {**meta_base, "channel": ch}
            )
    return streams
