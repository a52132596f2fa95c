"""Measurement backends: the virtual source and a hardware attach point."""

from __future__ import annotations

import threading

from ..photon_source import SourceConfig, generate, testbed_preset
from ..tagcore import TagStream


class BackendUnavailable(RuntimeError):
    pass


class VirtualBackend:
    """Synthesizes tag streams on demand from the emulated source.

    Each acquisition generates only the requested pair (pairs are independent
    Poisson processes, so per-pair generation is statistically identical to a
    full acquisition), mimicking repeated captures on live hardware.  The
    n-th acquisition uses seed ``base_seed + 7919 * n``; the derivation is a
    stable contract so any capture can be reproduced offline from a
    single-pair source config with the same derived seed.
    """

    name = "virtual"

    def __init__(self, seed: int = 7, preset: SourceConfig | None = None):
        self._preset = preset or testbed_preset(seed=seed)
        self._seed = seed
        self._acquisitions = 0
        self._lock = threading.Lock()

    def pair_plan(self) -> list[dict]:
        return [
            {
                "pair_id": f"ch{p.signal}-ch{p.idler}",
                "signal": p.signal,
                "idler": p.idler,
                "rate_hz": p.detected_pair_rate_hz,
            }
            for p in self._preset.pairs
        ]

    def acquire(self, signal: int, idler: int, duration_s: float) -> dict[int, TagStream]:
        pair = next((p for p in self._preset.pairs if p.signal == signal and p.idler == idler), None)
        if pair is None:
            raise BackendUnavailable(f"no configured source pair for channels {signal}/{idler}")
        with self._lock:
            self._acquisitions += 1
            n = self._acquisitions
        config = SourceConfig(duration_s=duration_s, pairs=(pair,), seed=self._seed + 7919 * n)
        return generate(config)


class StubBackend:
    """Placeholder for a real local-server driver; always unavailable."""

    name = "stub"

    def pair_plan(self) -> list[dict]:
        plan = testbed_preset().pairs
        return [
            {
                "pair_id": f"ch{p.signal}-ch{p.idler}",
                "signal": p.signal,
                "idler": p.idler,
                "rate_hz": p.detected_pair_rate_hz,
            }
            for p in plan
        ]

    def acquire(self, signal: int, idler: int, duration_s: float):
        raise BackendUnavailable("no hardware driver attached to the stub backend")
