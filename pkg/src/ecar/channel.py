"""Shared-bandwidth channel emulation.

Each direction is a fluid processor-sharing link: at any instant the
capacity is divided equally among active transfers, so one message's delay
is base_rtt/2 plus size / (capacity / concurrency), matching the Wi-Fi
contention behavior the runner reproduces. Fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple


@dataclass(frozen=True)
class ChannelModel:
    uplink_Bps: float = 3.5e6     # measured upload bandwidth default
    downlink_Bps: float = 3.98e6  # measured download bandwidth default
    base_rtt_us: float = 10_000.0

    @property
    def propagation_s(self) -> float:
        return self.base_rtt_us / 2.0 * 1e-6


class FluidLink:
    """One direction of the shared channel (equal-share fluid model)."""

    def __init__(self, capacity_Bps: float):
        if capacity_Bps <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity_Bps
        self._active: Dict[int, float] = {}  # transfer id -> remaining bytes
        self._meta: Dict[int, object] = {}
        self._now = 0.0
        self.total_bytes = 0.0

    def rate(self) -> float:
        return self.capacity / len(self._active) if self._active else 0.0

    def advance(self, t: float) -> None:
        """Drain active transfers up to time t (no completions removed)."""
        if t < self._now - 1e-12:
            raise ValueError("time went backwards")
        if self._active and t > self._now:
            drained = (t - self._now) * self.rate()
            for tid in self._active:
                self._active[tid] -= drained
        self._now = max(self._now, t)

    def start(self, tid: int, nbytes: int, t: float, meta: object = None) -> None:
        self.advance(t)
        self._active[tid] = float(max(nbytes, 1))
        self._meta[tid] = meta
        self.total_bytes += nbytes

    def next_completion(self) -> Optional[float]:
        if not self._active:
            return None
        return self._now + min(self._active.values()) / self.rate()

    def pop_completed(self, t: float, eps: float = 1e-6) -> List[Tuple[int, object]]:
        """Transfers finished by time t, in start order."""
        self.advance(t)
        done = [tid for tid, rem in self._active.items() if rem <= eps]
        out = []
        for tid in done:
            del self._active[tid]
            out.append((tid, self._meta.pop(tid)))
        return out

    @property
    def busy(self) -> bool:
        return bool(self._active)
