"""Fair assignment of entangled channel pairs to competing users.

The scheduler maximizes a proportional-fair utility: each waiting user's
per-session quality of service is the entangled-pair count received so far
divided by the total session time (waiting plus service), and assigning a
pair with rate R to a user with quality q is worth log(1 + R/q).  A small
floor on q keeps brand-new users at the largest finite utility instead of an
infinity.  Assignments are computed by an exact O(n^3) Hungarian solver and
applied non-preemptively: only free pairs and waiting users participate.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .tagcore import partner_channel

QOS_FLOOR = 1.0  # pairs/s; removes the q=0 singularity for new users

POLICY_HUNGARIAN = "hungarian"
POLICY_FCFS = "fcfs"
POLICIES = (POLICY_HUNGARIAN, POLICY_FCFS)

WAITING = "waiting"
SERVED = "served"
DEPARTED = "departed"


class AllocationError(ValueError):
    pass


class PiecewiseRate:
    """Piecewise-constant rate trace R(t); the latest sample at or before t applies."""

    def __init__(self, samples: float | Iterable[tuple[float, float]]):
        if isinstance(samples, (int, float)):
            samples = [(0.0, float(samples))]
        pts = sorted((float(t), float(r)) for t, r in samples)
        if not pts:
            raise AllocationError("rate trace needs at least one sample")
        if any(r < 0 for _, r in pts):
            raise AllocationError("rates must be >= 0")
        self._times = [t for t, _ in pts]
        self._rates = [r for _, r in pts]

    def rate_at(self, t: float) -> float:
        i = bisect.bisect_right(self._times, t) - 1
        return self._rates[max(i, 0)]

    def set_rate(self, t: float, rate_hz: float) -> None:
        if rate_hz < 0:
            raise AllocationError("rates must be >= 0")
        i = bisect.bisect_right(self._times, t)
        self._times.insert(i, float(t))
        self._rates.insert(i, float(rate_hz))

    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self._times, self._rates))


@dataclass
class ChannelPairResource:
    """One allocatable signal/idler pair and its time-varying coincidence rate."""

    id: str
    signal: int
    idler: int
    rate: PiecewiseRate
    assigned_to: str | None = None
    assigned_since: float | None = None

    def __post_init__(self):
        if self.idler != partner_channel(self.signal):
            raise AllocationError(f"{self.id}: idler {self.idler} does not pair with signal {self.signal}")
        if isinstance(self.rate, (int, float)):
            self.rate = PiecewiseRate(self.rate)

    @property
    def free(self) -> bool:
        return self.assigned_to is None


@dataclass
class UserSession:
    """Per-user QoS ledger: received pairs, session time and assignment history.

    A session moves waiting -> served -> departed exactly once.  Returning
    users are modelled by seeding ``received_pairs`` and back-dating
    ``arrival_time`` with their carried history.
    """

    user_id: str
    arrival_time: float
    state: str = WAITING
    received_pairs: float = 0.0
    assignment_log: list[tuple[str, float, float, float]] = field(default_factory=list)
    _current: tuple[str, float, float] | None = None  # (pair id, start, rate)

    def begin_service(self, pair_id: str, now: float, rate_hz: float) -> None:
        if self.state != WAITING:
            raise AllocationError(f"user {self.user_id} cannot start service from state {self.state}")
        self.state = SERVED
        self._current = (pair_id, now, rate_hz)

    def end_service(self, now: float) -> None:
        if self.state != SERVED or self._current is None:
            raise AllocationError(f"user {self.user_id} is not in service")
        pair_id, start, rate = self._current
        self.received_pairs += rate * (now - start)
        self.assignment_log.append((pair_id, start, now, rate))
        self._current = None
        self.state = DEPARTED

    @property
    def served_pair_id(self) -> str | None:
        return self._current[0] if self._current else None

    def received_pairs_at(self, now: float) -> float:
        total = self.received_pairs
        if self._current is not None:
            _, start, rate = self._current
            total += rate * (now - start)
        return total


def qos(session: UserSession, now: float) -> float:
    """Effective entanglement rate: received pairs over total session time."""
    if now < session.arrival_time:
        raise AllocationError("now precedes session arrival")
    total_time = now - session.arrival_time
    if total_time == 0:
        return 0.0
    return session.received_pairs_at(now) / total_time


def utility(rate_hz: float, qos_value: float) -> float:
    """Proportional-fair utility log(1 + R/max(q, floor))."""
    if rate_hz < 0 or qos_value < 0:
        raise AllocationError("rate and qos must be >= 0")
    return math.log1p(rate_hz / max(qos_value, QOS_FLOOR))


@dataclass(frozen=True)
class CostMatrix:
    """Utility of assigning pair row_ids[w] to user col_ids[i]."""

    values: np.ndarray
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.row_ids), len(self.col_ids)):
            raise AllocationError("matrix dimensions do not match id lists")
        if not np.all(np.isfinite(values)):
            raise AllocationError("matrix entries must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "col_ids", tuple(self.col_ids))


def build_cost_matrix(
    free_pairs: Sequence[ChannelPairResource],
    waiting: Sequence[UserSession],
    now: float,
) -> CostMatrix:
    if not free_pairs or not waiting:
        raise AllocationError("need at least one free pair and one waiting user")
    values = np.empty((len(free_pairs), len(waiting)))
    user_qos = [qos(s, now) for s in waiting]
    for w, pair in enumerate(free_pairs):
        rate = pair.rate.rate_at(now)
        for i, q in enumerate(user_qos):
            values[w, i] = utility(rate, q)
    return CostMatrix(values, tuple(p.id for p in free_pairs), tuple(s.user_id for s in waiting))


class AssignmentResult(NamedTuple):
    pairs: list[tuple[int, int]]
    total: float


def _solve_square_min(cost: np.ndarray) -> list[int]:
    """Exact minimum-cost perfect matching on a square matrix.

    Shortest-augmenting-path Hungarian with row/column potentials, O(n^3).
    Returns the column matched to each row.
    """
    n = cost.shape[0]
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)  # match[j] = row matched to column j (1-based, 0 = none)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        way = [0] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_of_row = [0] * n
    for j in range(1, n + 1):
        if match[j]:
            col_of_row[match[j] - 1] = j - 1
    return col_of_row


def hungarian_max(matrix: CostMatrix | np.ndarray) -> AssignmentResult:
    """Maximum-total assignment of rows to columns.

    Rectangular inputs are padded with zero-value dummy rows or columns; the
    result always contains exactly min(W, N) real (row, col) pairs, sorted by
    row index.
    """
    values = matrix.values if isinstance(matrix, CostMatrix) else np.asarray(matrix, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise AllocationError("cost matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(values)):
        raise AllocationError("matrix entries must be finite")
    w, n = values.shape
    side = max(w, n)
    cost = np.zeros((side, side))
    cost[:w, :n] = -values  # maximize by minimizing the negated matrix
    col_of_row = _solve_square_min(cost)
    pairs = sorted((r, c) for r, c in enumerate(col_of_row) if r < w and c < n)
    total = float(sum(values[r, c] for r, c in pairs))
    return AssignmentResult(pairs, total)


@dataclass
class AllocationState:
    """The allocator's single-owner view of resources and sessions."""

    resources: list[ChannelPairResource] = field(default_factory=list)
    sessions: list[UserSession] = field(default_factory=list)

    def free_pairs(self) -> list[ChannelPairResource]:
        return sorted((r for r in self.resources if r.free), key=lambda r: r.id)

    def waiting_sessions(self) -> list[UserSession]:
        waiting = [s for s in self.sessions if s.state == WAITING]
        waiting.sort(key=lambda s: (s.arrival_time, s.user_id))
        return waiting

    def resource(self, pair_id: str) -> ChannelPairResource:
        for r in self.resources:
            if r.id == pair_id:
                return r
        raise AllocationError(f"unknown pair {pair_id}")


def allocate(state: AllocationState, now: float, policy: str = POLICY_HUNGARIAN) -> list[tuple[str, str]]:
    """Match free pairs to waiting users and apply the result to ``state``.

    Non-preemptive: already-assigned pairs are never touched.  Returns the
    applied (pair id, user id) assignments; empty when either side is empty.
    """
    if policy not in POLICIES:
        raise AllocationError(f"unknown policy {policy!r}")
    free = state.free_pairs()
    waiting = state.waiting_sessions()
    if not free or not waiting:
        return []

    if policy == POLICY_FCFS:
        chosen = list(zip(free, waiting))
    else:
        matrix = build_cost_matrix(free, waiting, now)
        result = hungarian_max(matrix)
        chosen = [(free[r], waiting[c]) for r, c in result.pairs]

    applied = []
    for pair, session in chosen:
        rate = pair.rate.rate_at(now)
        session.begin_service(pair.id, now, rate)
        pair.assigned_to = session.user_id
        pair.assigned_since = now
        applied.append((pair.id, session.user_id))
    return applied


def release_pair(state: AllocationState, pair_id: str, now: float) -> str | None:
    """Free a pair; the serving session (if any) is closed and credited."""
    pair = state.resource(pair_id)
    user = pair.assigned_to
    if user is None:
        return None
    for session in state.sessions:
        if session.state == SERVED and session.served_pair_id == pair_id:
            session.end_service(now)
            break
    pair.assigned_to = None
    pair.assigned_since = None
    return user


def jain_fairness(values: Sequence[float]) -> float:
    """Jain's index (sum x)^2 / (n * sum x^2); 1 means perfectly equal."""
    if len(values) == 0:
        raise AllocationError("need at least one value")
    if any(v < 0 for v in values):
        raise AllocationError("values must be >= 0")
    peak = float(max(values))
    if peak == 0:
        return 1.0  # all-zero is perfectly equal by convention
    scaled = [v / peak for v in values]  # scale-invariant; avoids underflow
    total = sum(scaled)
    sq = sum(v * v for v in scaled)
    return total * total / (len(scaled) * sq)
