"""Discrete-event queueing simulation of policy-driven pair allocation.

A closed population of users cycles through think -> queue -> service: each
user re-joins the queue an exponential think time (mean ``mean_interarrival``)
after finishing service, and service durations are exponential with mean
``mean_service``, drawn at assignment.  This keeps a fixed number of users
"in the system" while arrivals continue, which bounds queue lengths; an open
Poisson-arrival variant is available behind ``open_system`` for comparison.

Each user's QoS history (received pairs, waiting plus service time) carries
across visits, so the proportional-fair policy can prioritize users that have
received less so far.  Every user owns a dedicated random substream and
resource rates come from another, hence two runs that differ only in policy
see identical arrival, service and rate draws (common random numbers).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

import numpy as np

from .allocation import (
    POLICIES,
    POLICY_FCFS,
    POLICY_HUNGARIAN,
    AllocationState,
    ChannelPairResource,
    PiecewiseRate,
    UserSession,
    allocate,
    jain_fairness,
    qos,
    release_pair,
)

DEFAULT_RATE_RANGE_HZ = (18000.0, 68000.0)

_SIGNAL_CYCLE = (26, 25, 24, 23)


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_resources: int
    n_users: int = 10
    mean_interarrival: float = 10.0
    mean_service: float = 60.0
    duration: float = 1000.0
    rate_range_hz: tuple[float, float] = DEFAULT_RATE_RANGE_HZ
    repetitions: int = 3
    policy: str = POLICY_HUNGARIAN
    seed: int = 1
    open_system: bool = False

    def __post_init__(self):
        if self.n_resources < 1 or self.n_users < 0:
            raise SimConfigError("need n_resources >= 1 and n_users >= 0")
        if min(self.mean_interarrival, self.mean_service, self.duration) <= 0:
            raise SimConfigError("time parameters must be positive")
        if self.repetitions < 1:
            raise SimConfigError("repetitions must be >= 1")
        low, high = self.rate_range_hz
        if low < 0 or low > high:
            raise SimConfigError("rate_range_hz must satisfy 0 <= low <= high")
        if self.policy not in POLICIES:
            raise SimConfigError(f"unknown policy {self.policy!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        doc = dict(doc)
        if "rate_range_hz" in doc:
            doc["rate_range_hz"] = tuple(doc["rate_range_hz"])
        return cls(**doc)


@dataclass
class SimMetrics:
    avg_wait: float
    avg_qos: float
    fairness: float
    throughput: float  # completed sessions over the horizon
    avg_queue_length: float
    arrivals: float
    completions: float
    in_service_at_end: float
    waiting_at_end: float
    queue_length_series: list[tuple[float, int]] = field(default_factory=list)
    cumulative_throughput_series: list[tuple[float, int]] = field(default_factory=list)
    per_user_qos: list[float] = field(default_factory=list)

    def to_row(self) -> dict:
        return {
            "avg_wait": self.avg_wait,
            "avg_qos": self.avg_qos,
            "fairness": self.fairness,
            "throughput": self.throughput,
        }


class _User:
    __slots__ = ("user_id", "rng", "carried_received", "carried_busy",
                 "visit_arrival", "session", "visits")

    def __init__(self, user_id: str, rng: np.random.Generator):
        self.user_id = user_id
        self.rng = rng
        self.carried_received = 0.0
        self.carried_busy = 0.0
        self.visit_arrival = 0.0
        self.session: UserSession | None = None
        self.visits = 0


def _run_once(config: SimConfig, seedseq: np.random.SeedSequence) -> SimMetrics:
    rate_seq, user_root = seedseq.spawn(2)
    rate_rng = np.random.default_rng(rate_seq)
    low, high = config.rate_range_hz
    rates = rate_rng.uniform(low, high, size=config.n_resources)

    state = AllocationState()
    for k, rate in enumerate(rates):
        signal = _SIGNAL_CYCLE[k % len(_SIGNAL_CYCLE)]
        # sim resources are abstract rate-bearing slots; channel identity is
        # only needed to satisfy the pair-plan invariant
        state.resources.append(
            ChannelPairResource(f"pair-{k:03d}", signal, 42 - signal, PiecewiseRate(float(rate)))
        )
    pair_by_id = {r.id: r for r in state.resources}

    users: dict[str, _User] = {}
    user_seqs = user_root.spawn(config.n_users) if config.n_users else []
    events: list[tuple[float, int, str, str, str | None]] = []
    seq = 0

    def push(t: float, kind: str, user_id: str, pair_id: str | None = None):
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, user_id, pair_id))
        seq += 1

    def new_user(user_id: str, child) -> _User:
        user = _User(user_id, np.random.default_rng(child))
        users[user_id] = user
        return user

    if config.open_system:
        arrival_rng = np.random.default_rng(user_root.spawn(1)[0])
        next_id = 0
        t = float(arrival_rng.exponential(config.mean_interarrival))
        push(t, "arrival", f"user-{next_id:04d}")
    else:
        for k, child in enumerate(user_seqs):
            user = new_user(f"user-{k:04d}", child)
            push(float(user.rng.exponential(config.mean_interarrival)), "arrival", user.user_id)

    waits: list[float] = []
    completed = 0
    arrivals = 0
    queue_series: list[tuple[float, int]] = [(0.0, 0)]
    throughput_series: list[tuple[float, int]] = []
    queue_area = 0.0
    last_t = 0.0
    n_waiting = 0

    def run_allocation(now: float):
        nonlocal n_waiting
        assigned = allocate(state, now, config.policy)
        for pair_id, user_id in assigned:
            user = users[user_id]
            waits.append(now - user.visit_arrival)
            service = float(user.rng.exponential(config.mean_service))
            push(now + service, "completion", user_id, pair_id)
        n_waiting = len(state.waiting_sessions())

    while events:
        t, _, kind, user_id, pair_id = heapq.heappop(events)
        if t > config.duration:
            break
        queue_area += n_waiting * (t - last_t)
        last_t = t

        if kind == "arrival":
            arrivals += 1
            if config.open_system and user_id not in users:
                user = new_user(user_id, user_root.spawn(1)[0])
                next_id += 1
                push(t + float(arrival_rng.exponential(config.mean_interarrival)),
                     "arrival", f"user-{next_id:04d}")
            else:
                user = users[user_id]
            user.visits += 1
            user.visit_arrival = t
            # back-date the session arrival so qos() sees the carried history
            user.session = UserSession(
                user_id=user_id,
                arrival_time=t - user.carried_busy,
                received_pairs=user.carried_received,
            )
            state.sessions.append(user.session)
            run_allocation(t)
        else:  # completion
            user = users[user_id]
            release_pair(state, pair_id, t)
            user.carried_received = user.session.received_pairs
            user.carried_busy += t - user.visit_arrival
            state.sessions.remove(user.session)
            user.session = None
            completed += 1
            throughput_series.append((t, completed))
            if not config.open_system:
                push(t + float(user.rng.exponential(config.mean_interarrival)),
                     "arrival", user_id)
            run_allocation(t)

        queue_series.append((t, n_waiting))

    queue_area += n_waiting * (config.duration - last_t)

    horizon = config.duration
    per_user_qos: list[float] = []
    in_service = 0
    still_waiting = 0
    for user in users.values():
        if user.visits == 0:
            continue
        if user.session is not None:
            per_user_qos.append(qos(user.session, horizon))
            if user.session.state == "served":
                in_service += 1
            else:
                still_waiting += 1
        elif user.carried_busy > 0:
            per_user_qos.append(user.carried_received / user.carried_busy)
        else:
            per_user_qos.append(0.0)

    return SimMetrics(
        avg_wait=float(np.mean(waits)) if waits else 0.0,
        avg_qos=float(np.mean(per_user_qos)) if per_user_qos else 0.0,
        fairness=jain_fairness(per_user_qos) if per_user_qos else 1.0,
        throughput=float(completed),
        avg_queue_length=queue_area / config.duration,
        arrivals=float(arrivals),
        completions=float(completed),
        in_service_at_end=float(in_service),
        waiting_at_end=float(still_waiting),
        queue_length_series=queue_series,
        cumulative_throughput_series=throughput_series,
        per_user_qos=per_user_qos,
    )


def _average(runs: list[SimMetrics]) -> SimMetrics:
    first = runs[0]
    if len(runs) == 1:
        return first
    scalars = ("avg_wait", "avg_qos", "fairness", "throughput", "avg_queue_length",
               "arrivals", "completions", "in_service_at_end", "waiting_at_end")
    kwargs = {name: float(np.mean([getattr(r, name) for r in runs])) for name in scalars}
    lengths = {len(r.per_user_qos) for r in runs}
    if len(lengths) == 1:
        per_user = [float(np.mean(col)) for col in zip(*(r.per_user_qos for r in runs))]
    else:
        per_user = first.per_user_qos
    # time series are kept from the first repetition as a representative
    # single-run trajectory; averaging step functions across repetitions
    # would blur the queue dynamics the series exist to show
    return SimMetrics(
        queue_length_series=first.queue_length_series,
        cumulative_throughput_series=first.cumulative_throughput_series,
        per_user_qos=per_user,
        **kwargs,
    )


def run(config: SimConfig) -> SimMetrics:
    """Run ``config.repetitions`` independent repetitions and average the metrics."""
    children = np.random.SeedSequence(config.seed).spawn(config.repetitions)
    return _average([_run_once(config, child) for child in children])


def sweep_users(
    user_loads,
    n_resources: int = 25,
    base: SimConfig | None = None,
) -> list[tuple[int, SimMetrics]]:
    """One averaged metrics row per population size, at a fixed resource count."""
    if not user_loads or any(l <= 0 for l in user_loads):
        raise SimConfigError("user loads must be positive")
    base = base or SimConfig(n_resources=n_resources)
    rows = []
    for load in user_loads:
        cfg = replace(base, n_resources=n_resources, n_users=int(load))
        rows.append((int(load), run(cfg)))
    return rows


def sweep_resources(
    resource_counts,
    n_users: int = 20,
    base: SimConfig | None = None,
) -> list[tuple[int, SimMetrics]]:
    """One averaged metrics row per resource count, at a fixed population."""
    if not resource_counts or any(c <= 0 for c in resource_counts):
        raise SimConfigError("resource counts must be positive")
    base = base or SimConfig(n_resources=resource_counts[0])
    rows = []
    for count in resource_counts:
        cfg = replace(base, n_resources=int(count), n_users=n_users)
        rows.append((int(count), run(cfg)))
    return rows


def compare_policies(config: SimConfig) -> dict[str, SimMetrics]:
    """Run both policies on identical arrival/service/rate draws."""
    return {
        policy: run(replace(config, policy=policy))
        for policy in (POLICY_HUNGARIAN, POLICY_FCFS)
    }


# Figure-style experiment presets pinning the qualitative setups (saturation
# sweep, resource sweep, single near-capacity run).  The resource sweep stays
# inside the contended regime: once capacity comfortably exceeds demand the
# fairness index saturates near 1 and its ordering is pure noise.

FIG5_LOADS = (10, 20, 30, 40, 50)
FIG6_RESOURCES = (2, 4, 6, 10)


def preset(name: str, seed: int = 1) -> dict:
    """Run a named experiment preset and return its rows/series."""
    if name == "fig5":
        rows = sweep_users(FIG5_LOADS, n_resources=25, base=SimConfig(n_resources=25, seed=seed))
        return {"kind": "sweep", "x_label": "n_users", "rows": rows}
    if name == "fig6":
        rows = sweep_resources(FIG6_RESOURCES, n_users=20, base=SimConfig(n_resources=2, seed=seed))
        return {"kind": "sweep", "x_label": "n_resources", "rows": rows}
    if name == "fig7":
        cfg = SimConfig(n_resources=6, n_users=10, repetitions=1, seed=seed)
        return {"kind": "single", "x_label": "time", "metrics": run(cfg), "config": cfg}
    raise SimConfigError(f"unknown preset {name!r}; expected fig5, fig6 or fig7")


def rows_to_csv(rows: list[tuple[int, SimMetrics]], x_label: str = "load") -> str:
    lines = [f"{x_label},avg_wait,avg_qos,fairness,throughput"]
    for x, m in rows:
        lines.append(f"{x},{m.avg_wait:.6g},{m.avg_qos:.6g},{m.fairness:.6g},{m.throughput:.6g}")
    return "\n".join(lines) + "\n"


def metrics_to_json_dict(m: SimMetrics) -> dict:
    return {
        "avg_wait": m.avg_wait,
        "avg_qos": m.avg_qos,
        "fairness": m.fairness,
        "throughput": m.throughput,
        "avg_queue_length": m.avg_queue_length,
        "queue_length_series": [[t, q] for t, q in m.queue_length_series],
        "cumulative_throughput_series": [[t, c] for t, c in m.cumulative_throughput_series],
        "per_user_qos": m.per_user_qos,
    }
