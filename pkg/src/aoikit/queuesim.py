"""Seedable discrete-event simulation of status-update flows through
queues and bottleneck links, producing age traces.

Determinism: all randomness comes from numpy PCG64 generators derived
from the run seed (one independent stream each for arrivals, service,
and loss coins), and simultaneous events are ordered by insertion
sequence, so identical (config, seed) pairs give bit-identical traces
on a given platform.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .trace import AgeTrace

ARRIVAL_KINDS = ("poisson", "deterministic", "at-will", "zero-wait")
SERVICE_KINDS = ("exponential", "deterministic")
DISCIPLINES = ("fcfs", "lcfs1")


@dataclass(frozen=True)
class ArrivalSpec:
    """Update generation process.

    poisson / deterministic generate at `rate` per second. at-will
    asks `hook(packet_index, completion_time_s)` for the waiting time
    before the next generation each time the channel goes idle;
    zero-wait is at-will with zero waiting.
    """

    kind: str
    rate: float = 0.0
    hook: Optional[Callable[[int, float], float]] = None

    def __post_init__(self):
        if self.kind not in ARRIVAL_KINDS:
            raise ConfigError(f"unknown arrival kind {self.kind!r}")
        if self.kind in ("poisson", "deterministic") and not (self.rate > 0):
            raise ConfigError("arrival rate must be positive")
        if self.kind == "at-will" and self.hook is None:
            raise ConfigError("at-will arrivals need a policy hook")


@dataclass(frozen=True)
class ServiceSpec:
    kind: str
    mu: float  # service rate; mean service time is 1/mu

    def __post_init__(self):
        if self.kind not in SERVICE_KINDS:
            raise ConfigError(f"unknown service kind {self.kind!r}")
        if not (self.mu > 0):
            raise ConfigError("service rate must be positive")


@dataclass(frozen=True)
class SimConfig:
    arrival: ArrivalSpec
    service: ServiceSpec
    discipline: str = "fcfs"
    capacity: Optional[int] = None  # waiting slots; None = infinite
    loss_p: float = 0.0  # i.i.d. transmission-loss probability
    retransmit: bool = False  # lost packets re-enter service (TCP-like)
    delivery_offset_s: float = 0.0  # propagation added to every delivery
    horizon: int = 1000  # number of generated packets
    seed: int = 0

    def __post_init__(self):
        if self.discipline not in DISCIPLINES:
            raise ConfigError(f"unknown discipline {self.discipline!r}")
        if self.capacity is not None and self.capacity < 0:
            raise ConfigError("capacity must be >= 0")
        if not (0.0 <= self.loss_p < 1.0):
            raise ConfigError("loss probability must be in [0, 1)")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")

    @property
    def load(self) -> Optional[float]:
        if self.arrival.kind in ("poisson", "deterministic"):
            return self.arrival.rate / self.service.mu
        return None


@dataclass
class SimRun:
    """Simulation output: the age trace plus bookkeeping counters."""

    trace: AgeTrace
    meta: dict = field(default_factory=dict)

    def meta_lines(self) -> str:
        """Line-oriented key=value sidecar text."""
        return "".join(f"{k}={v}\n" for k, v in self.meta.items())


def analytic_mm1_age(rho: float, mu: float) -> float:
    """Steady-state average age of the memoryless single-server FCFS
    queue, used as the simulator's oracle."""
    if not (0.0 < rho < 1.0):
        raise ConfigError("load must be in (0, 1)")
    if not (mu > 0):
        raise ConfigError("service rate must be positive")
    return (1.0 / mu) * (1.0 + 1.0 / rho + rho * rho / (1.0 - rho))


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    ss = np.random.SeedSequence(seed)
    a, s, l = ss.spawn(3)
    return (
        np.random.Generator(np.random.PCG64(a)),
        np.random.Generator(np.random.PCG64(s)),
        np.random.Generator(np.random.PCG64(l)),
    )


def _draw_interarrivals(spec: ArrivalSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "poisson":
        return rng.exponential(1.0 / spec.rate, n)
    return np.full(n, 1.0 / spec.rate)


def _draw_services(spec: ServiceSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "exponential":
        return rng.exponential(1.0 / spec.mu, n)
    return np.full(n, 1.0 / spec.mu)


def _to_ns(t: np.ndarray | float) -> np.ndarray | int:
    if isinstance(t, np.ndarray):
        return np.rint(t * 1e9).astype(np.int64)
    return int(round(t * 1e9))


def simulate(cfg: SimConfig) -> SimRun:
    """Run one flow through the configured queue and return the trace.

    An unstable configuration (offered load >= 1 with an infinite
    buffer) is permitted; the run metadata carries `unstable=1`.
    """
    exogenous = cfg.arrival.kind in ("poisson", "deterministic")
    if (
        exogenous
        and cfg.discipline == "fcfs"
        and cfg.capacity is None
        and cfg.loss_p == 0.0
        and not cfg.retransmit
    ):
        run = _simulate_fcfs_lindley(cfg)
    else:
        run = _simulate_events(cfg)
    load = cfg.load
    run.meta.update(
        seed=cfg.seed,
        discipline=cfg.discipline,
        arrival=cfg.arrival.kind,
        arrival_rate=cfg.arrival.rate,
        service=cfg.service.kind,
        service_rate=cfg.service.mu,
        capacity="inf" if cfg.capacity is None else cfg.capacity,
        loss_p=cfg.loss_p,
        retransmit=int(cfg.retransmit),
        horizon=cfg.horizon,
        load="" if load is None else f"{load:.6g}",
        unstable=int(load is not None and load >= 1.0 and cfg.capacity is None),
    )
    return run


def _simulate_fcfs_lindley(cfg: SimConfig) -> SimRun:
    """Vectorized fast path for the loss-free infinite-buffer FCFS
    queue: departures follow the single-server waiting-time recurrence
    dep[i] = max(arr[i], dep[i-1]) + service[i]."""
    arrival_rng, service_rng, _ = _rngs(cfg.seed)
    n = cfg.horizon
    arr = np.cumsum(_draw_interarrivals(cfg.arrival, n, arrival_rng))
    svc = _draw_services(cfg.service, n, service_rng)
    csum = np.cumsum(svc)
    dep = csum + np.maximum.accumulate(arr - (csum - svc))
    # queue occupancy is measured at the server, before any added
    # propagation delay
    completed_on_arrival = np.searchsorted(dep, arr, side="right")
    in_system = np.arange(n) - completed_on_arrival
    if cfg.delivery_offset_s:
        dep = dep + cfg.delivery_offset_s
    trace = AgeTrace.from_arrays(
        np.arange(n, dtype=np.int64), _to_ns(arr), _to_ns(dep),
        t_start_ns=0,
    )
    meta = {
        "arrivals": n,
        "delivered": n,
        "lost_channel": 0,
        "lost_overflow": 0,
        "discarded": 0,
        "retransmissions": 0,
        "still_queued": 0,
        "loss": 0,
        "max_waiting": int(max(0, int(in_system.max()) - 1)) if n else 0,
    }
    return SimRun(trace, meta)


_ARR, _DEP = 0, 1


def _simulate_events(cfg: SimConfig) -> SimRun:
    """General event loop: one heap keyed by (time, insertion seq)
    covering bounded buffers, transmission loss, retransmission, the
    single-slot freshest-only queue, and generate-at-will sources."""
    arrival_rng, service_rng, loss_rng = _rngs(cfg.seed)
    n = cfg.horizon
    exogenous = cfg.arrival.kind in ("poisson", "deterministic")
    if exogenous:
        arrivals = np.cumsum(_draw_interarrivals(cfg.arrival, n, arrival_rng))

    gen_times: list[float] = []
    recv_times: list[Optional[float]] = []

    heap: list[tuple[float, int, int, int]] = []  # (time, seq, kind, packet)
    seq = 0

    def push(t: float, kind: int, packet: int):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, packet))
        seq += 1

    def record_arrival(t: float) -> int:
        gen_times.append(t)
        recv_times.append(None)
        return len(gen_times) - 1

    queue: list[int] = []  # FCFS waiting line (fcfs) or [freshest] (lcfs1)
    in_service: Optional[int] = None
    generated = 0
    delivered = 0
    lost_channel = 0
    lost_overflow = 0
    discarded = 0
    retransmissions = 0
    max_waiting = 0

    def start_service(packet: int, now: float):
        nonlocal in_service
        in_service = packet
        svc = float(_draw_services(cfg.service, 1, service_rng)[0])
        push(now + svc, _DEP, packet)

    def schedule_next_generation(now: float, delivery_index: int):
        nonlocal generated
        if generated >= n:
            return
        if cfg.arrival.kind == "zero-wait":
            wait = 0.0
        else:
            wait = float(cfg.arrival.hook(delivery_index, now))
        push(now + max(0.0, wait), _ARR, generated)
        generated += 1

    # bootstrap
    if exogenous:
        push(float(arrivals[0]), _ARR, 0)
        generated = 1
    else:
        push(0.0, _ARR, 0)
        generated = 1

    while heap:
        now, _, kind, packet = heapq.heappop(heap)
        if kind == _ARR:
            idx = record_arrival(now)
            if exogenous and generated < n:
                push(float(arrivals[generated]), _ARR, generated)
                generated += 1
            if in_service is None:
                start_service(idx, now)
            elif cfg.discipline == "lcfs1":
                if queue:
                    discarded += 1
                    queue.clear()
                queue.append(idx)
            else:
                if cfg.capacity is None or len(queue) < cfg.capacity:
                    queue.append(idx)
                else:
                    lost_overflow += 1
            max_waiting = max(max_waiting, len(queue))
        else:  # departure
            idx = in_service
            if cfg.loss_p > 0.0 and loss_rng.random() < cfg.loss_p:
                if cfg.retransmit:
                    retransmissions += 1
                    start_service(idx, now)
                    continue
                lost_channel += 1
            else:
                recv_times[idx] = now + cfg.delivery_offset_s
                delivered += 1
            in_service = None
            if not exogenous:
                # the channel is idle again; let the source decide when
                # to generate the next update
                schedule_next_generation(now, idx)
            if queue:
                start_service(queue.pop(0), now)

    ids = np.arange(len(gen_times), dtype=np.int64)
    trace = AgeTrace.from_arrays(
        ids,
        _to_ns(np.asarray(gen_times)),
        [None if r is None else _to_ns(r) for r in recv_times],
        t_start_ns=0,
    )
    total_loss = lost_channel + lost_overflow + discarded
    meta = {
        "arrivals": len(gen_times),
        "delivered": delivered,
        "lost_channel": lost_channel,
        "lost_overflow": lost_overflow,
        "discarded": discarded,
        "retransmissions": retransmissions,
        "still_queued": len(gen_times) - delivered - total_loss,
        "loss": total_loss,
        "max_waiting": max_waiting,
    }
    return SimRun(trace, meta)


# ------------------------------------------------------------------ sweeps


@dataclass(frozen=True)
class SweepRow:
    rate_hz: float
    avg_age_s: float
    peak_age_s: float
    loss: int
    avg_delay_s: float


SWEEP_HEADER = "rate_hz,avg_age_s,peak_age_s,loss,avg_delay_s"


def sweep_rate(cfg: SimConfig, rates) -> list[SweepRow]:
    """One independent run per rate, each starting from an empty queue
    with its own derived seed."""
    from .metrics import average_age_by_reception, mean_delay, peak_age

    rates = list(rates)
    if not rates:
        raise ConfigError("sweep needs at least one rate")
    rows = []
    for k, rate in enumerate(rates):
        child = int(np.random.SeedSequence((cfg.seed, k)).generate_state(1)[0])
        point = SimConfig(
            arrival=ArrivalSpec(cfg.arrival.kind, rate),
            service=cfg.service,
            discipline=cfg.discipline,
            capacity=cfg.capacity,
            loss_p=cfg.loss_p,
            retransmit=cfg.retransmit,
            delivery_offset_s=cfg.delivery_offset_s,
            horizon=cfg.horizon,
            seed=child,
        )
        run = simulate(point)
        rows.append(
            SweepRow(
                rate_hz=rate,
                avg_age_s=average_age_by_reception(run.trace),
                peak_age_s=peak_age(run.trace),
                loss=int(run.meta["loss"]),
                avg_delay_s=mean_delay(run.trace),
            )
        )
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    out = [SWEEP_HEADER]
    for r in rows:
        out.append(
            f"{r.rate_hz:.10g},{r.avg_age_s:.10g},{r.peak_age_s:.10g},"
            f"{r.loss},{r.avg_delay_s:.10g}"
        )
    return "\n".join(out) + "\n"


# ------------------------------------------------------- bottleneck channel


@dataclass(frozen=True)
class ChannelModel:
    """Load-regime model of a bottleneck path: loss steps up at
    loss_onset_load, queueing delay grows once the offered load passes
    delay_onset_load. The ordering loss-before-delay is contractual;
    the particular loss values are free parameters."""

    base_rtt_s: float = 0.0
    bandwidth_bps: float = 130_000.0
    packet_bytes: int = 1058
    loss_onset_load: float = 0.6
    delay_onset_load: float = 1.0
    busy_loss_p: float = 0.02
    panicked_loss_p: float = 0.15

    def __post_init__(self):
        if not (0.0 < self.loss_onset_load <= self.delay_onset_load <= 1.0):
            raise ConfigError(
                "regime thresholds must be ordered and lie in (0, 1]"
            )
        if self.bandwidth_bps <= 0 or self.packet_bytes <= 0:
            raise ConfigError("bandwidth and packet size must be positive")

    @property
    def capacity_hz(self) -> float:
        """Packet rate that saturates the bottleneck."""
        return self.bandwidth_bps / (8.0 * self.packet_bytes)

    def regime(self, rate_hz: float) -> str:
        load = rate_hz / self.capacity_hz
        if load < self.loss_onset_load:
            return "relaxed"
        if load < self.delay_onset_load:
            return "busy"
        return "panicked"

    def loss_for_rate(self, rate_hz: float) -> float:
        return {
            "relaxed": 0.0,
            "busy": self.busy_loss_p,
            "panicked": self.panicked_loss_p,
        }[self.regime(rate_hz)]

    def sim_config(
        self,
        rate_hz: float,
        horizon: int,
        seed: int,
        retransmit: bool = False,
        discipline: str = "fcfs",
    ) -> SimConfig:
        """Constant-rate sampling through the bottleneck. With
        retransmit=True lost packets are re-served in order, the
        rough stand-in for a reliable transport (approximate by
        design: no window or timer dynamics)."""
        return SimConfig(
            arrival=ArrivalSpec("deterministic", rate_hz),
            service=ServiceSpec("deterministic", self.capacity_hz),
            discipline=discipline,
            loss_p=self.loss_for_rate(rate_hz),
            retransmit=retransmit,
            delivery_offset_s=self.base_rtt_s / 2.0,
            horizon=horizon,
            seed=seed,
        )


def bottleneck_sweep(
    model: ChannelModel,
    rates,
    horizon: int = 20_000,
    seed: int = 0,
    retransmit: bool = False,
    discipline: str = "fcfs",
) -> list[SweepRow]:
    """Fresh bottleneck per rate point, as in a sweep that restarts
    with empty buffers each iteration."""
    from .metrics import average_age_by_reception, mean_delay, peak_age

    rows = []
    for k, rate in enumerate(rates):
        child = int(np.random.SeedSequence((seed, k)).generate_state(1)[0])
        run = simulate(model.sim_config(rate, horizon, child, retransmit, discipline))
        rows.append(
            SweepRow(
                rate_hz=rate,
                avg_age_s=average_age_by_reception(run.trace),
                peak_age_s=peak_age(run.trace),
                loss=int(run.meta["loss"]),
                avg_delay_s=mean_delay(run.trace),
            )
        )
    return rows


def geometric_rates(lo_hz: float, hi_hz: float, points: int) -> list[float]:
    if not (0 < lo_hz < hi_hz) or points < 2:
        raise ConfigError("need 0 < lo < hi and at least two points")
    return [float(r) for r in np.geomspace(lo_hz, hi_hz, points)]
