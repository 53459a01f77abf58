"""Seeded discrete-event simulation of one cell driven by the admission engine.

New calls arrive as a Poisson stream split across classes by the arrival ratio.
Handover calls arrive as an independent Poisson stream at the rate the analytic
model uses (the fraction of calls that leave their cell before completing).
Each admitted call holds its channel for an exponential time whose rate is the
completion rate plus the cell-exit rate.

Randomness comes from numpy's PCG64, one stream per purpose, spawned from
``SeedSequence(seed + replication)``, so every replication is reproducible on its
own and schemes compared at the same seed see identical arrival sequences.
"""

from __future__ import annotations

import heapq
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mbsalloc import analytic
from mbsalloc.admission import AdmissionEngine, AdmissionRequest, CallClass, Origin, Verdict, check_invariants
from mbsalloc.config import SystemConfig
from mbsalloc.metrics import METRICS, MetricsReport, OutcomeCounts, forced_termination

log = logging.getLogger(__name__)

CLASSES = (CallClass.VOICE, CallClass.UNICAST, CallClass.BACKGROUND)
Z95 = 1.96


class SimulationError(RuntimeError):
    """The engine broke an invariant during a run."""


@dataclass(frozen=True)
class SimConfig:
    system: SystemConfig
    total_new_rate: float
    seed: int = 42
    warmup: float | None = None       # simulated seconds; default 10 mean holding times
    horizon: float | None = None      # simulated seconds; default from ``calls``
    replications: int = 10
    calls: int = 100_000              # offered new calls per replication when horizon is unset
    full_checks: bool = False         # run the complete invariant check after every event

    def __post_init__(self):
        if self.total_new_rate < 0:
            raise ValueError("total new-call rate must be non-negative")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.resolved_horizon <= self.resolved_warmup:
            raise ValueError("horizon must exceed warmup")

    @property
    def mean_holding(self) -> float:
        return 1.0 / (self.system.completion_rate + self.system.dwell_exit_rate)

    @property
    def resolved_warmup(self) -> float:
        return 10.0 * self.mean_holding if self.warmup is None else float(self.warmup)

    @property
    def resolved_horizon(self) -> float:
        if self.horizon is not None:
            return float(self.horizon)
        if self.total_new_rate == 0:
            return self.resolved_warmup + self.calls * self.mean_holding
        return self.resolved_warmup + self.calls / self.total_new_rate


class _Stream:
    """Buffered draws from one generator."""

    def __init__(self, gen: np.random.Generator, kind: str, size: int = 4096):
        self._gen, self._kind, self._size = gen, kind, size
        self._buf = np.empty(0)
        self._pos = 0

    def next(self) -> float:
        if self._pos == len(self._buf):
            if self._kind == "exp":
                self._buf = self._gen.standard_exponential(self._size)
            else:
                self._buf = self._gen.random(self._size)
            self._pos = 0
        value = self._buf[self._pos]
        self._pos += 1
        return float(value)


@dataclass
class _Accumulator:
    start: float
    last: float
    used: float = 0.0
    mbs: float = 0.0
    mbs_layers: float = 0.0
    uni_layers: float = 0.0
    uni_calls: float = 0.0
    calls: float = 0.0

    def advance(self, now: float, snapshot: tuple[float, float, float, float, float, float]) -> None:
        if now <= self.start:
            self.last = self.start
            return
        dt = now - max(self.last, self.start)
        if dt > 0:
            used, mbs, mbs_layers, uni_layers, uni_calls, calls = snapshot
            self.used += used * dt
            self.mbs += mbs * dt
            self.mbs_layers += mbs_layers * dt
            self.uni_layers += uni_layers * dt
            self.uni_calls += uni_calls * dt
            self.calls += calls * dt
        self.last = now


@dataclass
class ReplicationResult:
    counts: dict[CallClass, OutcomeCounts]
    values: dict[str, float]
    mean_active_calls: float
    carried_rate: float
    events: int = 0
    max_used_bw: int = 0


def _snapshot(state, config: SystemConfig):
    return (state.used_bw, state.mbs.total_bw, state.mbs.mean_layers,
            state.unicast_layers, state.unicast_calls, len(state.calls))


def run_replication(sim: SimConfig, replication: int) -> ReplicationResult:
    config = sim.system
    streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(sim.seed + replication).spawn(5)]
    new_gap, new_pick, ho_gap, ho_pick, holding = (
        _Stream(streams[0], "exp"), _Stream(streams[1], "uniform"),
        _Stream(streams[2], "exp"), _Stream(streams[3], "uniform"), _Stream(streams[4], "exp"),
    )

    new_rate = sim.total_new_rate
    ho_rate = new_rate * analytic.handover_probability(config)
    mu = config.completion_rate + config.dwell_exit_rate
    weights = np.array([float(w) for w in config.arrival_ratio])
    cumulative = np.cumsum(weights / weights.sum()).tolist()

    def pick(u: float) -> CallClass:
        for cls, edge in zip(CLASSES, cumulative):
            if u < edge:
                return cls
        return CLASSES[-1]

    engine = AdmissionEngine(config)
    requests = {
        (cls, origin): AdmissionRequest.standard(config, cls, origin) for cls in CLASSES for origin in Origin
    }
    warmup, horizon = sim.resolved_warmup, sim.resolved_horizon
    acc = _Accumulator(start=warmup, last=0.0)
    tallies = {cls: [0] * 6 for cls in CLASSES}

    next_new = new_gap.next() / new_rate if new_rate > 0 else math.inf
    next_ho = ho_gap.next() / ho_rate if ho_rate > 0 else math.inf
    departures: list[tuple[float, int]] = []
    snap = _snapshot(engine.state, config)
    events = 0
    max_used = engine.state.used_bw
    capacity = config.capacity

    while True:
        next_dep = departures[0][0] if departures else math.inf
        now = min(next_new, next_ho, next_dep)
        if now == math.inf:
            break
        acc.advance(min(now, horizon), snap)
        events += 1

        if next_dep <= next_new and next_dep <= next_ho:
            _, call_id = heapq.heappop(departures)
            engine.release(call_id)
        else:
            if next_new <= next_ho:
                origin, cls = Origin.NEW, pick(new_pick.next())
                next_new = now + new_gap.next() / new_rate
                if next_new > horizon:
                    next_new = math.inf
            else:
                origin, cls = Origin.HANDOVER, pick(ho_pick.next())
                next_ho = now + ho_gap.next() / ho_rate
                if next_ho > horizon:
                    next_ho = math.inf
            decision = engine.admit(requests[(cls, origin)])
            if now >= warmup:
                t = tallies[cls]
                if origin is Origin.NEW:
                    t[0] += 1
                    t[1 if decision.verdict is Verdict.ADMITTED else 2] += 1
                else:
                    t[3] += 1
                    t[4 if decision.verdict is Verdict.ADMITTED else 5] += 1
            if decision.verdict is Verdict.ADMITTED:
                heapq.heappush(departures, (now + holding.next() / mu, decision.call_id))

        used = engine.state.used_bw
        if used > capacity:
            raise SimulationError(f"capacity exceeded at t={now:.3f}: {used} > {capacity}")
        max_used = max(max_used, used)
        if sim.full_checks:
            try:
                check_invariants(engine.state, config)
            except AssertionError as exc:
                raise SimulationError(f"invariant broken at t={now:.3f}: {exc}") from exc
        snap = _snapshot(engine.state, config)

    acc.advance(horizon, snap)
    if engine.state.calls:
        raise SimulationError(f"{len(engine.state.calls)} calls left in the ledger after draining")

    counts = {cls: OutcomeCounts(*t) for cls, t in tallies.items()}
    span = horizon - warmup
    uni = config.unicast
    values = {
        "p_drop": _ratio(sum(c.handover_dropped for c in counts.values()),
                         sum(c.handover_offered for c in counts.values())),
        "p_block_voice": _ratio(counts[CallClass.VOICE].new_blocked, counts[CallClass.VOICE].new_offered),
        "p_block_unicast": _ratio(counts[CallClass.UNICAST].new_blocked, counts[CallClass.UNICAST].new_offered),
        "p_block_back": _ratio(counts[CallClass.BACKGROUND].new_blocked, counts[CallClass.BACKGROUND].new_offered),
        "utilization": acc.used / span / capacity,
        "mbs_bw": acc.mbs / span,
        "mean_mbs_layers": acc.mbs_layers / span,
        "mean_uni_layers": acc.uni_layers / acc.uni_calls if acc.uni_calls > 0 else float(uni.max_layers),
    }
    values["forced_termination"] = forced_termination(analytic.handover_probability(config), values["p_drop"])
    admitted = sum(c.new_admitted + c.handover_admitted for c in counts.values())
    return ReplicationResult(counts, values, acc.calls / span, admitted / span, events, max_used)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def aggregate(results: list[ReplicationResult]) -> MetricsReport:
    reps = len(results)
    means, halfwidths = {}, {}
    for name in METRICS:
        xs = np.array([r.values[name] for r in results])
        means[name] = float(xs.mean())
        halfwidths[name] = float(Z95 * xs.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.nan
    counts = {}
    for cls in CLASSES:
        total = OutcomeCounts()
        for r in results:
            total = total + r.counts[cls]
        counts[cls.value] = total
    return MetricsReport(
        source="sim",
        mean_active_calls=float(np.mean([r.mean_active_calls for r in results])),
        carried_rate=float(np.mean([r.carried_rate for r in results])),
        halfwidths=halfwidths,
        counts=counts,
        replications=reps,
        **means,
    )


def run(sim: SimConfig, jobs: int = 1) -> MetricsReport:
    """Run every replication and fold them into one report."""
    log.info("simulating scheme %d at %.4g calls/s, %d replications", sim.system.scheme,
             sim.total_new_rate, sim.replications)
    if jobs > 1 and sim.replications > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_replication, [sim] * sim.replications, range(sim.replications)))
    else:
        results = [run_replication(sim, rep) for rep in range(sim.replications)]
    return aggregate(results)


@dataclass(frozen=True)
class Comparison:
    metric: str
    analytic: float
    simulated: float
    halfwidth: float
    within: bool

    @property
    def gap(self) -> float:
        return self.simulated - self.analytic

    @property
    def relative_gap(self) -> float:
        return self.gap / self.analytic if self.analytic else (0.0 if self.gap == 0 else math.inf)


COMPARED = ("p_drop", "p_block_voice", "p_block_unicast", "p_block_back")


@dataclass(frozen=True)
class Validation:
    exact: bool
    rows: tuple[Comparison, ...] = field(default=())

    @property
    def passed(self) -> bool:
        return all(row.within for row in self.rows)


def validate_against_chain(sim: SimConfig, jobs: int = 1) -> Validation:
    """Side-by-side loss probabilities from the chain and the simulator.

    A row is ``within`` when the gap is below three standard errors of the
    replication mean, or below the resolution of the run (one event in the
    expected number of offered calls).
    """
    chain = analytic.evaluate(sim.system, sim.total_new_rate)
    measured = run(sim, jobs=jobs)
    offered = max(sim.total_new_rate * (sim.resolved_horizon - sim.resolved_warmup) * sim.replications, 1.0)
    rows = []
    for name in COMPARED:
        a, s, hw = chain.value(name), measured.value(name), measured.halfwidth(name)
        se = hw / Z95 if math.isfinite(hw) else math.inf
        rows.append(Comparison(name, a, s, hw, abs(s - a) <= 3 * se or abs(s - a) < 1.0 / offered))
    return Validation(analytic.chain_is_exact(sim.system), tuple(rows))
