"""Single-cell admission control with priority-ordered bandwidth reclamation.

The engine is a state machine over :class:`CellState` snapshots.  ``admit`` and
``release`` are pure: they return a new snapshot and never mutate the old one,
so identical request sequences always give identical ledgers.

Reclamation order when a call does not fit in idle bandwidth:

1. MBS enhancement layers, down to the MBS minimum (dynamic reservation only);
2. background calls, evenly, down to the new-call level (new voice/unicast) or
   the handover level (handovers);
3. unicast enhancement layers, round-robin, down to the unicast minimum
   (handovers only).

New background calls never reclaim anything.  Released bandwidth is handed back
in the order: unicast layers, background up to the new-call level, MBS layers,
background up to the requested rate.
"""

from __future__ import annotations

import enum
import functools
import heapq
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

from mbsalloc.allocation import MbsAllocation, allocate, allocate_floor, allocate_full
from mbsalloc.config import SystemConfig


class CallClass(str, enum.Enum):
    VOICE = "voice"
    UNICAST = "unicast"
    BACKGROUND = "background"


class Origin(str, enum.Enum):
    NEW = "new"
    HANDOVER = "handover"


class Verdict(str, enum.Enum):
    ADMITTED = "admitted"
    BLOCKED = "blocked"
    DROPPED = "dropped"


class Target(str, enum.Enum):
    MBS_SESSIONS = "mbs-sessions"
    BACKGROUND_CALLS = "background-calls"
    UNICAST_CALLS = "unicast-calls"


class DegradationLevel(str, enum.Enum):
    NONE = "none"
    MBS_AND_BACKGROUND = "mbs-and-background"
    UNICAST = "unicast"


class MbsMode(str, enum.Enum):
    DYNAMIC = "dynamic"
    FIXED_MAX = "fixed-max"
    FIXED_MIN = "fixed-min"


class NonMbsMode(str, enum.Enum):
    PRIORITIZED_ADAPTIVE = "prioritized-adaptive"
    NON_PRIORITIZED_ADAPTIVE = "non-prioritized-adaptive"
    RIGID = "rigid"


class UnknownCallError(KeyError):
    pass


class EngineInvariantError(AssertionError):
    """The engine produced a state that breaks its own invariants (a defect)."""


@dataclass(frozen=True)
class Policy:
    mbs_mode: MbsMode
    non_mbs_mode: NonMbsMode


SCHEMES: dict[int, Policy] = {
    1: Policy(MbsMode.DYNAMIC, NonMbsMode.PRIORITIZED_ADAPTIVE),
    2: Policy(MbsMode.FIXED_MAX, NonMbsMode.PRIORITIZED_ADAPTIVE),
    3: Policy(MbsMode.FIXED_MAX, NonMbsMode.NON_PRIORITIZED_ADAPTIVE),
    4: Policy(MbsMode.FIXED_MAX, NonMbsMode.RIGID),
    5: Policy(MbsMode.FIXED_MIN, NonMbsMode.PRIORITIZED_ADAPTIVE),
    6: Policy(MbsMode.FIXED_MIN, NonMbsMode.NON_PRIORITIZED_ADAPTIVE),
    7: Policy(MbsMode.FIXED_MIN, NonMbsMode.RIGID),
}


def scheme_policy(scheme: int) -> Policy:
    try:
        return SCHEMES[int(scheme)]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; expected 1..7") from None


def apply_scheme(config: SystemConfig) -> Policy:
    return scheme_policy(config.scheme)


@dataclass(frozen=True)
class AdmissionRequest:
    call_class: CallClass
    origin: Origin
    req_max_bw: int
    req_min_bw: int

    def __post_init__(self):
        object.__setattr__(self, "call_class", CallClass(self.call_class))
        object.__setattr__(self, "origin", Origin(self.origin))
        if not 0 < self.req_min_bw <= self.req_max_bw:
            raise ValueError("request needs 0 < req_min_bw <= req_max_bw")
        if self.call_class is CallClass.VOICE and self.req_min_bw != self.req_max_bw:
            raise ValueError("voice requests are rigid: req_min_bw must equal req_max_bw")

    @classmethod
    def standard(cls, config: SystemConfig, call_class: CallClass | str, origin: Origin | str) -> AdmissionRequest:
        """The request a call of this class and origin makes under ``config``.

        Background calls ask for the requested rate and accept the handover
        level on handover, the new-call level otherwise.
        """
        call_class, origin = CallClass(call_class), Origin(origin)
        if call_class is CallClass.VOICE:
            bw = config.voice.bandwidth
            return cls(call_class, origin, bw, bw)
        if call_class is CallClass.UNICAST:
            return cls(call_class, origin, config.unicast.max_bw, config.unicast.min_bw)
        bg = config.background
        floor = bg.handover_bw if origin is Origin.HANDOVER else bg.newcall_bw
        return cls(call_class, origin, bg.max_bw, floor)


class ActiveCall(NamedTuple):
    call_id: int
    call_class: CallClass
    origin: Origin
    granted_bw: int
    layers: int | None = None   # enhancement layers, unicast only


@dataclass(frozen=True)
class CellState:
    calls: Mapping[int, ActiveCall]
    non_mbs_bw: int
    mbs: MbsAllocation
    degradation_level: DegradationLevel = DegradationLevel.NONE
    next_call_id: int = 1
    unicast_calls: int = 0
    unicast_layers: int = 0
    degraded_calls: int = 0     # unicast or background calls below their maximum

    @property
    def used_bw(self) -> int:
        return self.non_mbs_bw + self.mbs.total_bw


@dataclass(frozen=True)
class AdmissionDecision:
    verdict: Verdict
    granted_bw: int = 0
    call_id: int | None = None
    degradations_applied: tuple[tuple[Target, int], ...] = field(default=())

    @property
    def admitted(self) -> bool:
        return self.verdict is Verdict.ADMITTED


# --- redistribution helpers --------------------------------------------------

def _lower_evenly(levels: Mapping[int, int], floor: int, amount: int) -> dict[int, int]:
    """Take exactly ``amount`` off the highest levels first, never below ``floor``.

    The affected calls end within one bit/s of a common level.  The caller
    guarantees enough headroom exists.
    """
    if amount <= 0:
        return {}
    items = sorted(((lvl, cid) for cid, lvl in levels.items() if lvl > floor), key=lambda t: (-t[0], t[1]))
    prefix = 0
    for k, (lvl, _) in enumerate(items, start=1):
        prefix += lvl
        nxt = max(items[k][0] if k < len(items) else floor, floor)
        if prefix - k * nxt >= amount:
            base, extra = divmod(prefix - amount, k)
            return {cid: base + (i < extra) for i, (_, cid) in enumerate(items[:k])}
    raise ValueError("not enough headroom above floor")


def _raise_evenly(levels: Mapping[int, int], cap: int, budget: int) -> tuple[dict[int, int], int]:
    """Lift the lowest levels first toward ``cap``, spending at most ``budget``."""
    items = sorted(((lvl, cid) for cid, lvl in levels.items() if lvl < cap))
    amount = min(budget, sum(cap - lvl for lvl, _ in items))
    if amount <= 0:
        return {}, 0
    prefix = 0
    for k, (lvl, _) in enumerate(items, start=1):
        prefix += lvl
        nxt = min(items[k][0] if k < len(items) else cap, cap)
        if k * nxt - prefix >= amount:
            base, extra = divmod(prefix + amount, k)
            # remainder bits go to the lowest ids so the result is deterministic
            ids = sorted(cid for _, cid in items[:k])
            return {cid: base + (i < extra) for i, cid in enumerate(ids)}, amount
    raise AssertionError("unreachable: amount bounded by total room")


def _lower_layers(layers: Mapping[int, int], min_layers: int, layer_bw: int, amount: int) -> tuple[dict[int, int], int]:
    """Remove one layer at a time from the richest call until ``amount`` is covered."""
    heap = [(-k, cid) for cid, k in layers.items() if k > min_layers]
    heapq.heapify(heap)
    changed: dict[int, int] = {}
    reclaimed = 0
    while reclaimed < amount and heap:
        neg, cid = heapq.heappop(heap)
        k = -neg - 1
        changed[cid] = k
        reclaimed += layer_bw
        if k > min_layers:
            heapq.heappush(heap, (-k, cid))
    return changed, reclaimed


def _raise_layers(layers: Mapping[int, int], max_layers: int, layer_bw: int, budget: int) -> tuple[dict[int, int], int]:
    """Add one layer at a time to the poorest call while the budget lasts."""
    if layer_bw <= 0:
        return {}, 0
    heap = [(k, cid) for cid, k in layers.items() if k < max_layers]
    heapq.heapify(heap)
    changed: dict[int, int] = {}
    spent = 0
    while heap and spent + layer_bw <= budget:
        k, cid = heapq.heappop(heap)
        changed[cid] = k + 1
        spent += layer_bw
        if k + 1 < max_layers:
            heapq.heappush(heap, (k + 1, cid))
    return changed, spent


# --- rules ---------------------------------------------------------------------

class _Rules:
    """Config-derived constants plus a cache of MBS allocations by non-MBS load."""

    def __init__(self, config: SystemConfig):
        self.config = config
        self.policy = apply_scheme(config)
        self.capacity = config.capacity
        mode = self.policy.mbs_mode
        if mode is MbsMode.FIXED_MAX:
            self.fixed_mbs = allocate_full(config)
        elif mode is MbsMode.FIXED_MIN:
            self.fixed_mbs = allocate_floor(config)
        else:
            self.fixed_mbs = None
        self.mbs_floor = config.mbs_max_bw if mode is MbsMode.FIXED_MAX else config.mbs_min_bw
        self.non_mbs_cap = config.capacity - self.mbs_floor
        self.mbs_max_bw = config.mbs_max_bw
        self._mbs_cache: dict[int, MbsAllocation] = {}
        self._plan_cache: dict[AdmissionRequest, list[_Plan]] = {}

    def plans(self, req: AdmissionRequest) -> list[_Plan]:
        plans = self._plan_cache.get(req)
        if plans is None:
            plans = self._plan_cache[req] = _plans(self, req)
        return plans

    def mbs_for(self, non_mbs_bw: int) -> MbsAllocation:
        if self.fixed_mbs is not None:
            return self.fixed_mbs
        alloc = self._mbs_cache.get(non_mbs_bw)
        if alloc is None:
            alloc = self._mbs_cache[non_mbs_bw] = allocate(self.config, non_mbs_bw)
        return alloc

    def snapshot(self, calls, non_mbs_bw: int, next_id: int) -> CellState:
        cfg = self.config
        mbs = self.mbs_for(non_mbs_bw)
        uni_max, bg_max = cfg.unicast.max_layers, cfg.background.max_bw
        uni_calls = uni_layers = uni_short = bg_short = 0
        for call in calls.values():
            if call.call_class is CallClass.UNICAST:
                uni_calls += 1
                uni_layers += call.layers
                uni_short += call.layers < uni_max
            elif call.call_class is CallClass.BACKGROUND:
                bg_short += call.granted_bw < bg_max
        if uni_short:
            level = DegradationLevel.UNICAST
        elif bg_short or (self.policy.mbs_mode is MbsMode.DYNAMIC and mbs.total_bw < self.mbs_max_bw):
            level = DegradationLevel.MBS_AND_BACKGROUND
        else:
            level = DegradationLevel.NONE
        return CellState(calls, non_mbs_bw, mbs, level, next_id, uni_calls, uni_layers, uni_short + bg_short)


@functools.lru_cache(maxsize=16)
def _rules_for(config: SystemConfig) -> _Rules:
    return _Rules(config)


@dataclass(frozen=True)
class _Plan:
    want: int          # best level to aim for
    accept: int        # lowest acceptable level
    use_mbs: bool      # may MBS layers be reclaimed
    background_floor: int | None
    unicast: bool      # may unicast layers be reclaimed


def _plans(rules: _Rules, req: AdmissionRequest) -> list[_Plan]:
    cfg = rules.config
    mode = rules.policy.non_mbs_mode
    bg = cfg.background
    if mode is NonMbsMode.RIGID:
        return [_Plan(req.req_max_bw, req.req_max_bw, False, None, False)]
    if mode is NonMbsMode.NON_PRIORITIZED_ADAPTIVE:
        return [
            _Plan(req.req_max_bw, req.req_min_bw, True, None, False),
            _Plan(req.req_min_bw, req.req_min_bw, True, bg.handover_bw, True),
        ]
    # prioritized: what the call could get as a new call first ...
    if req.call_class is CallClass.BACKGROUND:
        as_new = _Plan(req.req_max_bw, max(req.req_min_bw, bg.newcall_bw), False, None, False)
    else:
        as_new = _Plan(req.req_max_bw, req.req_max_bw, True, bg.newcall_bw, False)
    if req.origin is Origin.NEW:
        return [as_new]
    # ... and for handovers the deeper reclamation at the minimum level
    return [as_new, _Plan(req.req_min_bw, req.req_min_bw, True, bg.handover_bw, True)]


def _grantable(cfg: SystemConfig, req: AdmissionRequest, ceiling: int, plan: _Plan) -> int | None:
    """Largest valid bandwidth for this call in [plan.accept, min(plan.want, ceiling)]."""
    top = min(plan.want, ceiling)
    if top < plan.accept:
        return None
    if req.call_class is CallClass.UNICAST:
        uni = cfg.unicast
        if uni.layer_bw == 0:
            return uni.base_layer_bw if plan.accept <= uni.base_layer_bw <= top else None
        k = min((top - uni.base_layer_bw) // uni.layer_bw, uni.max_layers)
        bw = uni.bw_at(k)
        return bw if k >= uni.min_layers and bw >= plan.accept else None
    return top


def _admit(rules: _Rules, state: CellState, req: AdmissionRequest) -> tuple[CellState, AdmissionDecision]:
    cfg = rules.config
    uni, bg = cfg.unicast, cfg.background
    calls = state.calls
    idle = rules.capacity - state.non_mbs_bw - state.mbs.total_bw
    room = rules.non_mbs_cap - state.non_mbs_bw

    bg_levels = uni_layers = None
    uni_spare = 0

    for plan in rules.plans(req):
        base = room if plan.use_mbs else min(idle, room)
        bg_spare = 0
        if plan.want <= base:
            grant = _grantable(cfg, req, base, plan)
        else:
            if bg_levels is None:
                bg_levels, uni_layers = {}, {}
                for cid, c in calls.items():
                    if c.call_class is CallClass.BACKGROUND:
                        bg_levels[cid] = c.granted_bw
                    elif c.call_class is CallClass.UNICAST:
                        uni_layers[cid] = c.layers
                uni_spare = sum(k - uni.min_layers for k in uni_layers.values()) * uni.layer_bw
            if plan.background_floor is not None:
                floor = plan.background_floor
                bg_spare = sum(lvl - floor for lvl in bg_levels.values() if lvl > floor)
            ceiling = base + bg_spare + (uni_spare if plan.unicast else 0)
            grant = _grantable(cfg, req, ceiling, plan)
        if grant is None:
            continue

        new_calls = dict(calls)
        needed = max(0, grant - base)
        bg_taken = uni_taken = 0
        if needed and bg_spare:
            bg_taken = min(needed, bg_spare)
            for cid, lvl in _lower_evenly(bg_levels, plan.background_floor, bg_taken).items():
                new_calls[cid] = _with_bw(new_calls[cid], lvl)
            needed -= bg_taken
        if needed:
            changed, uni_taken = _lower_layers(uni_layers, uni.min_layers, uni.layer_bw, needed)
            for cid, k in changed.items():
                new_calls[cid] = _with_layers(new_calls[cid], k, uni)

        call_id = state.next_call_id
        layers = None
        if req.call_class is CallClass.UNICAST:
            layers = (grant - uni.base_layer_bw) // uni.layer_bw if uni.layer_bw else 0
        new_calls[call_id] = ActiveCall(call_id, req.call_class, req.origin, grant, layers)
        non_mbs = state.non_mbs_bw - bg_taken - uni_taken + grant
        new_state = rules.snapshot(new_calls, non_mbs, call_id + 1)

        applied = []
        mbs_taken = state.mbs.total_bw - new_state.mbs.total_bw
        if mbs_taken > 0:
            applied.append((Target.MBS_SESSIONS, mbs_taken))
        if bg_taken:
            applied.append((Target.BACKGROUND_CALLS, bg_taken))
        if uni_taken:
            applied.append((Target.UNICAST_CALLS, uni_taken))
        return new_state, AdmissionDecision(Verdict.ADMITTED, grant, call_id, tuple(applied))

    verdict = Verdict.DROPPED if req.origin is Origin.HANDOVER else Verdict.BLOCKED
    return state, AdmissionDecision(verdict)


def _with_bw(call: ActiveCall, bw: int) -> ActiveCall:
    return call._replace(granted_bw=bw)


def _with_layers(call: ActiveCall, k: int, uni) -> ActiveCall:
    return call._replace(granted_bw=uni.bw_at(k), layers=k)


def _release(rules: _Rules, state: CellState, call_id: int) -> CellState:
    if call_id not in state.calls:
        raise UnknownCallError(call_id)
    cfg = rules.config
    uni, bg = cfg.unicast, cfg.background
    calls = dict(state.calls)
    gone = calls.pop(call_id)
    non_mbs = state.non_mbs_bw - gone.granted_bw

    if rules.policy.non_mbs_mode is not NonMbsMode.RIGID and state.degraded_calls:
        pool = rules.non_mbs_cap - non_mbs

        uni_layers = {cid: c.layers for cid, c in calls.items()
                      if c.call_class is CallClass.UNICAST and c.layers < uni.max_layers}
        if uni_layers and pool > 0:
            changed, spent = _raise_layers(uni_layers, uni.max_layers, uni.layer_bw, pool)
            for cid, k in changed.items():
                calls[cid] = _with_layers(calls[cid], k, uni)
            pool -= spent
            non_mbs += spent

        bg_levels = {cid: c.granted_bw for cid, c in calls.items() if c.call_class is CallClass.BACKGROUND}
        if bg_levels and pool > 0:
            changed, spent = _raise_evenly(bg_levels, bg.newcall_bw, pool)
            for cid, lvl in changed.items():
                calls[cid] = _with_bw(calls[cid], lvl)
                bg_levels[cid] = lvl
            pool -= spent
            non_mbs += spent

        if rules.policy.mbs_mode is MbsMode.DYNAMIC:
            pool -= min(pool, cfg.mbs_max_bw - cfg.mbs_min_bw)

        if bg_levels and pool > 0:
            changed, spent = _raise_evenly(bg_levels, bg.max_bw, pool)
            for cid, lvl in changed.items():
                calls[cid] = _with_bw(calls[cid], lvl)
            non_mbs += spent

    return rules.snapshot(calls, non_mbs, state.next_call_id)


# --- public API -------------------------------------------------------------------

def initial_state(config: SystemConfig) -> CellState:
    return _rules_for(config).snapshot({}, 0, 1)


def state_from_calls(config: SystemConfig, calls) -> CellState:
    """Snapshot holding exactly ``calls`` (an iterable of :class:`ActiveCall`)."""
    ledger = {c.call_id: c for c in calls}
    return _rules_for(config).snapshot(
        ledger, sum(c.granted_bw for c in ledger.values()), max(ledger, default=0) + 1
    )


def admit(state: CellState, request: AdmissionRequest, config: SystemConfig) -> tuple[CellState, AdmissionDecision]:
    return _admit(_rules_for(config), state, request)


def release(state: CellState, call_id: int, config: SystemConfig) -> CellState:
    return _release(_rules_for(config), state, call_id)


def check_invariants(state: CellState, config: SystemConfig) -> None:
    """Raise :class:`EngineInvariantError` if the snapshot is inconsistent."""
    rules = _rules_for(config)
    uni, bg = config.unicast, config.background

    def fail(msg):
        raise EngineInvariantError(msg)

    total = 0
    for cid, c in state.calls.items():
        total += c.granted_bw
        if c.call_class is CallClass.VOICE and c.granted_bw != config.voice.bandwidth:
            fail(f"voice call {cid} at {c.granted_bw} bps")
        if c.call_class is CallClass.UNICAST:
            if not (uni.min_layers <= c.layers <= uni.max_layers and c.granted_bw == uni.bw_at(c.layers)):
                fail(f"unicast call {cid} outside its layer band: {c}")
        if c.call_class is CallClass.BACKGROUND and not bg.handover_bw <= c.granted_bw <= bg.max_bw:
            fail(f"background call {cid} at {c.granted_bw} bps outside [{bg.handover_bw}, {bg.max_bw}]")
    if total != state.non_mbs_bw:
        fail(f"ledger sum {total} != non-MBS bandwidth {state.non_mbs_bw}")
    if state.non_mbs_bw > rules.non_mbs_cap:
        fail(f"non-MBS bandwidth {state.non_mbs_bw} above cap {rules.non_mbs_cap}")
    if state.non_mbs_bw + state.mbs.total_bw > config.capacity:
        fail(f"capacity exceeded: {state.non_mbs_bw} + {state.mbs.total_bw} > {config.capacity}")
    if state.mbs != rules.mbs_for(state.non_mbs_bw):
        fail("MBS allocation not recomputed from the current non-MBS load")
    for s, g in zip(config.mbs_sessions, state.mbs.grants):
        if not s.min_layers <= g.layers <= s.max_layers:
            fail(f"MBS session {s.session_id} outside its layer band")


class AdmissionEngine:
    """Stateful convenience wrapper: holds the current snapshot for one cell."""

    def __init__(self, config: SystemConfig):
        self.config = config
        self._rules = _Rules(config)
        self.state = self._rules.snapshot({}, 0, 1)

    @property
    def policy(self) -> Policy:
        return self._rules.policy

    def request(self, call_class: CallClass | str, origin: Origin | str) -> AdmissionRequest:
        return AdmissionRequest.standard(self.config, call_class, origin)

    def admit(self, request: AdmissionRequest) -> AdmissionDecision:
        self.state, decision = _admit(self._rules, self.state, request)
        return decision

    def offer(self, call_class: CallClass | str, origin: Origin | str) -> AdmissionDecision:
        return self.admit(self.request(call_class, origin))

    def release(self, call_id: int) -> None:
        self.state = _release(self._rules, self.state, call_id)

    def check(self) -> None:
        check_invariants(self.state, self.config)
