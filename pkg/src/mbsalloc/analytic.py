"""One-dimensional birth-death model of the cell and its loss probabilities.

States count occupied "slots": the first ``mbs_states`` (M) stand for the MBS
sessions and are always occupied, each further state is one admitted call.
Arrival rates depend on the region the chain is in:

* M .. N-1        every arrival is accepted (new calls of all classes, handovers)
* N .. N+L-1      new background calls are refused
* N+L .. N+S-1    only handovers are accepted
* N+S             everything is refused

State i leaves downward at rate (i - M) * mu.  The distribution is solved by a
log-space recurrence; a closed product-form evaluation is kept alongside as an
independent cross-check.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from mbsalloc.admission import MbsMode, NonMbsMode, apply_scheme
from mbsalloc.config import SystemConfig
from mbsalloc.metrics import MetricsReport, forced_termination


class ModelError(ValueError):
    """The configuration yields a chain that cannot host a single call."""


@dataclass(frozen=True)
class MarkovModel:
    mbs_states: int          # M
    full_end: int            # N
    degraded_len: int        # L
    handover_len: int        # S
    new_rates: tuple[float, float, float]   # voice, unicast, background (calls/s)
    handover_rate: float
    holding_rate: float      # mu, 1 / mean channel holding time

    def __post_init__(self):
        if not 0 <= self.mbs_states <= self.full_end:
            raise ModelError("model needs 0 <= M <= N")
        if not 0 <= self.degraded_len <= self.handover_len:
            raise ModelError("model needs 0 <= L <= S")
        if any(r < 0 or not math.isfinite(r) for r in (*self.new_rates, self.handover_rate)):
            raise ModelError("arrival rates must be finite and non-negative")
        if not (self.holding_rate > 0 and math.isfinite(self.holding_rate)):
            raise ModelError("holding rate must be positive and finite")

    @property
    def degraded_end(self) -> int:
        return self.full_end + self.degraded_len

    @property
    def top(self) -> int:
        return self.full_end + self.handover_len

    @property
    def total_rate(self) -> float:
        return sum(self.new_rates) + self.handover_rate

    @property
    def degraded_rate(self) -> float:
        voice, unicast, _ = self.new_rates
        return voice + unicast + self.handover_rate

    def arrival_rate(self, state: int) -> float:
        """Rate of accepted arrivals while the chain sits in ``state``."""
        if state < self.full_end:
            return self.total_rate
        if state < self.degraded_end:
            return self.degraded_rate
        if state < self.top:
            return self.handover_rate
        return 0.0

    @property
    def states(self) -> range:
        return range(self.mbs_states, self.top + 1)


@dataclass(frozen=True)
class StationaryDistribution:
    first_state: int
    probs: np.ndarray

    def __post_init__(self):
        self.probs.setflags(write=False)

    def __getitem__(self, state: int) -> float:
        return float(self.probs[state - self.first_state])

    def total(self, start: int, stop: int) -> float:
        """Probability mass on states start..stop inclusive."""
        lo = max(start - self.first_state, 0)
        return float(self.probs[lo: stop - self.first_state + 1].sum())


# --- model construction -----------------------------------------------------------

def _class_weights(config: SystemConfig) -> tuple[Fraction, Fraction, Fraction]:
    total = sum(config.arrival_ratio)
    return tuple(w / total for w in config.arrival_ratio)


def mean_call_bw(config: SystemConfig, unicast_bw: int, background_bw: int) -> Fraction:
    """Arrival-ratio weighted mean bandwidth of one call at the given class levels."""
    wv, wu, wb = _class_weights(config)
    return wv * config.voice.bandwidth + wu * unicast_bw + wb * background_bw


def _mbs_band(config: SystemConfig) -> tuple[int, int]:
    """(largest, smallest) MBS bandwidth the scheme can leave the sessions with."""
    mode = apply_scheme(config).mbs_mode
    if mode is MbsMode.FIXED_MAX:
        return config.mbs_max_bw, config.mbs_max_bw
    if mode is MbsMode.FIXED_MIN:
        return config.mbs_min_bw, config.mbs_min_bw
    return config.mbs_max_bw, config.mbs_min_bw


def derive_thresholds(config: SystemConfig) -> tuple[int, int, int, int]:
    """(M, N, L, S) for the configured scheme.

    Each boundary is the number of calls, at the region's per-call quality, that
    fits in the non-MBS budget left by the scheme's MBS reservation.  An explicit
    chain override in the config wins.
    """
    m = config.session_count
    if config.chain_override is not None:
        ov = config.chain_override
        return m, ov.full_end, ov.degraded_len, ov.handover_len

    uni, bg = config.unicast, config.background
    full = mean_call_bw(config, uni.max_bw, bg.max_bw)
    newcall = mean_call_bw(config, uni.max_bw, bg.newcall_bw)
    floor = mean_call_bw(config, uni.min_bw, bg.handover_bw)
    mbs_high, mbs_low = _mbs_band(config)
    roomy = config.capacity - mbs_high
    tight = config.capacity - mbs_low

    mode = apply_scheme(config).non_mbs_mode
    if mode is NonMbsMode.PRIORITIZED_ADAPTIVE:
        n_calls = math.floor(roomy / full)
        degraded_calls = max(math.floor(tight / newcall), n_calls)
        top_calls = max(math.floor(tight / floor), degraded_calls)
    elif mode is NonMbsMode.NON_PRIORITIZED_ADAPTIVE:
        n_calls = degraded_calls = top_calls = math.floor(tight / floor)
    else:
        n_calls = degraded_calls = top_calls = math.floor(roomy / full)

    if top_calls <= 0:
        raise ModelError("capacity left for non-MBS calls cannot host a single call")
    return m, m + n_calls, degraded_calls - n_calls, top_calls - n_calls


def derive_rates(config: SystemConfig, total_new_rate: float) -> tuple[tuple[float, float, float], float, float]:
    """Per-class new-call rates, handover rate and channel holding rate."""
    if total_new_rate < 0:
        raise ValueError("total new-call rate must be non-negative")
    weights = _class_weights(config)
    new_rates = tuple(float(w) * total_new_rate for w in weights)
    completion, exit_rate = config.completion_rate, config.dwell_exit_rate
    handover_rate = total_new_rate * handover_probability(config)
    return new_rates, handover_rate, completion + exit_rate


def handover_probability(config: SystemConfig) -> float:
    """Chance a call leaves the cell before it completes."""
    completion, exit_rate = config.completion_rate, config.dwell_exit_rate
    return exit_rate / (exit_rate + completion)


def build_model(config: SystemConfig, total_new_rate: float) -> MarkovModel:
    m, n, l, s = derive_thresholds(config)
    if n + s <= m:
        raise ModelError("chain has no room for calls beyond the MBS states")
    new_rates, handover_rate, mu = derive_rates(config, total_new_rate)
    return MarkovModel(m, n, l, s, new_rates, handover_rate, mu)


def chain_is_exact(config: SystemConfig) -> bool:
    """True when every call needs the same rigid bandwidth and the chain was pinned explicitly.

    Only then does the one-dimensional chain describe the cell exactly, so the
    simulator must agree with it statistically.
    """
    uni, bg = config.unicast, config.background
    rigid = uni.min_bw == uni.max_bw and bg.handover_bw == bg.max_bw
    same = config.voice.bandwidth == uni.max_bw == bg.max_bw
    return rigid and same and config.chain_override is not None


# --- solving ------------------------------------------------------------------------------

def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def solve(model: MarkovModel) -> StationaryDistribution:
    """Stationary distribution by forward recurrence in log space."""
    states = model.states
    logp = np.empty(len(states))
    logp[0] = 0.0
    log_mu = math.log(model.holding_rate)
    for k, state in enumerate(states[1:], start=1):
        logp[k] = logp[k - 1] + _log(model.arrival_rate(state - 1)) - math.log(k) - log_mu
    top = logp.max()
    probs = np.exp(logp - top)
    probs /= probs.sum()
    return StationaryDistribution(model.mbs_states, probs)


def _product_log_term(model: MarkovModel, state: int) -> float:
    """log(P_state / P_M) straight from the closed product form."""
    m, n, d = model.mbs_states, model.full_end, model.degraded_end
    in_full = min(state, n) - m
    in_degraded = min(max(state - n, 0), model.degraded_len)
    in_tail = max(state - d, 0)
    total = 0.0
    for count, rate in ((in_full, model.total_rate), (in_degraded, model.degraded_rate), (in_tail, model.handover_rate)):
        if count:
            total += count * _log(rate)
    calls = state - m
    return total - math.lgamma(calls + 1) - calls * math.log(model.holding_rate)


def product_form_probabilities(model: MarkovModel) -> tuple[float, float, float]:
    """(P_D, P_B voice/unicast, P_B background) from the closed product form."""
    logs = np.array([_product_log_term(model, i) for i in model.states])
    top = logs.max()
    weights = np.exp(logs - top)
    norm = weights.sum()
    offset = model.mbs_states
    drop = weights[model.top - offset] / norm
    block_vu = weights[model.degraded_end - offset:].sum() / norm
    block_back = weights[model.full_end - offset:].sum() / norm
    return float(drop), float(block_vu), float(block_back)


def balance_residuals(model: MarkovModel, dist: StationaryDistribution) -> np.ndarray:
    """Relative mismatch of up/down flow across every adjacent state pair."""
    # below this, floats are subnormal and lose relative precision
    tiny = sys.float_info.min * 2.0 ** 53
    out = []
    for state in model.states[1:]:
        up = model.arrival_rate(state - 1) * dist[state - 1]
        down = (state - model.mbs_states) * model.holding_rate * dist[state]
        scale = max(up, down)
        out.append(abs(up - down) / scale if min(up, down) > tiny else 0.0)
    return np.array(out)


def dropping_probability(dist: StationaryDistribution, model: MarkovModel) -> float:
    return dist[model.top]


def blocking_probabilities(dist: StationaryDistribution, model: MarkovModel) -> tuple[float, float]:
    """(voice/unicast blocking, background blocking)."""
    return dist.total(model.degraded_end, model.top), dist.total(model.full_end, model.top)


# --- per-state bandwidth profile -------------------------------------------------------

def _interpolate(start: int, stop: int, state: int, high, low):
    """Linear from ``high`` at ``start`` to ``low`` at ``stop``."""
    if state <= start or stop <= start:
        return high if state <= start else low
    if state >= stop:
        return low
    return high + (low - high) * Fraction(state - start, stop - start)


def state_profile(config: SystemConfig, model: MarkovModel, state: int) -> tuple[Fraction, Fraction, Fraction]:
    """(MBS bandwidth, non-MBS bandwidth, unicast layers) attributed to ``state``.

    The MBS share falls linearly across the degraded region (an approximation:
    the real allocation moves in layer-sized steps).  Non-MBS calls are counted
    at full quality but can never exceed what the MBS share leaves free.
    """
    mbs_high, mbs_low = _mbs_band(config)
    mbs = _interpolate(model.full_end, model.degraded_end, state, Fraction(mbs_high), Fraction(mbs_low))
    calls = state - model.mbs_states
    full = mean_call_bw(config, config.unicast.max_bw, config.background.max_bw)
    non_mbs = min(calls * full, config.capacity - mbs)

    uni = config.unicast
    mode = apply_scheme(config).non_mbs_mode
    if mode is NonMbsMode.RIGID:
        layers = Fraction(uni.max_layers)
    else:
        # unicast layers shrink only in the part of the chain reserved for handovers
        start = model.degraded_end
        if mode is NonMbsMode.NON_PRIORITIZED_ADAPTIVE:
            start = model.mbs_states + math.floor((config.capacity - mbs_high) / full)
        layers = _interpolate(start, model.top, state, Fraction(uni.max_layers), Fraction(uni.min_layers))
    return mbs, non_mbs, layers


def _mbs_layers(config: SystemConfig, mbs_bw: Fraction) -> Fraction:
    """Mean layers per MBS session implied by an MBS bandwidth (exact for identical sessions)."""
    sessions = config.mbs_sessions
    if not sessions:
        return Fraction(0)
    per_layer = sum(s.layer_bw for s in sessions)
    if per_layer == 0:
        return Fraction(sum(s.max_layers for s in sessions), len(sessions))
    return (mbs_bw - sum(s.base_layer_bw for s in sessions)) / per_layer


def evaluate(config: SystemConfig, total_new_rate: float) -> MetricsReport:
    model = build_model(config, total_new_rate)
    dist = solve(model)
    drop = dropping_probability(dist, model)
    block_vu, block_back = blocking_probabilities(dist, model)

    mbs_bw = used = layers = mbs_layers = calls = 0.0
    for state in model.states:
        p = dist[state]
        if p == 0.0:
            continue
        mbs, non_mbs, uni_layers = state_profile(config, model, state)
        mbs_bw += p * float(mbs)
        mbs_layers += p * float(_mbs_layers(config, mbs))
        used += p * float(mbs + non_mbs)
        layers += p * float(uni_layers)
        calls += p * (state - model.mbs_states)

    mu = model.holding_rate
    return MetricsReport(
        source="analytic",
        p_drop=drop,
        p_block_voice=block_vu,
        p_block_unicast=block_vu,
        p_block_back=block_back,
        forced_termination=forced_termination(handover_probability(config), drop),
        utilization=used / config.capacity,
        mbs_bw=mbs_bw,
        mean_mbs_layers=mbs_layers,
        mean_uni_layers=layers,
        mean_active_calls=calls,
        carried_rate=calls * mu,
    )
