"""Per-session MBS layer grants from the bandwidth left over by non-MBS calls.

Two degradation techniques are provided for the congested case:

* two-level: every session loses ``p`` or ``p + 1`` enhancement layers; the
  first ``m1`` sessions (highest priority) lose only ``p``.
* multi-level: the first ``m2`` sessions stay at full quality and the rest drop
  straight to their minimum layer count.

Both solve for their parameters by scanning the candidate values against the
defining inequalities, which is cheap for realistic session counts.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

from mbsalloc.config import MbsSessionSpec, SystemConfig, Technique


class AllocationError(ValueError):
    """The requested non-MBS demand cannot coexist with the MBS minimum."""


class LoadCondition(enum.Enum):
    LOW_TRAFFIC = "low-traffic"
    CONGESTED = "congested"


@dataclass(frozen=True)
class SessionGrant:
    session_id: int
    layers: int
    bandwidth: int


@dataclass(frozen=True)
class Full:
    """Every session at its maximum layer count."""


@dataclass(frozen=True)
class Floor:
    """Every session at its minimum layer count (fixed-minimum reservation)."""


@dataclass(frozen=True)
class TwoLevel:
    p: int
    m1: int


@dataclass(frozen=True)
class MultiLevel:
    m2: int


@dataclass(frozen=True)
class MbsAllocation:
    grants: tuple[SessionGrant, ...]
    total_bw: int
    detail: Full | Floor | TwoLevel | MultiLevel

    @functools.cached_property
    def layers(self) -> tuple[int, ...]:
        return tuple(g.layers for g in self.grants)

    @functools.cached_property
    def mean_layers(self) -> float:
        return sum(self.layers) / len(self.grants) if self.grants else 0.0


def _build(sessions, layer_counts, detail) -> MbsAllocation:
    grants = tuple(
        SessionGrant(s.session_id, k, s.bw_at(k)) for s, k in zip(sessions, layer_counts)
    )
    return MbsAllocation(grants, sum(g.bandwidth for g in grants), detail)


def _available(config: SystemConfig, non_mbs_bw: int) -> int:
    if non_mbs_bw < 0:
        raise AllocationError(f"non-MBS bandwidth must be non-negative, got {non_mbs_bw}")
    if non_mbs_bw > config.non_mbs_max_bw:
        raise AllocationError(
            f"non-MBS demand {non_mbs_bw} bps exceeds the non-MBS maximum {config.non_mbs_max_bw} bps"
        )
    return config.capacity - non_mbs_bw


def classify_load(config: SystemConfig, non_mbs_bw: int) -> LoadCondition:
    available = _available(config, non_mbs_bw)
    return LoadCondition.LOW_TRAFFIC if available >= config.mbs_max_bw else LoadCondition.CONGESTED


def allocate_full(config: SystemConfig) -> MbsAllocation:
    sessions = config.mbs_sessions
    return _build(sessions, [s.max_layers for s in sessions], Full())


def allocate_floor(config: SystemConfig) -> MbsAllocation:
    sessions = config.mbs_sessions
    return _build(sessions, [s.min_layers for s in sessions], Floor())


def _after_removing(s: MbsSessionSpec, removed: int) -> int:
    # a session never goes below its minimum, even when others still lose layers
    return max(s.min_layers, s.max_layers - removed)


def _total_after_removing(sessions, removed: int) -> int:
    return sum(s.bw_at(_after_removing(s, removed)) for s in sessions)


def allocate_two_level(config: SystemConfig, non_mbs_bw: int) -> MbsAllocation:
    sessions = config.mbs_sessions
    available = _available(config, non_mbs_bw)
    if available >= config.mbs_max_bw:
        return _build(sessions, [s.max_layers for s in sessions], TwoLevel(0, len(sessions)))

    max_removable = max(s.max_layers - s.min_layers for s in sessions)
    # smallest p whose (p + 1)-layer cut fits; the p-layer cut must not fit
    p = next(p for p in range(max_removable) if _total_after_removing(sessions, p + 1) <= available)
    spare = available - _total_after_removing(sessions, p + 1)

    m1 = 0
    for s in sessions:
        step = s.bw_at(_after_removing(s, p)) - s.bw_at(_after_removing(s, p + 1))
        if step > spare:
            break
        spare -= step
        m1 += 1

    layers = [_after_removing(s, p if pos < m1 else p + 1) for pos, s in enumerate(sessions)]
    return _build(sessions, layers, TwoLevel(p, m1))


def allocate_multi_level(config: SystemConfig, non_mbs_bw: int) -> MbsAllocation:
    sessions = config.mbs_sessions
    available = _available(config, non_mbs_bw)
    used = config.mbs_min_bw
    m2 = 0
    for s in sessions:
        upgrade = s.max_bw - s.min_bw
        if used + upgrade > available:
            break
        used += upgrade
        m2 += 1
    layers = [s.max_layers if pos < m2 else s.min_layers for pos, s in enumerate(sessions)]
    return _build(sessions, layers, MultiLevel(m2))


def allocate(config: SystemConfig, non_mbs_bw: int, technique: Technique | None = None) -> MbsAllocation:
    """Full allocation under low traffic, otherwise the configured technique."""
    if classify_load(config, non_mbs_bw) is LoadCondition.LOW_TRAFFIC:
        return allocate_full(config)
    technique = Technique(technique or config.technique)
    if technique is Technique.TWO_LEVEL:
        return allocate_two_level(config, non_mbs_bw)
    return allocate_multi_level(config, non_mbs_bw)
