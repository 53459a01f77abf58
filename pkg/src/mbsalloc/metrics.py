"""Result record shared by the analytic model and the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping


@dataclass(frozen=True)
class OutcomeCounts:
    new_offered: int = 0
    new_admitted: int = 0
    new_blocked: int = 0
    handover_offered: int = 0
    handover_admitted: int = 0
    handover_dropped: int = 0

    def __add__(self, other: OutcomeCounts) -> OutcomeCounts:
        return OutcomeCounts(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self) -> tuple[int, ...]:
        return (self.new_offered, self.new_admitted, self.new_blocked,
                self.handover_offered, self.handover_admitted, self.handover_dropped)

    @property
    def consistent(self) -> bool:
        return (self.new_offered == self.new_admitted + self.new_blocked
                and self.handover_offered == self.handover_admitted + self.handover_dropped)


# metric names in CSV/report order
METRICS = (
    "p_drop",
    "p_block_voice",
    "p_block_unicast",
    "p_block_back",
    "forced_termination",
    "utilization",
    "mbs_bw",
    "mean_mbs_layers",
    "mean_uni_layers",
)


@dataclass(frozen=True)
class MetricsReport:
    """Probabilities, utilization and quality figures for one operating point.

    ``mbs_bw`` is in bits/s.  ``halfwidths`` maps metric names to 95% confidence
    half-widths (empty for the analytic model, whose values are exact for its
    own chain).
    """

    source: str
    p_drop: float
    p_block_voice: float
    p_block_unicast: float
    p_block_back: float
    forced_termination: float
    utilization: float
    mbs_bw: float
    mean_mbs_layers: float
    mean_uni_layers: float
    mean_active_calls: float = math.nan
    carried_rate: float = math.nan
    halfwidths: Mapping[str, float] = field(default_factory=dict)
    counts: Mapping[str, OutcomeCounts] = field(default_factory=dict)
    replications: int = 0

    def value(self, name: str) -> float:
        return getattr(self, name)

    def halfwidth(self, name: str) -> float:
        return self.halfwidths.get(name, 0.0)


def forced_termination(handover_prob: float, drop_prob: float) -> float:
    """Chance an admitted call is eventually cut off by a failed handover.

    A call hands over with probability ``handover_prob`` each time it holds a
    channel; each attempt fails with ``drop_prob``.  Summing the geometric
    series over successive cells gives P_h P_D / (1 - P_h (1 - P_D)).
    """
    denom = 1.0 - handover_prob * (1.0 - drop_prob)
    return handover_prob * drop_prob / denom if denom > 0 else 0.0
