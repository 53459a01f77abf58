"""Cell and traffic parameterization.

Every bandwidth is held as an integer number of bits per second so that the
feasibility comparisons done by the allocator and the admission engine are
exact.  Configuration text uses one ``key = value`` pair per line; bandwidth
values accept ``bps``/``kbps``/``Mbps``/``Gbps`` suffixes.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import os
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from importlib import resources
from typing import Iterable


class ConfigError(ValueError):
    """A configuration violates one of the model invariants."""


class ConfigParseError(ConfigError):
    """Configuration text is malformed."""


class Technique(str, enum.Enum):
    TWO_LEVEL = "two-level"
    MULTI_LEVEL = "multi-level"


_UNITS = {"bps": 1, "kbps": 10**3, "mbps": 10**6, "gbps": 10**9}
_BITRATE_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*([A-Za-z]*)\s*$")


def parse_bitrate(text: str) -> int:
    """Parse ``"64 kbps"``, ``"0.5Mbps"`` or a bare bits/s count into bits/s."""
    match = _BITRATE_RE.match(str(text))
    if not match:
        raise ConfigParseError(f"malformed bitrate {text!r}")
    number, unit = match.groups()
    scale = _UNITS.get(unit.lower() if unit else "bps")
    if scale is None:
        raise ConfigParseError(f"unknown bitrate unit {unit!r} in {text!r}")
    try:
        value = Decimal(number) * scale
    except InvalidOperation as exc:  # pragma: no cover - regex already filters
        raise ConfigParseError(f"malformed bitrate {text!r}") from exc
    if value != value.to_integral_value():
        raise ConfigParseError(f"bitrate {text!r} is not a whole number of bits/s")
    return int(value)


def format_bitrate(bps: int) -> str:
    for unit, scale in (("Mbps", 10**6), ("kbps", 10**3)):
        if bps and bps % scale == 0:
            return f"{bps // scale}{unit}"
    return f"{bps}bps"


def mbps(bps: float) -> float:
    return bps / 1e6


@dataclass(frozen=True)
class VoiceClass:
    """Constant-rate voice; admitted, kept and released at one bandwidth."""

    bandwidth: int

    @property
    def min_bw(self) -> int:
        return self.bandwidth

    @property
    def max_bw(self) -> int:
        return self.bandwidth


@dataclass(frozen=True)
class UnicastClass:
    """Scalable unicast video: a base layer plus between min and max enhancement layers."""

    base_layer_bw: int
    layer_bw: int
    max_layers: int
    min_layers: int = 0

    def bw_at(self, layers: int) -> int:
        return self.base_layer_bw + layers * self.layer_bw

    @property
    def min_bw(self) -> int:
        return self.bw_at(self.min_layers)

    @property
    def max_bw(self) -> int:
        return self.bw_at(self.max_layers)


@dataclass(frozen=True)
class MbsSessionSpec:
    """One always-on multicast/broadcast session; lower ``session_id`` is higher priority."""

    session_id: int
    base_layer_bw: int
    layer_bw: int
    max_layers: int
    min_layers: int = 0

    def bw_at(self, layers: int) -> int:
        return self.base_layer_bw + layers * self.layer_bw

    @property
    def min_bw(self) -> int:
        return self.bw_at(self.min_layers)

    @property
    def max_bw(self) -> int:
        return self.bw_at(self.max_layers)


@dataclass(frozen=True)
class BackgroundClass:
    """Best-effort traffic with two degradation depths.

    ``newcall_degrade_fraction`` bounds how far existing calls may be squeezed
    (and how low a new background call may be admitted) when accepting *new*
    calls; ``handover_degrade_fraction`` is the deeper bound used for handovers
    and is also the absolute floor.
    """

    requested_bw: int
    handover_degrade_fraction: Fraction
    newcall_degrade_fraction: Fraction
    class_index: int = 1

    @property
    def max_bw(self) -> int:
        return self.requested_bw

    @property
    def handover_bw(self) -> int:
        return math.ceil((1 - self.handover_degrade_fraction) * self.requested_bw)

    @property
    def newcall_bw(self) -> int:
        return math.ceil((1 - self.newcall_degrade_fraction) * self.requested_bw)

    @property
    def min_bw(self) -> int:
        return self.handover_bw


@dataclass(frozen=True)
class ChainOverride:
    """Explicit state thresholds for the birth-death model (see ``analytic``)."""

    full_end: int
    degraded_len: int
    handover_len: int


@dataclass(frozen=True)
class SystemConfig:
    capacity: int
    voice: VoiceClass
    unicast: UnicastClass
    background: BackgroundClass
    mbs_sessions: tuple[MbsSessionSpec, ...]
    arrival_ratio: tuple[Fraction, Fraction, Fraction]
    mean_call_duration: float
    mean_dwell_time: float
    technique: Technique = Technique.TWO_LEVEL
    scheme: int = 1
    chain_override: ChainOverride | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mbs_sessions", tuple(self.mbs_sessions))
        object.__setattr__(self, "arrival_ratio", tuple(Fraction(w) for w in self.arrival_ratio))
        object.__setattr__(self, "technique", Technique(self.technique))
        _validate(self)

    @property
    def session_count(self) -> int:
        return len(self.mbs_sessions)

    @property
    def mbs_max_bw(self) -> int:
        return sum(s.max_bw for s in self.mbs_sessions)

    @property
    def mbs_min_bw(self) -> int:
        return sum(s.min_bw for s in self.mbs_sessions)

    @property
    def non_mbs_max_bw(self) -> int:
        return self.capacity - self.mbs_min_bw

    @property
    def non_mbs_min_bw(self) -> int:
        return self.capacity - self.mbs_max_bw

    @property
    def completion_rate(self) -> float:
        return 1.0 / self.mean_call_duration

    @property
    def dwell_exit_rate(self) -> float:
        return 1.0 / self.mean_dwell_time

    def replace(self, **changes) -> SystemConfig:
        return dataclasses.replace(self, **changes)


def _validate(cfg: SystemConfig) -> None:
    if cfg.capacity <= 0:
        raise ConfigError("capacity must be positive")
    if cfg.voice.bandwidth <= 0:
        raise ConfigError("voice bandwidth must be positive")

    uni = cfg.unicast
    if uni.base_layer_bw < 0 or uni.layer_bw < 0:
        raise ConfigError("unicast layer bandwidths must be non-negative")
    if not 0 <= uni.min_layers <= uni.max_layers:
        raise ConfigError("unicast layers must satisfy 0 <= min_layers <= max_layers")
    if uni.min_bw <= 0:
        raise ConfigError("unicast minimum bandwidth must be positive")

    for pos, s in enumerate(cfg.mbs_sessions, start=1):
        if s.session_id != pos:
            raise ConfigError(f"MBS session ids must be 1..M in priority order (got {s.session_id} at {pos})")
        if s.base_layer_bw < 0 or s.layer_bw < 0:
            raise ConfigError(f"MBS session {pos}: layer bandwidths must be non-negative")
        if not 0 <= s.min_layers <= s.max_layers:
            raise ConfigError(f"MBS session {pos}: layers must satisfy 0 <= min_layers <= max_layers")

    bg = cfg.background
    if bg.requested_bw <= 0:
        raise ConfigError("background requested bandwidth must be positive")
    xi, xi_new = bg.handover_degrade_fraction, bg.newcall_degrade_fraction
    if not (0 <= xi < 1 and 0 <= xi_new < 1):
        raise ConfigError("background degradation fractions must lie in [0, 1)")
    if xi_new > xi:
        raise ConfigError("new-call degradation fraction must not exceed the handover degradation fraction")

    if cfg.mbs_min_bw > cfg.capacity:
        raise ConfigError(
            f"minimum MBS bandwidth {format_bitrate(cfg.mbs_min_bw)} exceeds capacity {format_bitrate(cfg.capacity)}"
        )
    if cfg.mbs_max_bw > cfg.capacity:
        raise ConfigError(
            f"maximum MBS bandwidth {format_bitrate(cfg.mbs_max_bw)} exceeds capacity {format_bitrate(cfg.capacity)}"
        )

    if len(cfg.arrival_ratio) != 3 or any(w <= 0 for w in cfg.arrival_ratio):
        raise ConfigError("arrival_ratio needs three positive weights voice:unicast:background")
    if not (0 < cfg.mean_call_duration < math.inf):
        raise ConfigError("mean call duration must be positive and finite")
    if not cfg.mean_dwell_time > 0:
        raise ConfigError("mean dwell time must be positive")
    if cfg.scheme not in range(1, 8):
        raise ConfigError(f"scheme must be 1..7, got {cfg.scheme}")

    ov = cfg.chain_override
    if ov is not None:
        if ov.full_end < cfg.session_count or ov.degraded_len < 0 or ov.handover_len < ov.degraded_len:
            raise ConfigError("chain override must satisfy M <= N and 0 <= L <= S")


# --- text format -----------------------------------------------------------

_SESSION_KEYS = ("base_bw", "layer_bw", "max_layers", "min_layers", "max_bw", "min_bw")
_KEYS = {
    "capacity", "voice.bw",
    "unicast.base_bw", "unicast.max_bw", "unicast.layer_bw", "unicast.max_layers", "unicast.min_layers",
    "background.req_bw", "background.xi", "background.xi_prime", "background.class",
    "mbs.count", *(f"mbs.{k}" for k in _SESSION_KEYS),
    "arrival_ratio", "call_duration_s", "dwell_time_s", "technique", "scheme",
    "chain.n", "chain.l", "chain.s",
}
_SESSION_KEY_RE = re.compile(r"^mbs\.(\d+)\.(%s)$" % "|".join(_SESSION_KEYS))


def _parse_lines(text: str) -> dict[str, tuple[int, str]]:
    entries: dict[str, tuple[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigParseError(f"line {lineno}: empty key or value")
        if key not in _KEYS and not _SESSION_KEY_RE.match(key):
            raise ConfigParseError(f"line {lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigParseError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = (lineno, value)
    return entries


class _Reader:
    def __init__(self, entries: dict[str, tuple[int, str]]):
        self.entries = entries

    def has(self, key: str) -> bool:
        return key in self.entries

    def raw(self, key: str, default: str | None = None) -> str:
        if key in self.entries:
            return self.entries[key][1]
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default

    def _convert(self, key, conv, default=None):
        text = self.raw(key, default)
        try:
            return conv(text)
        except ConfigError:
            raise
        except (ValueError, ZeroDivisionError) as exc:
            lineno = self.entries.get(key, (None,))[0]
            where = f"line {lineno}: " if lineno else ""
            raise ConfigParseError(f"{where}bad value for {key!r}: {text!r}") from exc

    def bitrate(self, key, default=None) -> int:
        return self._convert(key, parse_bitrate, default)

    def integer(self, key, default=None) -> int:
        return self._convert(key, int, default)

    def fraction(self, key, default=None) -> Fraction:
        return self._convert(key, Fraction, default)

    def number(self, key, default=None) -> float:
        return self._convert(key, float, default)


def _layered(base: int | None, max_bw: int | None, min_bw: int | None, layer: int,
             max_layers: int, min_layers: int, what: str) -> int:
    """Resolve the base-layer bandwidth from whichever of base/max/min was given."""
    candidates = []
    if base is not None:
        candidates.append(base)
    if max_bw is not None:
        candidates.append(max_bw - max_layers * layer)
    if min_bw is not None:
        candidates.append(min_bw - min_layers * layer)
    if not candidates:
        raise ConfigError(f"{what}: one of base_bw, max_bw or min_bw is required")
    if len(set(candidates)) != 1:
        raise ConfigError(
            f"{what}: base/max/min bandwidths are inconsistent with the layer counts "
            f"(implied base layers {sorted(set(candidates))} bps)"
        )
    if candidates[0] < 0:
        raise ConfigError(f"{what}: implied base-layer bandwidth is negative")
    return candidates[0]


def load_config(source: str) -> SystemConfig:
    """Build a validated :class:`SystemConfig` from configuration text."""
    r = _Reader(_parse_lines(source))

    uni_layer = r.bitrate("unicast.layer_bw")
    uni_max_layers = r.integer("unicast.max_layers")
    uni_min_layers = r.integer("unicast.min_layers", "0")
    unicast = UnicastClass(
        base_layer_bw=_layered(
            r.bitrate("unicast.base_bw") if r.has("unicast.base_bw") else None,
            r.bitrate("unicast.max_bw") if r.has("unicast.max_bw") else None,
            None, uni_layer, uni_max_layers, uni_min_layers, "unicast",
        ),
        layer_bw=uni_layer,
        max_layers=uni_max_layers,
        min_layers=uni_min_layers,
    )

    count = r.integer("mbs.count")
    if count < 0:
        raise ConfigError("mbs.count must be non-negative")
    sessions = []
    for sid in range(1, count + 1):
        def pick(name: str, conv: str):
            key = f"mbs.{sid}.{name}"
            if not r.has(key):
                key = f"mbs.{name}"
                if not r.has(key):
                    return None
            return getattr(r, conv)(key)

        layer = pick("layer_bw", "bitrate")
        max_layers = pick("max_layers", "integer")
        min_layers = pick("min_layers", "integer")
        if layer is None or max_layers is None:
            raise ConfigError(f"MBS session {sid}: layer_bw and max_layers are required")
        min_layers = 0 if min_layers is None else min_layers
        bw_keys = ("base_bw", "max_bw", "min_bw")
        prefix = f"mbs.{sid}." if any(r.has(f"mbs.{sid}.{k}") for k in bw_keys) else "mbs."
        base = _layered(*(r.bitrate(prefix + k) if r.has(prefix + k) else None for k in bw_keys),
                        layer, max_layers, min_layers, f"MBS session {sid}")
        sessions.append(MbsSessionSpec(sid, base, layer, max_layers, min_layers))
    for key in r.entries:
        m = _SESSION_KEY_RE.match(key)
        if m and not 1 <= int(m.group(1)) <= count:
            raise ConfigError(f"{key!r} refers to a session outside 1..{count}")

    ratio_text = r.raw("arrival_ratio")
    try:
        ratio = tuple(Fraction(part.strip()) for part in ratio_text.split(":"))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigParseError(f"bad value for 'arrival_ratio': {ratio_text!r}") from exc
    if len(ratio) != 3:
        raise ConfigParseError("arrival_ratio must have the form voice:unicast:background")

    try:
        technique = Technique(r.raw("technique", Technique.TWO_LEVEL.value))
    except ValueError as exc:
        raise ConfigParseError(f"unknown technique {r.raw('technique')!r}") from exc

    override = None
    chain_keys = [k for k in ("chain.n", "chain.l", "chain.s") if r.has(k)]
    if chain_keys:
        if len(chain_keys) != 3:
            raise ConfigError("chain.n, chain.l and chain.s must be given together")
        override = ChainOverride(r.integer("chain.n"), r.integer("chain.l"), r.integer("chain.s"))

    return SystemConfig(
        capacity=r.bitrate("capacity"),
        voice=VoiceClass(r.bitrate("voice.bw")),
        unicast=unicast,
        background=BackgroundClass(
            requested_bw=r.bitrate("background.req_bw"),
            handover_degrade_fraction=r.fraction("background.xi"),
            newcall_degrade_fraction=r.fraction("background.xi_prime"),
            class_index=r.integer("background.class", "1"),
        ),
        mbs_sessions=tuple(sessions),
        arrival_ratio=ratio,
        mean_call_duration=r.number("call_duration_s"),
        mean_dwell_time=r.number("dwell_time_s"),
        technique=technique,
        scheme=r.integer("scheme", "1"),
        chain_override=override,
    )


def dump_config(cfg: SystemConfig) -> str:
    """Serialize to configuration text; ``load_config(dump_config(c)) == c``."""
    lines = [
        f"capacity = {format_bitrate(cfg.capacity)}",
        f"voice.bw = {format_bitrate(cfg.voice.bandwidth)}",
        f"unicast.base_bw = {format_bitrate(cfg.unicast.base_layer_bw)}",
        f"unicast.layer_bw = {format_bitrate(cfg.unicast.layer_bw)}",
        f"unicast.max_layers = {cfg.unicast.max_layers}",
        f"unicast.min_layers = {cfg.unicast.min_layers}",
        f"background.req_bw = {format_bitrate(cfg.background.requested_bw)}",
        f"background.xi = {cfg.background.handover_degrade_fraction}",
        f"background.xi_prime = {cfg.background.newcall_degrade_fraction}",
        f"background.class = {cfg.background.class_index}",
        f"mbs.count = {cfg.session_count}",
    ]
    if cfg.mbs_sessions:
        first = cfg.mbs_sessions[0]
        fields = (("base_bw", "base_layer_bw", format_bitrate), ("layer_bw", "layer_bw", format_bitrate),
                  ("max_layers", "max_layers", str), ("min_layers", "min_layers", str))
        lines += [f"mbs.{key} = {fmt(getattr(first, attr))}" for key, attr, fmt in fields]
        for s in cfg.mbs_sessions[1:]:
            lines += [
                f"mbs.{s.session_id}.{key} = {fmt(getattr(s, attr))}"
                for key, attr, fmt in fields
                if getattr(s, attr) != getattr(first, attr)
            ]
    lines += [
        "arrival_ratio = " + ":".join(str(w) for w in cfg.arrival_ratio),
        f"call_duration_s = {cfg.mean_call_duration!r}",
        f"dwell_time_s = {cfg.mean_dwell_time!r}",
        f"technique = {cfg.technique.value}",
        f"scheme = {cfg.scheme}",
    ]
    if cfg.chain_override is not None:
        ov = cfg.chain_override
        lines += [f"chain.n = {ov.full_end}", f"chain.l = {ov.degraded_len}", f"chain.s = {ov.handover_len}"]
    return "\n".join(lines) + "\n"


BUILTIN_PREFIX = "builtin:"


def builtin_names() -> Iterable[str]:
    return sorted(p.name[:-5] for p in resources.files("mbsalloc.data").iterdir() if p.name.endswith(".conf"))


def read_config(path: str | os.PathLike) -> SystemConfig:
    """Load a config file, or a bundled one named ``builtin:<name>``."""
    path = os.fspath(path)
    if path.startswith(BUILTIN_PREFIX):
        name = path[len(BUILTIN_PREFIX):]
        try:
            text = resources.files("mbsalloc.data").joinpath(f"{name}.conf").read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise ConfigError(f"no bundled config {name!r}; available: {', '.join(builtin_names())}") from exc
        return load_config(text)
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read())


def reference_cell() -> SystemConfig:
    """The reference parameterization (20 Mbps cell, 12 MBS sessions)."""
    return read_config(BUILTIN_PREFIX + "reference")
