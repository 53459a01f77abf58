"""Command-line front end: ``mbsalloc allocate | sweep | validate``."""

from __future__ import annotations

import argparse
import io
import logging
import math
import os
import sys
from decimal import Decimal, InvalidOperation

from mbsalloc import analytic, simulator
from mbsalloc.allocation import AllocationError, MultiLevel, TwoLevel, allocate
from mbsalloc.config import ConfigError, SystemConfig, Technique, format_bitrate, parse_bitrate, read_config

log = logging.getLogger("mbsalloc")

CSV_HEADER = (
    "rate,scheme,technique,mode,p_drop,p_block_voice,p_block_unicast,p_block_back,"
    "p_forced_term,utilization,mbs_bw_mbps,mean_mbs_layers,mean_uni_layers,ci_halfwidth_pdrop"
)


class CliError(Exception):
    """A domain failure reported to the user with exit status 1."""


def _num(x: float) -> str:
    return format(x, ".10g")


# --- argument types --------------------------------------------------------------------

def _scheme_list(text: str) -> list[int]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("scheme list is empty")
    try:
        schemes = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"schemes must be integers 1..7, got {text!r}") from None
    bad = [s for s in schemes if s not in range(1, 8)]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown scheme(s) {bad}; expected 1..7")
    return list(dict.fromkeys(schemes))


def _rate(text: str) -> Decimal:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value.is_finite() or value < 0:
        raise argparse.ArgumentTypeError(f"rate must be a finite non-negative number, got {text!r}")
    return value


def _bitrate(text: str) -> int:
    try:
        return parse_bitrate(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def rate_grid(rate_min: Decimal, rate_max: Decimal, step: Decimal) -> list[Decimal]:
    """Inclusive grid computed in decimal so endpoints do not drift."""
    if rate_max < rate_min:
        raise CliError("--rate-max must not be below --rate-min")
    if step <= 0:
        raise CliError("--rate-step must be positive")
    count = int((rate_max - rate_min) / step)
    return [rate_min + k * step for k in range(count + 1)]


def _load(path: str, technique: str | None) -> SystemConfig:
    try:
        config = read_config(path)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    except ConfigError as exc:
        raise CliError(f"bad config {path}: {exc}") from None
    if technique:
        config = config.replace(technique=Technique(technique))
    return config


# --- subcommands -----------------------------------------------------------------------

def cmd_allocate(args, out) -> int:
    config = _load(args.config, args.technique)
    try:
        alloc = allocate(config, args.non_mbs_bw)
    except AllocationError as exc:
        raise CliError(str(exc)) from None

    if args.csv:
        buf = io.StringIO()
        buf.write("session,layers,bandwidth_bps\n")
        for g in alloc.grants:
            buf.write(f"{g.session_id},{g.layers},{g.bandwidth}\n")
        buf.write(f"total,{sum(alloc.layers)},{alloc.total_bw}\n")
        _emit_csv(args.csv, buf.getvalue(), out)
        if args.csv == "-":
            return 0

    detail = alloc.detail
    if isinstance(detail, TwoLevel):
        params = f"P = {detail.p}, M1 = {detail.m1}"
    elif isinstance(detail, MultiLevel):
        params = f"M2 = {detail.m2}"
    else:
        params = "all sessions at maximum quality"
    print(f"technique: {config.technique.value}", file=out)
    print(f"non-MBS load: {format_bitrate(args.non_mbs_bw)}, "
          f"left for MBS: {format_bitrate(config.capacity - args.non_mbs_bw)}", file=out)
    print(params, file=out)
    print(f"{'session':>7}  {'layers':>6}  bandwidth", file=out)
    for g in alloc.grants:
        print(f"{g.session_id:>7}  {g.layers:>6}  {format_bitrate(g.bandwidth)}", file=out)
    print(f"total MBS bandwidth: {format_bitrate(alloc.total_bw)}", file=out)
    return 0


def _emit_csv(target: str, text: str, out) -> None:
    if target == "-":
        out.write(text)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def sweep_rows(config: SystemConfig, rates, schemes, mode: str, seed: int, replications: int,
               calls: int, jobs: int = 1) -> list[tuple]:
    """(rate, scheme, mode, report) for every point, ordered by rate, scheme, mode."""
    rows = []
    modes = ["analytic", "sim"] if mode == "both" else [mode]
    for rate in rates:
        for scheme in schemes:
            cfg = config.replace(scheme=scheme)
            for m in modes:
                try:
                    if m == "analytic":
                        report = analytic.evaluate(cfg, float(rate))
                    else:
                        sim = simulator.SimConfig(cfg, float(rate), seed=seed, replications=replications, calls=calls)
                        report = simulator.run(sim, jobs=jobs)
                except (ValueError, ArithmeticError, RuntimeError) as exc:
                    raise CliError(f"sweep point rate={rate} scheme={scheme} mode={m} failed: {exc}") from exc
                rows.append((rate, scheme, m, report))
    return rows


def format_sweep_csv(config: SystemConfig, rows, comment: str) -> str:
    lines = [f"# {comment}", CSV_HEADER]
    for rate, scheme, mode, r in rows:
        ci = 0.0 if mode == "analytic" else r.halfwidth("p_drop")
        values = (r.p_drop, r.p_block_voice, r.p_block_unicast, r.p_block_back, r.forced_termination,
                  r.utilization, r.mbs_bw / 1e6, r.mean_mbs_layers, r.mean_uni_layers, ci)
        lines.append(",".join([str(rate), str(scheme), config.technique.value, mode, *map(_num, values)]))
    return "\n".join(lines) + "\n"


def cmd_sweep(args, out) -> int:
    config = _load(args.config, args.technique)
    rates = rate_grid(args.rate_min, args.rate_max, args.rate_step)
    schemes = args.scheme or [config.scheme]
    rows = sweep_rows(config, rates, schemes, args.mode, args.seed, args.replications, args.calls, args.jobs)
    comment = (f"mbsalloc sweep config={args.config} technique={config.technique.value} mode={args.mode} "
               f"seed={args.seed} replications={args.replications} calls={args.calls}")
    if args.csv:
        _emit_csv(args.csv, format_sweep_csv(config, rows, comment), out)
        if args.csv == "-":
            return 0
    print(f"{'rate':>8} {'scheme':>6} {'mode':>8} {'P_D':>11} {'P_B,v':>9} {'P_B,uni':>9} {'P_B,back':>9} "
          f"{'P_FT':>9} {'util':>7} {'MBS Mbps':>9}", file=out)
    for rate, scheme, mode, r in rows:
        print(f"{str(rate):>8} {scheme:>6} {mode:>8} {r.p_drop:>11.4g} {r.p_block_voice:>9.4g} "
              f"{r.p_block_unicast:>9.4g} {r.p_block_back:>9.4g} {r.forced_termination:>9.4g} "
              f"{r.utilization:>7.4f} {r.mbs_bw / 1e6:>9.3f}", file=out)
    return 0


def cmd_validate(args, out) -> int:
    config = _load(args.config, args.technique)
    sim = simulator.SimConfig(config, float(args.rate), seed=args.seed, replications=args.replications,
                              calls=args.calls)
    try:
        result = simulator.validate_against_chain(sim, jobs=args.jobs)
    except (ValueError, RuntimeError) as exc:
        raise CliError(str(exc)) from exc
    print(f"rate {args.rate} calls/s, scheme {config.scheme}, {args.replications} replications x "
          f"{args.calls} calls, seed {args.seed}", file=out)
    print(f"{'metric':<16} {'analytic':>12} {'simulated':>12} {'+/-95%':>10} {'gap':>11} {'rel gap':>9}", file=out)
    for row in result.rows:
        rel = row.relative_gap
        rel_text = f"{rel:>9.3g}" if math.isfinite(rel) else f"{'inf':>9}"
        print(f"{row.metric:<16} {row.analytic:>12.6g} {row.simulated:>12.6g} {row.halfwidth:>10.3g} "
              f"{row.gap:>11.3g} {rel_text}", file=out)
    if not result.exact:
        print("chain is an approximation for this config: gaps reported only", file=out)
        return 0
    for row in result.rows:
        print(f"{'PASS' if row.within else 'FAIL'} {row.metric}", file=out)
    return 0 if result.passed else 1


# --- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbsalloc", description="MBS layer allocation, admission schemes and loss analysis for one cell.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default="builtin:reference",
                       help="config file, or builtin:<name> (default builtin:reference)")
        p.add_argument("--technique", choices=[t.value for t in Technique],
                       help="MBS degradation technique (overrides the config)")

    def sim_flags(p):
        p.add_argument("--seed", type=_seed, default=42, help="base seed (default 42)")
        p.add_argument("--replications", type=_positive, default=10, help="replications per point (default 10)")
        p.add_argument("--calls", type=_positive, default=100_000,
                       help="offered new calls per replication (default 100000)")
        p.add_argument("--jobs", type=_positive, default=1, help="worker processes for replications")

    p = sub.add_parser("allocate", help="MBS layer grants for a given non-MBS load")
    common(p)
    p.add_argument("--non-mbs-bw", type=_bitrate, required=True, help="non-MBS bandwidth, e.g. '9 Mbps'")
    p.add_argument("--csv", metavar="PATH", help="also write CSV to PATH ('-' for stdout only)")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("sweep", help="loss probabilities and utilization across arrival rates and schemes")
    common(p)
    p.add_argument("--scheme", type=_scheme_list, help="comma-separated schemes 1..7 (default: the config's)")
    p.add_argument("--rate-min", type=_rate, default=Decimal("0.1"), help="first new-call rate, calls/s")
    p.add_argument("--rate-max", type=_rate, default=Decimal("1.0"), help="last new-call rate, calls/s")
    p.add_argument("--rate-step", type=_rate, default=Decimal("0.1"), help="rate increment, calls/s")
    p.add_argument("--mode", choices=["analytic", "sim", "both"], default="analytic")
    p.add_argument("--csv", metavar="PATH", help="write CSV to PATH ('-' for stdout)")
    sim_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="compare the birth-death model with simulation")
    common(p)
    p.add_argument("--rate", type=_rate, default=Decimal("0.5"), help="new-call rate, calls/s")
    sim_flags(p)
    p.set_defaults(func=cmd_validate)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("MBSALLOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None, out=None) -> int:
    _configure_logging()
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except CliError as exc:
        print(f"mbsalloc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
