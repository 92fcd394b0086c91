"""Command-line entry point: ``orbit5gc <command> ...``.

Exit codes: 0 success, 1 invariant or vector failures, 2 configuration or
input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import nas, transport
from .satlink import DEFAULT_STRETCH, LinkError, OrbitGeometry, compare_fiber_vs_leo
from .scenario import ConfigError, load_scenario
from .sim import MalformedTrace
from .testbed import run_scenario
from .verify import verify_trace

EXIT_OK, EXIT_VIOLATIONS, EXIT_CONFIG = 0, 1, 2


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_run(args) -> int:
    try:
        cfg = load_scenario(args.scenario, seed=args.seed)
    except ConfigError as exc:
        for where, msg in exc.problems:
            _err(f"config error: {where}: {msg}")
        return EXIT_CONFIG
    result = run_scenario(cfg, real_time=args.real_time)
    out = result.write(args.out or Path("runs") / cfg.name)
    s = result.summary
    print(f"scenario {cfg.name} seed {cfg.seed}: {s['events_processed']} events, "
          f"{s['trace_records']} trace records, hash {s['trace_hash']}")
    for key, stats in s["latency_ms"].items():
        if stats:
            print(f"  {key} latency: mean {stats['mean']:.3f} ms "
                  f"(min {stats['min']:.3f}, max {stats['max']:.3f}, n={stats['count']})")
    for key, n in sorted(s["outcomes"].items()):
        print(f"  {key}: {n}")
    print(f"  outputs in {out}")
    violations = verify_trace(result.trace)
    for v in violations:
        print(f"  violation: {v}")
    return EXIT_VIOLATIONS if violations else EXIT_OK


def cmd_verify(args) -> int:
    try:
        violations = verify_trace(Path(args.trace))
    except MalformedTrace as exc:
        _err(f"malformed trace: {exc}")
        return EXIT_CONFIG
    for v in violations:
        print(v)
    print(f"{len(violations)} violation(s)")
    return EXIT_VIOLATIONS if violations else EXIT_OK


def cmd_bench(args) -> int:
    delay, proc = args.delay_us, args.proc_us
    if args.calibrate_table1:
        cal = transport.calibrate()
        delay, proc = cal.one_way_delay_us, cal.processing_us
        print(f"calibrated: one_way_delay_us={delay:.0f} proc_us={proc:.0f} "
              f"residuals_ms={[round(r, 3) for r in cal.residual_ms]}")
    try:
        profile = transport.bench_profile(delay)
        one = transport.run_handshake(transport.HandshakeScheme.one_rtt(), profile, proc)
        two = transport.run_handshake(transport.HandshakeScheme.two_rtt(), profile, proc)
    except (transport.PreconditionViolated, LinkError, ValueError) as exc:
        _err(f"bad profile: {exc}")
        return EXIT_CONFIG
    a, b = one.connection_established_ms, two.connection_established_ms
    ratio = b / a if a > 0 else float("nan")
    if args.json:
        rows = lambda tr: [[r.number, r.packet_type, r.elapsed_ms, r.length] for r in tr.rows]
        print(json.dumps({"one_way_delay_us": delay, "proc_us": proc,
                          "one_rtt": rows(one), "two_rtt": rows(two),
                          "one_rtt_established_ms": a, "two_rtt_established_ms": b,
                          "ratio": ratio}, indent=2))
        return EXIT_OK
    print("1-RTT")
    print(one.table())
    print("\n2-RTT")
    print(two.table())
    print(f"\nestablished: 1-RTT {a:.3f} ms, 2-RTT {b:.3f} ms, ratio {ratio:.3f}")
    return EXIT_OK


def cmd_vectors(args) -> int:
    try:
        lines = Path(args.file).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        _err(f"cannot read {args.file}: {exc.strerror}")
        return EXIT_CONFIG
    results = nas.check_vectors(lines)
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"line {r.line_no}: FAIL {r.detail}")
    print(f"{len(results) - len(failed)}/{len(results)} vectors pass")
    return EXIT_VIOLATIONS if failed else EXIT_OK


def cmd_compare(args) -> int:
    try:
        geom = OrbitGeometry(args.altitude_km, args.elevation_deg)
        fiber, leo, gain = compare_fiber_vs_leo(args.path_km, geom, args.hops, args.stretch)
    except ValueError as exc:
        _err(f"bad geometry: {exc}")
        return EXIT_CONFIG
    print(f"slant range: {geom.slant_range_km:.2f} km")
    print(f"fiber: {fiber / 1000:.2f} ms")
    print(f"leo: {leo / 1000:.2f} ms")
    print(f"improvement: {gain:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orbit5gc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario (shipped name or .toml path)")
    r.add_argument("scenario")
    r.add_argument("--seed", type=lambda s: int(s, 0), default=None)
    r.add_argument("--out", type=Path, default=None, help="output dir (default runs/<name>)")
    r.add_argument("--real-time", action="store_true", help="pace events to the wall clock")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify", help="check a trace.jsonl for invariant violations")
    v.add_argument("trace")
    v.set_defaults(fn=cmd_verify)

    b = sub.add_parser("bench-handshake", help="1-RTT vs 2-RTT handshake timing")
    b.add_argument("--delay-us", type=float, default=0.0)
    b.add_argument("--proc-us", type=float, default=0.0)
    b.add_argument("--calibrate-table1", action="store_true",
                   help="fit delay and processing to the reference 1-RTT capture")
    b.add_argument("--json", action="store_true")
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("codec-vectors", help="check a NAS conformance-vector file")
    c.add_argument("file")
    c.set_defaults(fn=cmd_vectors)

    g = sub.add_parser("compare-latency", help="fiber vs LEO path latency")
    g.add_argument("--path-km", type=float, required=True)
    g.add_argument("--altitude-km", type=float, required=True)
    g.add_argument("--elevation-deg", type=float, required=True)
    g.add_argument("--hops", type=int, required=True)
    g.add_argument("--stretch", type=float, default=DEFAULT_STRETCH)
    g.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
