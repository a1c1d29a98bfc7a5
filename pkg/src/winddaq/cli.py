"""Command-line entry points: run, analyze, benchtest.

Output is ``key=value`` lines. Exit codes: 0 success, 2 invalid input,
3 failed assertion (strict analysis or benchtest), 4 I/O problem.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .benchtest import PROFILES, run_profile
from .campaign import Campaign, CampaignSpec, nominal_fault_profile, write_run_artifacts
from .config import ConfigError, config_to_kv, dump_kv, load_config
from .pipeline.analyze import analyze
from .pipeline.fair import PackageError
from .pipeline.ingest import IngestError
from .sim import FaultSchedule, format_fault_schedule, load_fault_schedule
from .storage import SEGMENT_PREFIX

EXIT_OK, EXIT_INVALID, EXIT_ASSERT, EXIT_IO = 0, 2, 3, 4


def _emit(pairs) -> None:
    for k, v in pairs:
        print(f"{k}={v}")


def _accel(text: str) -> Optional[float]:
    if text == "max":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a number >= 1 or 'max'") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="winddaq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a seeded campaign")
    run.add_argument("--config", required=True, help="key = value config file")
    run.add_argument("--faults", help="fault schedule file, or 'nominal' for the field profile")
    run.add_argument("--duration", type=float, required=True, help="logical seconds")
    run.add_argument("--accel", type=_accel, default=None, help="logical seconds per wall second, or 'max'")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, help="output directory (must not hold segments yet)")

    an = sub.add_parser("analyze", help="quality report, curve and dataset package")
    an.add_argument("--in", dest="in_dir", required=True)
    an.add_argument("--out", required=True)
    an.add_argument("--strict", action="store_true")
    an.add_argument("--min-completeness", type=float, default=0.9)
    an.add_argument("--bin-width", type=float, default=None)

    bt = sub.add_parser("benchtest", help="named verification scenario")
    bt.add_argument("profile", choices=PROFILES)
    bt.add_argument("--seed", type=int, default=0)
    return p


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error={e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.faults is None:
            faults = FaultSchedule()
        elif args.faults == "nominal":
            faults = nominal_fault_profile(args.duration, args.seed)
        else:
            faults = load_fault_schedule(args.faults)
        spec = CampaignSpec(config, faults, args.duration, args.accel, args.seed, args.out)
    except ValueError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out)
    if out.exists() and any(out.glob(SEGMENT_PREFIX + "*.csv")):
        print(f"error=output directory {out} already holds segments", file=sys.stderr)
        return EXIT_INVALID
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(dump_kv(config_to_kv(config)))
        (out / "faults.txt").write_text(format_fault_schedule(faults))
        camp = Campaign(spec)
        try:
            result = camp.run()
        finally:
            camp.medium.close()
        write_run_artifacts(out, result)
    except OSError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    _emit(result.summary().items())
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.bin_width is not None and not args.bin_width > 0:
        print("error=--bin-width must be > 0", file=sys.stderr)
        return EXIT_INVALID
    if not 0 <= args.min_completeness <= 1:
        print("error=--min-completeness must be in [0, 1]", file=sys.stderr)
        return EXIT_INVALID
    try:
        a = analyze(args.in_dir, args.out, bin_width=args.bin_width)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error={e}", file=sys.stderr)
        return EXIT_INVALID
    except (PackageError, ValueError) as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IngestError, OSError) as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_IO
    _emit(a.report.as_dict().items())
    _emit([
        ("retention", f"{a.retention:.6f}"),
        ("parse_errors", len(a.stats.issues)),
        ("damaged_segments", len(a.stats.damaged)),
        ("curve_bins", len(a.curve.bins)),
        ("package", a.package),
    ])
    for issue in (a.stats.damaged + a.stats.issues)[:20]:
        print(f"warning={issue}", file=sys.stderr)
    if args.strict and a.report.completeness < args.min_completeness:
        print(f"error=completeness {a.report.completeness:.6f} below {args.min_completeness}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def cmd_benchtest(args) -> int:
    report = run_profile(args.profile, args.seed)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_ASSERT


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "analyze": cmd_analyze, "benchtest": cmd_benchtest}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
