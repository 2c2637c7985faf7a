"""Command-line entry point: ``sra keygen|capture|verify|attack|bench``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import HandshakeError, SRAError
from .protection import CipherProfile, TagCarriage

EXIT_VALID, EXIT_INVALID, EXIT_MALFORMED = 0, 1, 2


def _config(args):
    from .pipeline import PipelineConfig

    overrides = {
        "width": args.width, "height": args.height, "frames": args.frames, "seed": args.seed,
        "profile": args.profile, "tag_carriage": args.carriage,
        "key_store_path": getattr(args, "store", None),
        "deterministic_test_mode": True if args.deterministic else None,
    }
    if args.config:
        return PipelineConfig.from_file(args.config, **overrides)
    return PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})


def _add_pipeline_flags(p, frames_default=None):
    p.add_argument("--config", type=Path, help="JSON file with PipelineConfig fields")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--frames", type=int, default=frames_default)
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=[c.name for c in CipherProfile])
    p.add_argument("--carriage", choices=[c.value for c in TagCarriage])
    p.add_argument("--deterministic", action="store_true",
                   help="fixed clock, deterministic ECDSA and handshake randomness")


def cmd_keygen(args) -> int:
    from .session import keygen

    try:
        ident = keygen(args.role, args.store, name=args.name, issuer=args.issuer,
                       force=args.force)
    except SRAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"created {args.name or args.role}: subject={ident.subject_id} "
          f"issuer={ident.certificate.issuer_id}")
    return 0


def cmd_capture(args) -> int:
    from .pipeline import capture

    config = _config(args)
    try:
        result = capture(config, args.out, threaded=args.threaded)
    except HandshakeError as exc:
        print(f"handshake failed: {exc}", file=sys.stderr)
        return 1
    except SRAError as exc:
        print(f"capture failed: {exc}", file=sys.stderr)
        return 1
    for path in result.paths:
        print(path)
    return 0


def cmd_verify(args) -> int:
    from .provenance import verify_asset
    from .session import KeyStore

    try:
        trust_root = KeyStore(args.store).trust_root(args.root)
    except (SRAError, OSError, ValueError) as exc:
        print(f"error: cannot load trust root: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    worst = EXIT_VALID
    for path in args.paths:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            print(f"file={path}\nverdict=invalid\nreasons=missing_file ({exc.strerror})")
            worst = max(worst, EXIT_MALFORMED)
            continue
        verdict = verify_asset(data, trust_root)
        text = f"file={path}\n" + verdict.report()
        print(text, end="")
        if args.report:
            Path(args.report).write_text(text)
        worst = max(worst, verdict.exit_code)
    return worst


def cmd_attack(args) -> int:
    from .harness import AttackScenario, default_config, run_all, run_scenario, write_report

    if not args.all and not args.scenario:
        print("error: give --scenario NAME or --all", file=sys.stderr)
        return 2
    config = default_config()
    if args.all:
        reports = run_all(config)
    else:
        reports = [run_scenario(AttackScenario(args.scenario), config)]
    for r in reports:
        print(r.line())
        if args.verbose:
            for t in r.transcript:
                print(f"    {t}")
    if args.report:
        write_report(reports, args.report)
    return 0 if all(r.passed for r in reports) else 1


def cmd_bench(args) -> int:
    from .pipeline import bench

    config = _config(args)
    report = bench(config, frames=args.frames or 100, full=args.full)
    print(report.to_text(), end="")
    if not report.meets_target:
        print(f"warning: {report.achieved_fps:.1f} fps is below the 30 fps target",
              file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sra", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="provision a root, sensor or host identity")
    p.add_argument("role", choices=["root", "sensor", "host", "device_class"])
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--name", help="identity name in the store (default: the role)")
    p.add_argument("--issuer", default="root")
    p.add_argument("--force", action="store_true", help="overwrite an existing identity")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("capture", help="run the pipeline and write SRA1 assets")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threaded", action="store_true", help="sensor and host as two threads")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_capture)

    p = sub.add_parser("verify", help="verify SRA1 assets (exit 0 valid, 1 invalid, 2 malformed)")
    p.add_argument("paths", nargs="+")
    p.add_argument("--store", type=Path, required=True, help="key store holding the trust root")
    p.add_argument("--root", default="root")
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attack", help="run threat scenarios")
    p.add_argument("--scenario")
    p.add_argument("--all", action="store_true")
    p.add_argument("--report", type=Path, help="write a JSON report")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", help="throughput against the 30 fps budget")
    p.add_argument("--full", action="store_true", help="time the whole pipeline")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
