"""Command-line front end: ``protmeas run|validate|presets``.

Exit codes: 0 success, 2 invalid config, 3 numerical diagnostic failure
(including failed checks), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import yaml

from .config import ConfigError, ConfigIssue, ExperimentConfig, load_config, parse_text, validate
from .errors import NumericalError, PreconditionError, ProtmeasError
from .runner import (
    ACCEPTANCE_PRESETS,
    load_preset,
    preset_description,
    preset_names,
    run_command,
    to_csv,
    to_json,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
ALL_ACCEPTANCE = "all-acceptance"


class _IOFailure(Exception):
    pass


def _resolve(target: str) -> ExperimentConfig:
    """Load a config from a path, falling back to a bundled preset name."""
    if os.path.exists(target):
        try:
            return load_config(target)
        except OSError as exc:
            raise _IOFailure(f"cannot read {target}: {exc}") from None
    if target in preset_names():
        return load_preset(target)
    raise _IOFailure(f"{target}: no such file and no bundled preset of that name (see `protmeas presets`)")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protmeas", description="Protective-measurement simulations.")
    sub = parser.add_subparsers(dest="action", required=True)

    run = sub.add_parser("run", help="run a config file, a bundled preset, or all-acceptance")
    run.add_argument("config", help="config path, preset name, or 'all-acceptance'")
    run.add_argument("--seed", type=_u64, help="override the master seed")
    run.add_argument("--out", help="output path (default: output.path from the config, else stdout)")
    run.add_argument("--format", choices=("json", "csv"), help="output format (default: json)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")

    val = sub.add_parser("validate", help="check a config and list every problem")
    val.add_argument("config")

    sub.add_parser("presets", help="list bundled scenarios")
    return parser


def _write(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc}") from None


def _render(envelope: dict, fmt: str) -> str:
    if fmt == "csv":
        return to_csv(envelope["records"])
    return to_json(envelope)


def _cmd_presets() -> int:
    for name in preset_names():
        print(f"{name:28s} {preset_description(name)}")
    return EXIT_OK


def _cmd_validate(target: str) -> int:
    if os.path.exists(target):
        try:
            with open(target, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"error: cannot read {target}: {exc}", file=sys.stderr)
            return EXIT_IO
        try:
            issues = validate(parse_text(text))
        except yaml.YAMLError as exc:
            issues = [ConfigIssue("", f"not valid YAML: {exc}")]
    elif target in preset_names():
        issues = validate(load_preset(target).to_dict())
    else:
        print(f"error: {target}: no such file or preset", file=sys.stderr)
        return EXIT_IO
    if issues:
        for issue in issues:
            print(f"invalid: {issue}", file=sys.stderr)
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def _cmd_run(args) -> int:
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    if args.config == ALL_ACCEPTANCE:
        return _run_all(args)
    cfg = _resolve(args.config).with_overrides(seed=args.seed)
    out = cfg.output or {}
    path = args.out if args.out is not None else out.get("path")
    fmt = args.format or out.get("format", "json")
    envelope = run_command(cfg, jobs=args.jobs)
    _write(_render(envelope, fmt), path)
    for chk in envelope["checks"]:
        status = "PASS" if chk["passed"] else "FAIL"
        print(f"{status} {chk['metric']} = {chk['value']!r}", file=sys.stderr)
    return EXIT_OK if envelope["passed"] else EXIT_NUMERICAL


def _run_all(args) -> int:
    envelopes = {}
    ok = True
    for name in ACCEPTANCE_PRESETS:
        cfg = load_preset(name).with_overrides(seed=args.seed)
        env = run_command(cfg, jobs=args.jobs)
        envelopes[name] = env
        ok &= env["passed"]
        print(f"{'PASS' if env['passed'] else 'FAIL'} {name} ({env['wall_time']:.1f} s)", file=sys.stderr)
    fmt = args.format or "json"
    if fmt == "csv":
        rows = []
        for name, env in envelopes.items():
            for c in env["checks"]:
                rows.append({"preset": name, **c})
        text = to_csv(rows)
    else:
        text = to_json({"presets": envelopes, "passed": ok})
    _write(text, args.out)
    return EXIT_OK if ok else EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.action == "presets":
            return _cmd_presets()
        if args.action == "validate":
            return _cmd_validate(args.config)
        return _cmd_run(args)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"invalid: {issue}", file=sys.stderr)
        return EXIT_INVALID
    except _IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PreconditionError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ProtmeasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
