"""Command line entry point: ``pathcalc run | schemas | version``.

Exit status of ``run``: 0 when every check passes, 1 when a check fails,
2 for an invalid configuration (nothing is written) and 3 when path
generation or evaluation fails.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, parse_pairs, schema_doc
from .errors import InvalidArgument, PathcalcError
from .experiments import SCHEMAS, RunFailure, run_experiment

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def format_cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_cell(v) for v in r])


def manifest_text(cfg: ExperimentConfig) -> str:
    return f"# pathcalc {__version__}\n" + cfg.serialize()


def load_config(config_file: str | None, overrides: list[str]) -> ExperimentConfig:
    pairs = {}
    if config_file is not None:
        try:
            text = Path(config_file).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        pairs.update(parse_pairs(text.splitlines()))
    pairs.update(parse_pairs(overrides, numbered=False))
    return ExperimentConfig(pairs)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.set or [])
    except InvalidArgument as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        result = run_experiment(cfg)
    except RunFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        _write_outputs(out, cfg, None, [f"ERROR {exc}", "RESULT: FAIL"])
        return EXIT_RUNTIME
    except InvalidArgument as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PathcalcError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        _write_outputs(out, cfg, None, [f"ERROR {exc}", "RESULT: FAIL"])
        return EXIT_RUNTIME
    lines = [f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "") for name, ok, detail in result.checks]
    lines.append(f"RESULT: {'PASS' if result.passed else 'FAIL'}")
    _write_outputs(out, cfg, result, lines)
    print("\n".join(lines))
    return EXIT_PASS if result.passed else EXIT_FAIL


def _write_outputs(out: Path, cfg, result, summary_lines) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest", "w", newline="") as fh:
        fh.write(manifest_text(cfg))
    if result is not None:
        write_csv(out / f"{cfg['experiment']}.csv", result.header, result.rows)
    with open(out / "summary", "w", newline="") as fh:
        fh.write("\n".join(summary_lines) + "\n")


def cmd_schemas(args) -> int:
    for name, cols in SCHEMAS.items():
        print(f"{name}: {','.join(cols)}")
    print()
    print("Floats are written with 17 significant digits; the header row is always present.")
    print()
    print("Configuration keys:")
    sys.stdout.write(schema_doc())
    return EXIT_PASS


def cmd_version(args) -> int:
    print(f"pathcalc {__version__}")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathcalc", description="Pathwise calculus and robust hedging experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--config", help="key=value config file (a manifest works too)")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_run)
    sub.add_parser("schemas", help="print CSV schemas and config keys").set_defaults(func=cmd_schemas)
    sub.add_parser("version", help="print the version").set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
