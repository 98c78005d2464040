"""Command line front end: ``waveguide-ip <subcommand> --config FILE``."""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import sys
import traceback
from pathlib import Path

import scipy.fft as sfft

from . import __version__
from .config import ConfigError, apply_override, config_hash, dump_config, load_config, parse_config
from .experiments import RUNNERS
from .io import write_json

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="waveguide-ip",
                                description="Waveguide inverse-problem laboratory.")
    p.add_argument("subcommand", choices=sorted(RUNNERS))
    p.add_argument("--config", help="YAML experiment config (defaults when omitted)")
    p.add_argument("--out-dir", default=None, help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, default=None, help="overrides noise.seed")
    p.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")
    return p


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _inventory(out: Path):
    files = {}
    for f in sorted(out.iterdir()):
        if f.is_file() and f.name != "manifest.json":
            files[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    return files


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        for item in args.override:
            cfg = apply_override(cfg, item)
        if args.seed is not None:
            cfg = apply_override(cfg, f"noise.seed={args.seed}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out_dir or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    seed = cfg["noise"]["seed"]
    manifest = dict(version=__version__, subcommand=args.subcommand, config_hash=config_hash(cfg),
                    seed=seed, started=_now(), config=cfg, stages={})
    status = EXIT_OK
    try:
        with sfft.set_workers(max(1, args.threads)):
            summary = RUNNERS[args.subcommand](cfg, out, seed)
        manifest["stages"][args.subcommand] = dict(status="ok")
        manifest["summary"] = summary
    except Exception as exc:  # recorded in the manifest, reported as a nonzero exit
        manifest["stages"][args.subcommand] = dict(status="failed", error=f"{type(exc).__name__}: {exc}",
                                                   traceback=traceback.format_exc())
        print(f"{args.subcommand} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        status = EXIT_FAILURE
    manifest["finished"] = _now()
    manifest["files"] = _inventory(out)
    write_json(out / "manifest.json", manifest)
    return status


if __name__ == "__main__":
    sys.exit(main())
