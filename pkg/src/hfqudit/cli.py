"""Command-line entry point: ``hfqudit <mode> [--config PATH] [--seed N] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .config import MODES, ConfigError, config_from_dict


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfqudit", description="State preparation for the Cs F=3 + |4,4> qudit ensemble.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True, metavar="MODE")
    helps = {
        "synthesize-semi": "alternating rf/microwave synthesis with robust sub-pulses",
        "optimize-full": "multi-start phase-only gradient optimization",
        "scan": "fidelity versus each inhomogeneity",
        "tomography": "spatially addressed preparation under a detuning profile",
        "haar-sample": "write seeded Haar-random target states",
        "verify": "re-simulate a stored waveform and check its checksums",
    }
    for mode in MODES:
        p = sub.add_parser(mode, help=helps[mode])
        p.add_argument("--config", help="JSON run config (defaults used when omitted)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, help="worker processes (overrides the config)")
        p.add_argument("--out", help="run directory (default: <output_dir>/<mode>-<hash>-seed<N>)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if mode == "verify":
            p.add_argument("--waveform", help="waveform file to check (overrides the config)")
            p.add_argument("--result", help="stored result JSON with per-point fidelities")
            p.add_argument("--target-index", type=int,
                           help="target the waveform prepares (default: from waveform_<i>.csv)")
    return parser


def _read_json(path) -> dict:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def resolve_config(args):
    """Merge the config file with command-line overrides.

    ``verify`` accepts the config of the run that produced the waveform (its
    mode is replaced) and, without ``--config``, reads ``config.json`` next to
    the waveform file.  Without ``--result`` a sibling ``result_<i>.json`` is
    used when present.
    """
    path = args.config
    if path is None and args.mode == "verify" and args.waveform:
        sibling = Path(args.waveform).parent / "config.json"
        path = sibling if sibling.exists() else None
    data = _read_json(path) if path else {}
    if args.mode == "verify":
        data.pop("mode", None)
    elif data.get("mode", args.mode) != args.mode:
        raise ConfigError(f"config mode {data['mode']!r} does not match command {args.mode!r}")
    data["mode"] = args.mode
    if args.seed is not None:
        data["seed"] = args.seed
    if args.threads is not None:
        data["threads"] = args.threads
    if args.mode == "verify":
        verify = dict(data.get("verify", {}))
        if args.waveform:
            verify["waveform"] = args.waveform
        if args.result:
            verify["result"] = args.result
        if args.target_index is not None:
            verify["target_index"] = args.target_index
        elif args.waveform:
            m = re.fullmatch(r"waveform_(\d+)\.csv", Path(args.waveform).name)
            if m:
                verify["target_index"] = int(m.group(1))
        if not args.result and args.waveform:
            stored = Path(args.waveform).parent / f"result_{verify.get('target_index', 0)}.json"
            if stored.exists():
                verify["result"] = str(stored)
        data["verify"] = verify
    return config_from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    from .runner import run

    try:
        out, summary = run(config, args.out)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(json.dumps({"run_dir": str(out), "summary": summary}, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
