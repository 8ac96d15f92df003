"""``lens-forge <command> --config <path> [--seed N] [--out DIR]``.

Exit codes: 0 ok, 1 config error, 2 data error, 3 gateway error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, load_config
from .fixture import fixture_config, generate_fixture
from .gateway import GatewayError
from .pipeline import DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_GATEWAY = 0, 1, 2, 3

STAGES = {
    "ingest": pipeline.cmd_ingest,
    "synthesize": pipeline.cmd_synthesize,
    "judge": pipeline.cmd_judge,
    "assemble": pipeline.cmd_assemble,
    "encode": pipeline.cmd_encode,
    "tokens": pipeline.cmd_tokens,
    "run": pipeline.run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lens-forge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="override the config's base seed")
        p.add_argument("--out", type=Path, default=None, help="override paths.out_dir")
        return p

    stage("ingest", "extract and resample EMA-aligned sensor windows")
    stage("synthesize", "render template narratives from EMA responses")
    stage("judge", "rewrite narratives and gate them with the judge panel")
    stage("assemble", "build split QA datasets and the training mixture")
    stage("encode", "patch-encode windows and emit multimodal layouts")
    stage("tokens", "per-window prefill token accounting")
    stage("run", "run every stage in order")
    ev = stage("evaluate", "score predictions against references")
    ev.add_argument("--refs", required=True, type=Path)
    ev.add_argument("--preds", required=True, type=Path)

    fx = sub.add_parser("fixture", help="write the synthetic fixture and a matching config")
    fx.add_argument("--dir", required=True, type=Path)
    fx.add_argument("--participants", type=int, default=5)
    fx.add_argument("--emas", type=int, default=3)
    fx.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fixture":
        info = generate_fixture(args.dir / "data", args.participants, args.emas, args.seed)
        cfg_path = args.dir / "config.json"
        cfg_path.write_text(json.dumps(fixture_config("data", "out", seed=7), indent=2) + "\n", encoding="utf-8")
        print(json.dumps({**info, "config": str(cfg_path)}))
        return EXIT_OK
    try:
        config = load_config(args.config, seed=args.seed, out_dir=args.out)
        config.out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "evaluate":
            result = pipeline.cmd_evaluate(config, args.refs, args.preds)
        else:
            result = STAGES[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GatewayError as exc:
        print(f"gateway error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
