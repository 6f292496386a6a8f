"""Command line entry point: ``authorsum <command> [flags]``.

Commands run one phase each (``synth-data``, ``train``, ``adapt``, ``test``,
``project``, ``report``). Flags mirror :class:`ExperimentConfig`; a JSON file
given with ``--config`` overrides every flag it mentions.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .harness import ExperimentConfig

log = logging.getLogger("authorsum")

COMMANDS = {
    "synth-data": harness.run_synth,
    "train": harness.run_train,
    "adapt": harness.run_adapt,
    "test": harness.run_test,
    "project": harness.run_project,
    "report": harness.run_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="authorsum", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--out", dest="out_dir", default=None, help="output directory")
    p.add_argument("--config", default=None, help="JSON file with ExperimentConfig fields (wins over flags)")
    p.add_argument("--seed", type=int)
    p.add_argument("--style-divergence", type=float, dest="style_divergence")
    p.add_argument("--noise-rate", type=float, dest="noise_rate")
    p.add_argument("--paper-shaped", action="store_true", default=None, dest="paper_shaped",
                   help="use the large preset split counts (62 training authors, 10 new authors)")
    p.add_argument("--sections", nargs="+")
    p.add_argument("--modes", nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--doc-counts", type=int, nargs="+", dest="doc_counts")
    p.add_argument("--full-count", type=int, dest="full_count")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    keys = {f for f in ExperimentConfig.__dataclass_fields__}
    values = {k: v for k, v in vars(args).items() if k in keys and v is not None}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
        if not isinstance(overrides, dict):
            raise ValueError("config file must hold a JSON object")
        values.update(overrides)
    return ExperimentConfig.from_dict(values)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        kwargs = {}
        if args.command == "train":
            kwargs["log_fn"] = lambda s, m, e, l: log.info("%s %s epoch %d loss %.4f", s, m, e, l)
        COMMANDS[args.command](cfg, **kwargs)
    except Exception as exc:  # one machine-parseable line, nonzero exit
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    print(f"ok: {args.command} {cfg.out_dir} config_hash={cfg.hash()}")
    return 0
