"""``mfesn`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(blow-up, diverged prediction), 3 statistical precondition failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import experiments as ex
from ..io import FormatError
from . import commands as cmd
from .config import ConfigError, default_config_text, load_config

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_STATISTICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"{self.prog}: error: {message}") from None


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # accepted before and after the subcommand; the subcommand copy must not
    # reset values given before it, hence SUPPRESS there
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="sectioned key=value file; omitted keys take defaults", **kw)
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)", **kw)
    common.add_argument("--threads", type=int, help="worker threads for truth integrations", **kw)
    common.add_argument("--out", type=Path, help="output directory (overrides [run] out)", **kw)
    common.add_argument("--noise-off", action="store_true", help="disable reservoir noise during prediction", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = _Parser(prog="mfesn", description="Shear-flow transition statistics with echo state networks.",
                parents=[_global_flags(suppress=False)])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="integrate the nine-mode model")
    s = sub.add_parser("train", parents=[common], help="fit an ESN readout on a trajectory window")
    s.add_argument("dataset", type=Path)
    s = sub.add_parser("predict", parents=[common], help="closed-loop ESN forecast")
    s.add_argument("model", type=Path)
    s.add_argument("dataset", type=Path)
    s.add_argument("--t-start", type=float)
    s.add_argument("--horizon", type=int)
    s.add_argument("--runs", type=int)
    s = sub.add_parser("lifetime", parents=[common], help="turbulent lifetimes and survival fits")
    s.add_argument("--model", type=Path)
    s = sub.add_parser("earlywarn", parents=[common], help="ensemble laminarization probabilities")
    s.add_argument("model", type=Path)
    s.add_argument("dataset", type=Path)
    s.add_argument("--reference", type=Path, help="held-out trajectory for the reference probability")
    s = sub.add_parser("plam", parents=[common], help="laminarization probability of perturbations")
    s.add_argument("--model", type=Path)
    s = sub.add_parser("ablate", parents=[common], help="training-window coverage study")
    s.add_argument("dataset", type=Path)
    s = sub.add_parser("fit", parents=[common], help="exponential MLE on lifetime tables")
    s.add_argument("tables", type=Path, nargs="+")
    s.add_argument("--reference", type=Path, help="lifetime table whose tau is the reference")
    sub.add_parser("config", parents=[common], help="print the default configuration")
    return p


def _config(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides[("run", "seed")] = args.seed
    if args.threads is not None:
        overrides[("run", "threads")] = args.threads
    if args.out is not None:
        overrides[("run", "out")] = args.out
    if args.noise_off:
        overrides[("esn", "noise_in_prediction")] = "false"
    return cfg.with_overrides(overrides) if overrides else cfg


def _dispatch(args):
    if args.command == "config":
        print(default_config_text(), end="")
        return []
    cfg = _config(args)
    c = args.command
    if c == "simulate":
        return cmd.cmd_simulate(cfg)
    if c == "train":
        return cmd.cmd_train(cfg, args.dataset)
    if c == "predict":
        return cmd.cmd_predict(cfg, args.model, args.dataset, args.t_start, args.horizon, args.runs)
    if c == "lifetime":
        return cmd.cmd_lifetime(cfg, args.model)
    if c == "earlywarn":
        return cmd.cmd_earlywarn(cfg, args.model, args.dataset, args.reference)
    if c == "plam":
        return cmd.cmd_plam(cfg, args.model)
    if c == "ablate":
        return cmd.cmd_ablate(cfg, args.dataset)
    return cmd.cmd_fit(cfg, args.tables, args.reference)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as stop:
        if stop.code in (0, None):
            return EXIT_OK
        if isinstance(stop.code, str):
            print(stop.code, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        for path in _dispatch(args):
            print(path)
    except ex.StatisticalPreconditionError as err:
        print(f"mfesn: statistical precondition failed: {err}", file=sys.stderr)
        return EXIT_STATISTICAL
    except cmd.NUMERICAL_ERRORS as err:
        where = getattr(err, "time", None)
        step = getattr(err, "step", None)
        detail = f" (t={where:g})" if where is not None else f" (step {step})" if step is not None else ""
        print(f"mfesn: numerical failure{detail}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, FormatError, FileNotFoundError, IndexError, ValueError) as err:
        print(f"mfesn: {err}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
