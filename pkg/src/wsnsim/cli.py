"""Command-line entry point: single runs, sweeps, oracle checks, plotting."""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

from . import experiments, simnet
from .simnet import GatewayPd, Scenario
from .timebase import ConfigurationError

ENV_SEED = "WSNSIM_SEED"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    """Configuration problem attributable to user input."""


_SCENARIO_KEYS = list(Scenario.__dataclass_fields__)
_SWEEP_KEYS = ["layers", "jitter_stds", "seeds", "modes"]
_OUTPUT_KEYS = ["out", "svg", "trace", "jobs"]
_ALL_CONFIG_KEYS = set(_SCENARIO_KEYS) | set(_SWEEP_KEYS) | set(_OUTPUT_KEYS)


def load_config(path: str) -> dict:
    """Load a JSON config, rejecting unknown keys outright."""
    try:
        with open(path, "r") as handle:
            config = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"config {path!r} must be a JSON object")
    unknown = sorted(set(config) - _ALL_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return config


def _parse_int_range(text: str, what: str) -> List[int]:
    """Parse ``N`` or ``A..B`` (inclusive) into a list of ints."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            start, stop = int(lo), int(hi)
            if stop < start:
                raise ValueError
            return list(range(start, stop + 1))
        return [int(text)]
    except ValueError:
        raise ConfigError(f"cannot parse {what} range {text!r}; expected N or A..B") from None


def _resolve_seed(args, config: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in config:
        return int(config["seed"])
    env = os.environ.get(ENV_SEED)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env!r}") from None
    return 0


def _build_scenario(config: dict, args, num_layers: Optional[int] = None) -> Scenario:
    kwargs = {}
    for key in _SCENARIO_KEYS:
        if key in config:
            kwargs[key] = config[key]
    if isinstance(kwargs.get("gateway_pd"), str):
        kwargs["gateway_pd"] = GatewayPd.parse(kwargs["gateway_pd"])
    kwargs["seed"] = _resolve_seed(args, config)
    if num_layers is not None:
        kwargs["num_layers"] = num_layers
    if getattr(args, "mode", None) not in (None, "both"):
        kwargs["mode"] = args.mode
    if getattr(args, "jitter_std", None) is not None:
        kwargs["jitter_std_s"] = args.jitter_std
    if getattr(args, "skew_ppm", None) is not None:
        kwargs["skew_bound_ppm"] = args.skew_ppm
    if getattr(args, "offset_bound", None) is not None:
        kwargs["offset_bound_s"] = args.offset_bound
    if getattr(args, "pd", None) is not None:
        kwargs["gateway_pd"] = GatewayPd.parse(args.pd)
    if getattr(args, "request_schedule", None) is not None:
        kwargs["request_schedule"] = args.request_schedule
    if getattr(args, "no_pd_compensation", False):
        kwargs["pd_compensation"] = False
    try:
        return Scenario(**kwargs).validated()
    except TypeError as exc:
        raise ConfigError(f"bad scenario field: {exc}") from exc


def _scenario_echo(scenario: Scenario) -> dict:
    echo = {}
    for key in _SCENARIO_KEYS:
        value = getattr(scenario, key)
        echo[key] = str(value) if isinstance(value, GatewayPd) else value
    return echo


def _config_comment(payload: dict) -> str:
    return "config: " + json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _parse_modes(args, config: dict) -> List[str]:
    if getattr(args, "mode", None) is not None:
        if args.mode == "both":
            return [simnet.MODE_RELAYING, simnet.MODE_TTG]
        return [simnet.normalize_mode(args.mode)]
    modes = config.get("modes")
    if modes:
        return [simnet.normalize_mode(m) for m in modes]
    return [simnet.MODE_RELAYING, simnet.MODE_TTG]


def cmd_run(args) -> int:
    config = load_config(args.config) if args.config else {}
    layers = None
    if args.layers is not None:
        values = _parse_int_range(args.layers, "--layers")
        if len(values) != 1:
            raise ConfigError("run takes a single --layers value, not a range")
        layers = values[0]
    scenario = _build_scenario(config, args, num_layers=layers)
    result = simnet.run(scenario, collect_trace=args.trace is not None)
    comment = _config_comment(_scenario_echo(scenario))
    experiments.write_records_csv(result, args.out, header_comment=comment)
    if args.trace is not None:
        _write_trace(result.trace or [], args.trace, comment)
    try:
        value = experiments.mse(result.records)
        print(f"mse_s2={value:g} n_used={result.n_used} n_excluded={result.n_excluded}")
    except experiments.NoDataError:
        print(f"mse_s2=nan n_used=0 n_excluded={result.n_excluded} (no usable records)")
    return EXIT_OK


def _write_trace(lines: List[str], path: str, comment: str) -> None:
    try:
        with open(path, "w", newline="") as handle:
            handle.write(f"# {comment}\n")
            for line in lines:
                handle.write(line + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace {path!r}: {exc}") from exc


def cmd_sweep(args) -> int:
    config = load_config(args.config) if args.config else {}
    base = _build_scenario(config, args)
    if args.layers is not None:
        layer_list = _parse_int_range(args.layers, "--layers")
    else:
        layer_list = [int(v) for v in config.get("layers", range(1, 21))]
    if args.seeds is not None:
        seeds = _parse_int_range(args.seeds, "--seeds")
    else:
        seeds = [int(v) for v in config.get("seeds", range(20))]
    if args.jitter_std is not None:
        sigma_list = [args.jitter_std]
    else:
        sigma_list = [float(v) for v in config.get("jitter_stds", [base.jitter_std_s])]
    modes = _parse_modes(args, config)
    jobs = args.jobs if args.jobs is not None else int(config.get("jobs", 1))

    result = experiments.sweep_grid(base, modes, layer_list, sigma_list, seeds, jobs=jobs)
    echo = _scenario_echo(base)
    echo.update({"modes": modes, "layers": layer_list,
                 "jitter_stds": sigma_list, "seeds": seeds})
    comment = _config_comment(echo)
    out = args.out or config.get("out") or "sweep.csv"
    experiments.write_csv(result, out, header_comment=comment)
    print(f"wrote {len(result.rows)} rows to {out}")
    for line in result.summary_lines():
        print(line)
    svg = args.svg or config.get("svg")
    if svg:
        experiments.render_svg(result, svg)
        print(f"wrote figure to {svg}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    value = experiments.analytic_mse_relaying(args.layers, args.sigma)
    print(f"{value:g}")
    return EXIT_OK


def cmd_plot(args) -> int:
    result = experiments.read_csv(args.csv)
    out = args.out
    if out is None:
        stem = args.csv[:-4] if args.csv.endswith(".csv") else args.csv
        out = stem + ".svg"
    experiments.render_svg(result, out)
    print(f"wrote figure to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsnsim",
        description="Simulate multi-hop WSN time synchronization and reproduce "
                    "its accuracy-versus-depth behavior.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, for_sweep: bool) -> None:
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--layers", metavar="A[..B]",
                       help="layer count (run) or range (sweep)")
        p.add_argument("--mode", "--modes", dest="mode",
                       choices=["relaying", "ttg", "both"], default=None)
        p.add_argument("--jitter-std", type=float, metavar="S",
                       help="delay jitter standard deviation in seconds")
        p.add_argument("--seed", type=int, metavar="N",
                       help=f"base RNG seed (falls back to ${ENV_SEED})")
        p.add_argument("--skew-ppm", type=float, metavar="P",
                       help="clock rate bound in ppm (0 disables skew)")
        p.add_argument("--offset-bound", type=float, metavar="S",
                       help="clock offset bound in seconds (0 disables offsets)")
        p.add_argument("--pd", metavar="{zero,const:X,exp:X}",
                       help="gateway processing-delay model")
        p.add_argument("--no-pd-compensation", action="store_true",
                       help="skip processing-delay compensation at the head")
        p.add_argument("--request-schedule", choices=["poisson", "periodic"],
                       help="request emission process (periodic is experimental)")
        if for_sweep:
            p.add_argument("--seeds", metavar="N..M", help="seed range for sweeps")
            p.add_argument("--jobs", type=int, metavar="N",
                           help="parallel sweep workers (default 1)")

    run_p = sub.add_parser("run", help="run one scenario and write its records")
    add_common(run_p, for_sweep=False)
    run_p.add_argument("--out", metavar="PATH", default="records.csv",
                       help="per-measurement records CSV (default records.csv)")
    run_p.add_argument("--trace", metavar="PATH", help="also dump the event trace")
    run_p.set_defaults(handler=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a grid of scenarios and write a CSV")
    add_common(sweep_p, for_sweep=True)
    sweep_p.add_argument("--out", metavar="PATH", help="sweep CSV (default sweep.csv)")
    sweep_p.add_argument("--svg", metavar="PATH", help="also render the MSE figure")
    sweep_p.set_defaults(handler=cmd_sweep)

    oracle_p = sub.add_parser(
        "oracle", help="print the first-order relaying MSE prediction"
    )
    oracle_p.add_argument("layers", type=int)
    oracle_p.add_argument("sigma", type=float)
    oracle_p.set_defaults(handler=cmd_oracle)

    plot_p = sub.add_parser("plot", help="re-render the figure from a sweep CSV")
    plot_p.add_argument("csv", metavar="CSV")
    plot_p.add_argument("--out", metavar="PATH", help="figure path (default CSV stem + .svg)")
    plot_p.set_defaults(handler=cmd_plot)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
