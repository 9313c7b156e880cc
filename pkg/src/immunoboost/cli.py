"""Command-line entry point: ``immunoboost <subcommand> [options]``.

Exit codes: 0 success, 1 a verify property failed, 2 malformed input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import chartscan, spectrum, verify
from .equilibria import EquilibriumError, find_equilibrium
from .model import HistoryFunction, ModelParams, ParameterError, SpanError
from .simulator import Monitors, SimulationConfig, SimulationError, monitor_invariants, simulate

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

PARAM_PRESETS = {
    # spectrum settings at nu = 4.8
    "nu4.8-r0-1.01": {"r0": 1.01, "gamma": 17.0, "d": 0.02, "nu": 4.8, "tau": 15.0},
    "nu4.8-r0-1.5": {"r0": 1.5, "gamma": 17.0, "d": 0.02, "nu": 4.8, "tau": 15.0},
    "nu4.8-r0-3.2": {"r0": 3.2, "gamma": 17.0, "d": 0.02, "nu": 4.8, "tau": 15.0},
    "nu4.8-r0-4": {"r0": 4.0, "gamma": 17.0, "d": 0.02, "nu": 4.8, "tau": 15.0},
    "nu4.8-r0-6": {"r0": 6.0, "gamma": 17.0, "d": 0.02, "nu": 4.8, "tau": 15.0},
    "pertussis": {"r0": 15.0, "gamma": 17.0, "d": 0.02, "nu": 1.0, "tau": 15.0},
    "pertussis-short-life": {"r0": 15.0, "gamma": 17.0, "d": 0.2, "nu": 0.2, "tau": 1.0},
}


class InputError(Exception):
    """Malformed user input; ``key`` points at the offending field."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _load_json(source: str, what: str):
    """Parse ``source`` as inline JSON, or as a path to a JSON file."""
    text = source
    if not source.lstrip().startswith(("{", "[")):
        path = Path(source)
        if not path.is_file():
            raise InputError(f"{what}: {source!r} is neither inline JSON nor a readable file")
        text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{what}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _params(args) -> ModelParams:
    if args.params and args.preset:
        raise InputError("give either --params or --preset, not both", "params")
    if args.preset:
        if args.preset not in PARAM_PRESETS:
            raise InputError(f"unknown preset {args.preset!r}; available: {sorted(PARAM_PRESETS)}", "preset")
        record = PARAM_PRESETS[args.preset]
    elif args.params:
        record = _load_json(args.params, "--params")
    else:
        raise InputError("parameters required: use --params FILE|JSON or --preset NAME", "params")
    try:
        return ModelParams.from_dict(record)
    except ParameterError as exc:
        raise InputError(str(exc), exc.key) from None


def _number(record: dict, key: str, default=None, prefix: str = ""):
    value = record.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise InputError(f"{prefix}{key} must be a finite number, got {value!r}", prefix + key)
    return float(value)


def _history(spec, params: ModelParams) -> HistoryFunction | None:
    if spec is None:
        return None
    if not isinstance(spec, dict) or "type" not in spec:
        raise InputError("history must be an object with a 'type'", "history")
    kind = spec["type"]
    try:
        if kind == "constant":
            return HistoryFunction.constant(_number(spec, "S", prefix="history."),
                                            _number(spec, "I", prefix="history."), params.tau)
        if kind == "linear":
            start, end = spec.get("start"), spec.get("end")
            for key, v in (("start", start), ("end", end)):
                if not (isinstance(v, list) and len(v) == 2):
                    raise InputError(f"history.{key} must be [S, I]", f"history.{key}")
            return HistoryFunction.linear(start, end, params.tau)
        if kind == "tabulated":
            for key in ("t", "S", "I"):
                if not isinstance(spec.get(key), list):
                    raise InputError(f"history.{key} must be a list", f"history.{key}")
            return HistoryFunction.tabulated(spec["t"], spec["S"], spec["I"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"history: {exc}", "history") from None
    raise InputError(f"unknown history type {kind!r}", "history.type")


def _sim_config(args, params: ModelParams) -> SimulationConfig:
    record = _load_json(args.config, "--config") if args.config else {}
    if not isinstance(record, dict):
        raise InputError("--config must be a JSON object", "config")
    known = {"t_end", "step", "history", "monitors", "record_every"}
    for key in record:
        if key not in known:
            raise InputError(f"unknown config key {key!r}", key)
    t_end = _number(record, "t_end", 100.0 if args.t_end is None else args.t_end)
    step = _number(record, "step")
    monitors = record.get("monitors", {})
    if not isinstance(monitors, dict):
        raise InputError("monitors must be an object", "monitors")
    for key, v in monitors.items():
        if key not in ("invariants", "a_functional", "liminf") or not isinstance(v, bool):
            raise InputError(f"monitors.{key} must be one of invariants/a_functional/liminf with a boolean",
                             f"monitors.{key}")
    every = record.get("record_every", 1)
    if isinstance(every, bool) or not isinstance(every, int) or every < 1:
        raise InputError("record_every must be a positive integer", "record_every")
    return SimulationConfig(t_end=t_end, step=step, history=_history(record.get("history"), params),
                            monitors=Monitors(**monitors), record_every=every)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_equilibrium(args) -> int:
    params = _params(args)
    eq = find_equilibrium(params)
    data = {"params": params.to_dict(), "r0": params.r0, **eq.to_dict()}
    _write_json(_out_dir(args) / "equilibrium.json", data)
    print(json.dumps(data, sort_keys=True))
    return EXIT_OK


def cmd_spectrum(args) -> int:
    params = _params(args)
    c = spectrum.classify(params)
    data = {"params": params.to_dict(), "class": c.cls.value, "bound": spectrum.root_bound(params)}
    if c.cls is spectrum.StabilityClass.DFE_GLOBALLY_STABLE:
        roots = spectrum.dfe_char_roots(params)
        data.update(roots=[{"re": z.real, "im": z.imag, "residual": 0.0} for z in roots],
                    rightmost={"re": c.rightmost.real, "im": c.rightmost.imag}, n_collocation=0)
    else:
        res = spectrum.rightmost_roots(params, n_collocation=max(c.n_collocation, spectrum.DEFAULT_COLLOCATION))
        data.update(
            roots=[{"re": z.real, "im": z.imag, "residual": r} for z, r in zip(res.roots, res.residuals)],
            rightmost={"re": res.rightmost.real, "im": res.rightmost.imag},
            n_collocation=res.method_order,
            crossing_frequencies=spectrum.crossing_frequencies(params, find_equilibrium(params)),
        )
    _write_json(_out_dir(args) / "spectrum.json", data)
    r = data["rightmost"]
    print(f"{data['class']}: rightmost root {r['re']:.6g}{r['im']:+.6g}i")
    return EXIT_OK


def cmd_simulate(args) -> int:
    params = _params(args)
    config = _sim_config(args, params)
    traj = simulate(params, config)
    report = monitor_invariants(params, traj)
    out = _out_dir(args)
    cols = {"t": traj.times, "S": traj.S, "I": traj.I, "R": traj.R}
    for key in ("A", "A_ref", "A_rel_error", "I_identity", "I_rel_error"):
        if key in traj.monitor_log:
            cols[key] = traj.monitor_log[key]
    if args.format == "json":
        _write_json(out / "trajectory.json", {k: np.asarray(v).tolist() for k, v in cols.items()})
    else:
        with open(out / "trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in zip(*cols.values()):
                w.writerow(repr(float(v)) for v in row)
    summary = {"params": params.to_dict(), "step": traj.step, "t_end": float(traj.times[-1]),
               "final": {"S": traj.final.S, "I": traj.final.I}, "violations": report.to_dict()}
    _write_json(out / "summary.json", summary)
    print(f"simulated to t={traj.times[-1]:g} with h={traj.step:.6g}: final S={traj.final.S:.6g} "
          f"I={traj.final.I:.6g}, liminf={report.liminf}")
    return EXIT_OK


def cmd_chart(args) -> int:
    name = args.name or args.preset
    if args.config and name:
        raise InputError("give either a preset name or --config, not both", "config")
    if args.config:
        record = _load_json(args.config, "--config")
        if not isinstance(record, dict):
            raise InputError("--config must be a JSON object", "config")
        try:
            spec = chartscan.ScanSpec.from_dict(record)
        except ParameterError as exc:
            raise InputError(str(exc), exc.key) from None
    elif name:
        if name not in chartscan.PRESETS:
            raise InputError(f"unknown chart preset {name!r}; available: {sorted(chartscan.PRESETS)}", "preset")
        spec = chartscan.preset(name)
    else:
        raise InputError("chart needs a preset name or --config", "preset")
    if args.resolution:
        spec = replace(spec, resolution=tuple(args.resolution))
    try:
        threads = chartscan.resolve_threads(args.threads)
    except ParameterError as exc:
        raise InputError(str(exc), exc.key) from None
    grid = chartscan.scan(spec, threads=threads)
    if not args.no_refine:
        grid = chartscan.refine_boundary(grid, threads=threads)
    out = _out_dir(args)
    stem = spec.name or "chart"
    formats = [args.format] if args.format else ["csv", "svg"]
    for fmt in formats:
        if fmt == "json":
            continue
        (out / f"{stem}.{fmt}").write_text(chartscan.render(grid, fmt))
    _write_json(out / f"{stem}_summary.json", chartscan.summary(grid))
    counts = grid.counts()
    print(f"{stem}: {spec.resolution[0]}x{spec.resolution[1]} cells, "
          + ", ".join(f"{k}={v}" for k, v in counts.items() if v) + f", {len(grid.boundaries)} boundary points")
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify.run_properties(args.seed)
    out = _out_dir(args)
    _write_json(out / "verify_report.json", report)
    for prop in report["properties"]:
        status = "PASS" if prop["passed"] else "FAIL"
        print(f"{status} {prop['name']} ({prop['cases']} cases, worst {prop['worst']:.3e})")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="parameter JSON (file path or inline object)")
    common.add_argument("--preset", help="named parameter set (or chart preset for 'chart')")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, default=verify.DEFAULT_SEED, help="seed for randomized suites")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default: ${chartscan.THREADS_ENV} or CPU count)")
    common.add_argument("--format", choices=("csv", "json", "svg"), default=None, help="output format")
    common.add_argument("--config", help="run configuration JSON (file path or inline object)")

    parser = argparse.ArgumentParser(prog="immunoboost",
                                     description="SIRS model with waning and boosting of immunity.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("equilibrium", parents=[common], help="steady state for a parameter set")
    sub.add_parser("spectrum", parents=[common], help="rightmost characteristic roots and stability class")
    p = sub.add_parser("simulate", parents=[common], help="integrate the delay system")
    p.add_argument("--t-end", type=float, default=None, help="final time in years (default 100)")
    p = sub.add_parser("chart", parents=[common], help="two-parameter stability chart")
    p.add_argument("name", nargs="?", help="chart preset (" + ", ".join(sorted(chartscan.PRESETS)) + ")")
    p.add_argument("--resolution", type=int, nargs=2, metavar=("NX", "NY"))
    p.add_argument("--no-refine", action="store_true", help="skip boundary refinement")
    sub.add_parser("verify", parents=[common], help="run the randomized property suite")
    return parser


COMMANDS = {
    "equilibrium": cmd_equilibrium,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
    "chart": cmd_chart,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(json.dumps({"error": str(exc), "key": exc.key}), file=sys.stderr)
        return EXIT_INPUT
    except (EquilibriumError, spectrum.SpectrumError) as exc:
        payload = {k: _jsonable(v) for k, v in exc.payload.items()}
        print(json.dumps({"error": str(exc), "payload": payload}), file=sys.stderr)
        return EXIT_NUMERIC
    except SimulationError as exc:
        print(json.dumps({"error": str(exc), "payload": {"t": exc.t, "state": exc.state}}), file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, SpanError) as exc:
        print(json.dumps({"error": str(exc), "key": None}), file=sys.stderr)
        return EXIT_INPUT


def _jsonable(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


if __name__ == "__main__":
    sys.exit(main())
