"""Command-line front end: simulate | fit | gradcheck | landscape.

Settings come from a flat JSON document (``--config``, either a path or the
name of a bundled experiment such as ``table1``) overridden by flags. Exit
codes: 0 success, 1 not converged / check failed, 2 usage or configuration
error, 3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from .dde import TimeGrid, solve_forward
from .errors import BlowUpError, ConfigurationError, DelayLearnError, FitError, OracleError
from .loss import DataSet, data_node_indices, sample_dataset
from .models import MODELS, get_model
from .optimize import FitConfig, fit, scan_landscape
from .oracle import gradcheck

log = logging.getLogger("delaylearn")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_BLOWUP = 0, 1, 2, 3

DEFAULT_DT = 0.01

_COMMON = {"model", "theta", "tau", "t_end", "dt", "out", "seed"}
_SYNTH = {"data", "true_theta", "true_tau", "x0", "sample_every"}
ALLOWED_KEYS = {
    "simulate": _COMMON | {"x0", "sample_every"},
    "fit": _COMMON | _SYNTH | {
        "max_epochs", "loss_threshold", "tau_min", "tau_max", "lr", "beta1", "beta2", "epsilon",
    },
    "gradcheck": _COMMON | _SYNTH | {"fd_step", "tol", "rel_floor"},
    "landscape": _COMMON | _SYNTH | {"scan_theta1", "scan_theta2", "scan_tau"},
}


class UsageError(DelayLearnError):
    pass


# ---------------------------------------------------------------------------
# file formats


def format_float(v: float) -> str:
    """17 significant digits, enough to round-trip any double; inf as 'inf'."""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.17g" % v


def atomic_write(path: str, text: str) -> None:
    if path in ("-", ""):
        sys.stdout.write(text)
        return
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_csv(times, states) -> str:
    states = np.asarray(states, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i}" for i in range(states.shape[1])])
    for t, row in zip(times, states):
        w.writerow([format_float(t)] + [format_float(v) for v in row])
    return buf.getvalue()


def read_trajectory_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of trajectory_csv: (times, states) exactly as written."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigurationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    expected = ["t"] + [f"x{i}" for i in range(len(header) - 1)]
    if len(header) < 2 or header != expected:
        raise ConfigurationError(f"{path}: header must be {','.join(expected)}, got {rows[0]}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigurationError(f"{path}: ragged rows")
    return data[:, 0], data[:, 1:]


def result_json(doc: dict) -> str:
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return format_float(o)
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(doc), indent=2) + "\n"


# ---------------------------------------------------------------------------
# configuration


def load_config(ref: str | None) -> dict:
    if ref is None:
        return {}
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        bundled = resources.files("delaylearn") / "configs" / f"{ref}.json"
        if not bundled.is_file():
            raise UsageError(f"config {ref!r} is neither a file nor a bundled experiment")
        text = bundled.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {ref!r}: {exc}") from None
    if not isinstance(cfg, dict) or any(isinstance(v, dict) for v in cfg.values()):
        raise UsageError(f"config {ref!r} must be a flat key-value object")
    return cfg


def bundled_configs() -> list[str]:
    root = resources.files("delaylearn") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _floats(value, key: str) -> list[float] | str:
    if isinstance(value, str):
        if value.strip() == "uniform":
            return "uniform"
        parts = [p for p in value.replace(" ", "").split(",") if p]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        parts = [value]
    try:
        return [float(p) for p in parts]
    except (TypeError, ValueError):
        raise UsageError(f"{key}: expected a number or comma-separated list, got {value!r}") from None


def _float(cfg: dict, key: str, default=None) -> float | None:
    if key not in cfg:
        return default
    vals = _floats(cfg[key], key)
    if vals == "uniform" or len(vals) != 1:
        raise UsageError(f"{key}: expected a single number, got {cfg[key]!r}")
    return vals[0]


def _int(cfg: dict, key: str, default=None) -> int | None:
    v = _float(cfg, key, None)
    if v is None:
        return default
    if v != int(v):
        raise UsageError(f"{key}: expected an integer, got {cfg[key]!r}")
    return int(v)


def _vector(cfg: dict, key: str, allow_uniform: bool = False):
    if key not in cfg:
        return None
    vals = _floats(cfg[key], key)
    if vals == "uniform" and not allow_uniform:
        raise UsageError(f"{key}: 'uniform' is only valid as a fit initialization")
    return vals


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise UsageError(f"missing required setting(s): {', '.join(missing)}")


def _parse_range(spec, key: str) -> np.ndarray:
    """'start:stop:num' (inclusive endpoints) or an explicit list of values."""
    if isinstance(spec, str) and ":" in spec:
        parts = spec.split(":")
        try:
            start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
        except (ValueError, IndexError):
            raise UsageError(f"{key}: expected start:stop:num, got {spec!r}") from None
        if len(parts) != 3 or num < 1:
            raise UsageError(f"{key}: expected start:stop:num with num >= 1, got {spec!r}")
        return np.linspace(start, stop, num)
    vals = _floats(spec, key)
    if vals == "uniform" or not vals:
        raise UsageError(f"{key}: bad scan values {spec!r}")
    return np.asarray(vals)


def merge_config(command: str, args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    flags = {
        "model": args.model, "theta": args.theta, "tau": args.tau, "x0": args.x0,
        "t_end": args.t_end, "dt": args.dt, "data": args.data, "out": args.out,
        "seed": args.seed,
    }
    for name in ("sample_every", "max_epochs", "loss_threshold", "tau_min", "tau_max", "lr",
                 "beta1", "beta2", "epsilon", "true_theta", "true_tau", "fd_step", "tol",
                 "rel_floor"):
        if hasattr(args, name):
            flags[name] = getattr(args, name)
    for item in getattr(args, "scan", None) or []:
        name, sep, spec = item.partition("=")
        if not sep:
            raise UsageError(f"--scan expects NAME=START:STOP:NUM, got {item!r}")
        flags[f"scan_{name.strip()}"] = spec
    cfg.update({k: v for k, v in flags.items() if v is not None})
    unknown = sorted(set(cfg) - ALLOWED_KEYS[command])
    if unknown:
        raise UsageError(f"unknown setting(s) for {command}: {', '.join(unknown)}")
    return cfg


def _model(cfg):
    _require(cfg, "model")
    try:
        return get_model(str(cfg["model"]))
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _check_paths(cfg: dict) -> None:
    if "data" in cfg and not Path(cfg["data"]).is_file():
        raise UsageError(f"data file {cfg['data']!r} does not exist")
    out = cfg.get("out", "-")
    if out not in ("-", "") and not Path(out).resolve().parent.is_dir():
        raise UsageError(f"output directory for {out!r} does not exist")


def _dataset(cfg: dict, model) -> DataSet:
    """Data from the CSV file, or synthesized from true_theta/true_tau/x0."""
    synth = [k for k in ("true_theta", "true_tau", "x0", "sample_every") if k in cfg]
    if "data" in cfg:
        if synth:
            raise UsageError(f"give either data or {', '.join(synth)}, not both")
        times, states = read_trajectory_csv(cfg["data"])
        if states.shape[1] != model.dim_state:
            raise ConfigurationError(
                f"data has {states.shape[1]} state columns, model expects {model.dim_state}"
            )
        return DataSet(times, states)
    _require(cfg, "true_theta", "true_tau", "x0", "t_end")
    grid = TimeGrid(_float(cfg, "t_end"), _float(cfg, "dt", DEFAULT_DT))
    return sample_dataset(model, _vector(cfg, "true_theta"), _float(cfg, "true_tau"),
                          _vector(cfg, "x0"), grid, _int(cfg, "sample_every", 1))


def _grid_for(cfg: dict, data: DataSet) -> TimeGrid:
    grid = TimeGrid(_float(cfg, "t_end", float(data.times[-1])), _float(cfg, "dt", DEFAULT_DT))
    data_node_indices(grid, data.times)  # names the first misaligned t_j
    return grid


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: dict) -> int:
    model = _model(cfg)
    _require(cfg, "theta", "tau", "x0", "t_end")
    grid = TimeGrid(_float(cfg, "t_end"), _float(cfg, "dt", DEFAULT_DT))
    every = _int(cfg, "sample_every", 1)
    if every < 1:
        raise UsageError(f"sample_every must be >= 1, got {every}")
    _check_paths(cfg)
    traj = solve_forward(model, _vector(cfg, "theta"), _float(cfg, "tau"), _vector(cfg, "x0"), grid)
    atomic_write(cfg.get("out", "-"), trajectory_csv(traj.times[::every], traj.states[::every]))
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    model = _model(cfg)
    _check_paths(cfg)
    data = _dataset(cfg, model)
    grid = _grid_for(cfg, data)
    theta = _vector(cfg, "theta", allow_uniform=True)
    tau = cfg.get("tau")
    tau = None if tau is None or (isinstance(tau, str) and tau.strip() == "uniform") else _float(cfg, "tau")
    bounds = None
    if "tau_min" in cfg or "tau_max" in cfg:
        bounds = (_float(cfg, "tau_min", 2.0 * grid.dt), _float(cfg, "tau_max", grid.t_end / 2.0))
    config = FitConfig(
        grid=grid,
        theta_init=None if theta in (None, "uniform") else theta,
        tau_init=tau,
        max_epochs=_int(cfg, "max_epochs", 500),
        loss_threshold=_float(cfg, "loss_threshold", 0.01),
        tau_bounds=bounds,
        lr=_float(cfg, "lr", 0.05),
        beta1=_float(cfg, "beta1", 0.9),
        beta2=_float(cfg, "beta2", 0.999),
        epsilon=_float(cfg, "epsilon", 1e-8),
    )
    result = fit(model, data, config, seed=_int(cfg, "seed", 0))
    atomic_write(cfg.get("out", "-"), result_json(result.to_dict()))
    log.info("fit: converged=%s after %d epochs, loss=%.6g", result.converged,
             result.epochs_used, result.final_loss)
    return EXIT_OK if result.converged else EXIT_FAILED


def cmd_gradcheck(cfg: dict) -> int:
    model = _model(cfg)
    _require(cfg, "theta", "tau")
    _check_paths(cfg)
    data = _dataset(cfg, model)
    grid = _grid_for(cfg, data)
    report = gradcheck(model, _vector(cfg, "theta"), _float(cfg, "tau"), data, grid,
                       fd_step=_float(cfg, "fd_step", 1e-5), tol=_float(cfg, "tol", 1e-2),
                       floor=_float(cfg, "rel_floor", 1e-12))
    atomic_write(cfg.get("out", "-"), result_json(report.to_dict()))
    if not report.passed:
        log.warning("gradcheck failed on: %s", ", ".join(report.failing))
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_landscape(cfg: dict) -> int:
    model = _model(cfg)
    axes = {k[len("scan_"):]: _parse_range(cfg[k], k) for k in sorted(cfg) if k.startswith("scan_")}
    # theta1 before theta2 before tau
    axes = {k: axes[k] for k in sorted(axes, key=lambda n: (n == "tau", n))}
    if not axes:
        raise UsageError("landscape needs at least one scan_<coordinate> setting")
    frozen = {}
    theta = _vector(cfg, "theta")
    if theta is not None:
        frozen.update({f"theta{i + 1}": v for i, v in enumerate(theta)})
    if "tau" in cfg:
        frozen["tau"] = _float(cfg, "tau")
    _check_paths(cfg)
    data = _dataset(cfg, model)
    grid = _grid_for(cfg, data)
    scan = scan_landscape(model, data, axes, frozen, grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(scan.names) + ["loss"])
    for row in scan.rows():
        w.writerow([format_float(v) for v in row])
    atomic_write(cfg.get("out", "-"), buf.getvalue())
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "gradcheck": cmd_gradcheck,
    "landscape": cmd_landscape,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delaylearn",
        description="Learn the delay and parameters of a delay differential equation from data.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON settings file or bundled experiment name")
        p.add_argument("--model", choices=sorted(MODELS))
        p.add_argument("--theta", help="comma-separated parameters")
        p.add_argument("--tau")
        p.add_argument("--x0", help="comma-separated initial state")
        p.add_argument("--t-end", dest="t_end", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--data", help="trajectory CSV (t,x0,...)")
        p.add_argument("--out", help="output path ('-' for stdout)")
        p.add_argument("--seed", type=int)
        p.add_argument("--sample-every", dest="sample_every", type=int)

    def synth(p):
        p.add_argument("--true-theta", dest="true_theta",
                       help="generate data from these parameters instead of --data")
        p.add_argument("--true-tau", dest="true_tau", type=float)

    p = sub.add_parser("simulate", help="integrate the model and write a trajectory CSV")
    common(p)

    p = sub.add_parser("fit", help="learn theta and tau from data")
    common(p)
    synth(p)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--loss-threshold", dest="loss_threshold", type=float)
    p.add_argument("--tau-min", dest="tau_min", type=float)
    p.add_argument("--tau-max", dest="tau_max", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--epsilon", type=float)

    p = sub.add_parser("gradcheck", help="compare adjoint and finite-difference gradients")
    common(p)
    synth(p)
    p.add_argument("--fd-step", dest="fd_step", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--rel-floor", dest="rel_floor", type=float,
                   help="absolute floor of the relative-error denominator")

    p = sub.add_parser("landscape", help="evaluate the loss on a parameter grid")
    common(p)
    synth(p)
    p.add_argument("--scan", action="append", metavar="NAME=START:STOP:NUM",
                   help="scan coordinate theta1, theta2 or tau; repeatable")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = merge_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigurationError) as exc:
        print(f"delaylearn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlowUpError as exc:
        step = "" if exc.step is None else f" (step {exc.step})"
        print(f"delaylearn {args.command}: blow-up{step}: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (FitError, OracleError) as exc:
        print(f"delaylearn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except DelayLearnError as exc:
        print(f"delaylearn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
