"""Command-line experiment runner.

Subcommands:

    run <config.json>              one simulation; diagnostics, snapshots, manifest
    sweep <config.json> [--jobs N] one run per sweep step size; convergence table + plot
    plot <csv>... -o <out.svg>     render diagnostics or convergence CSVs

Exit codes: 0 success, 2 configuration or input errors, 3 an expected
detection (blow-up or pinch-off) ended the run, 4 solver failure.  A
manifest.json describing the outcome is written to the output directory on
every path, including failures.  The output directory is resolved against the
GEOMFLOW_OUTPUT_ROOT environment variable when set, else the working
directory.  All artifact writes go through a temp-file-then-rename so
concurrent sweep workers never expose half-written files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    ExperimentConfig,
    build_initial_shape,
    exact_reference,
    load_config,
)
from .curve import save_curve_csv
from .curve_flows import SchemeConfig, evolve
from .errors import (
    BlowupDetected,
    ConfigError,
    DegenerateEdgeError,
    DegenerateTriangleError,
    GeomFlowError,
    MeshTopologyError,
    NoConvergenceError,
    NonPositiveCurvatureError,
    NonSimplePolygonError,
    PinchOffDetected,
    SingularMatrixError,
)
from .metrics import (
    convergence_table,
    hausdorff_distance,
    manifold_distance_2d,
    manifold_distance_3d,
    normalized_series,
    relative_change_series,
    table_from_csv,
    table_to_csv,
)
from .surface import save_off
from .surface_flows import evolve_3d
from .svgplot import Series, line_plot, loglog_plot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DETECTED = 3
EXIT_SOLVER = 4

OUTPUT_ROOT_ENV = "GEOMFLOW_OUTPUT_ROOT"

_SOLVER_ERRORS = (SingularMatrixError, NoConvergenceError, NonPositiveCurvatureError,
                  DegenerateEdgeError, DegenerateTriangleError, MeshTopologyError,
                  NonSimplePolygonError)


def _output_dir(cfg: Optional[ExperimentConfig]) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    if cfg is not None and cfg.output_dir:
        root = root / cfg.output_dir
    root.mkdir(parents=True, exist_ok=True)
    return root


def _atomic_write(path: Path, writer: Callable[[Path], None]) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_text(path: Path, text: str) -> None:
    _atomic_write(path, lambda tmp: tmp.write_text(text))


class _Manifest:
    """Crash-only run report; written on every exit path."""

    def __init__(self, command: str, config_path: str):
        self.data = {
            "command": command,
            "config_path": config_path,
            "config": None,
            "status": "started",
            "detection": None,
            "error": None,
            "outputs": [],
            "wall_time_seconds": None,
        }
        self.started = time.perf_counter()

    def write(self, directory: Path):
        self.data["wall_time_seconds"] = round(time.perf_counter() - self.started, 3)
        _atomic_text(directory / "manifest.json",
                     json.dumps(self.data, indent=2, default=str) + "\n")

    def add_output(self, name: str):
        self.data["outputs"].append(name)


def _save_state(state, path: Path) -> None:
    if hasattr(state, "triangles"):
        _atomic_write(path, lambda tmp: save_off(state, tmp))
    else:
        _atomic_write(path, lambda tmp: save_curve_csv(state, tmp))


def _simulate(cfg: ExperimentConfig, scheme: SchemeConfig, initial=None):
    """Dispatch to the planar or surface driver; returns the evolve result."""
    if initial is None:
        initial = build_initial_shape(cfg)
    if cfg.is_surface:
        return evolve_3d(cfg.flow, initial, scheme)
    return evolve(cfg.flow, initial, scheme)


def _write_run_outputs(manifest: _Manifest, out: Path, diagnostics, snapshots,
                       final=None, prefix: str = "") -> None:
    ext = ".off" if (snapshots and hasattr(snapshots[0], "triangles")) \
        or (final is not None and hasattr(final, "triangles")) else ".csv"
    name = f"{prefix}diagnostics.csv"
    _atomic_write(out / name, diagnostics.to_csv)
    manifest.add_output(name)
    for i, snap in enumerate(snapshots):
        name = f"{prefix}snapshot_{i:03d}{ext}"
        _save_state(snap, out / name)
        manifest.add_output(name)
    if final is not None:
        name = f"{prefix}final{ext}"
        _save_state(final, out / name)
        manifest.add_output(name)


def cmd_run(args) -> int:
    manifest = _Manifest("run", args.config)
    cfg = None
    try:
        cfg = load_config(args.config)
        manifest.data["config"] = cfg.raw
        out = _output_dir(cfg)
        result = _simulate(cfg, cfg.scheme)
    except ConfigError as exc:
        manifest.data["status"] = "config_error"
        manifest.data["error"] = f"{exc.field}: {exc.message}"
        manifest.write(_output_dir(cfg))
        print(f"error: config field {exc.field}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowupDetected, PinchOffDetected) as exc:
        kind = "blowup" if isinstance(exc, BlowupDetected) else "pinch_off"
        manifest.data["status"] = kind
        manifest.data["detection"] = {"time": exc.time, "reason": str(exc.cause or exc)}
        out = _output_dir(cfg)
        _write_run_outputs(manifest, out, exc.diagnostics, [], final=exc.state)
        manifest.write(out)
        print(f"{kind} detected at t={exc.time:.6g}", file=sys.stderr)
        return EXIT_DETECTED
    except _SOLVER_ERRORS as exc:
        manifest.data["status"] = "solver_error"
        manifest.data["error"] = str(exc)
        manifest.write(_output_dir(cfg))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    manifest.data["status"] = "completed"
    _write_run_outputs(manifest, out, result.diagnostics, result.snapshots,
                       final=result.final)
    manifest.write(out)
    return EXIT_OK


def _sweep_reference(cfg: ExperimentConfig):
    sweep = cfg.sweep
    if sweep.reference == "exact":
        return exact_reference(cfg)
    k_ref = 3 if cfg.is_surface else 4
    scheme = SchemeConfig(k=k_ref, tau=sweep.reference_tau, T=cfg.scheme.T,
                          predictor="cascade",
                          bootstrap_fine_step=sweep.reference_bootstrap_fine_step)
    return _simulate(cfg, scheme).final


def _sweep_error(cfg: ExperimentConfig, final, reference) -> float:
    if cfg.sweep.metric == "hausdorff":
        return hausdorff_distance(final, reference)
    if cfg.is_surface:
        return manifold_distance_3d(final, reference, seed=cfg.seed)[0]
    return manifold_distance_2d(final, reference)


def cmd_sweep(args) -> int:
    manifest = _Manifest("sweep", args.config)
    cfg = None
    try:
        cfg = load_config(args.config)
        manifest.data["config"] = cfg.raw
        if cfg.sweep is None:
            raise ConfigError("sweep", "missing sweep section")
    except ConfigError as exc:
        manifest.data["status"] = "config_error"
        manifest.data["error"] = f"{exc.field}: {exc.message}"
        manifest.write(_output_dir(cfg))
        print(f"error: config field {exc.field}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG

    out = _output_dir(cfg)
    base = cfg.scheme

    def one_run(tau: float):
        scheme = SchemeConfig(k=base.k, tau=tau, T=base.T, predictor=base.predictor)
        return _simulate(cfg, scheme)

    taus = list(cfg.sweep.taus)
    results: List[Optional[object]] = [None] * len(taus)
    failures: List[Tuple[float, BaseException]] = []
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        futures = {pool.submit(one_run, tau): i for i, tau in enumerate(taus)}
        for future, i in futures.items():
            try:
                results[i] = future.result()
            except (BlowupDetected, PinchOffDetected, *_SOLVER_ERRORS) as exc:
                failures.append((taus[i], exc))

    exit_code = EXIT_OK
    if failures:
        tau_bad, exc = failures[0]
        detected = isinstance(exc, (BlowupDetected, PinchOffDetected))
        manifest.data["status"] = "partial"
        manifest.data["error"] = f"run at tau={tau_bad:.6g} failed: {exc}"
        exit_code = EXIT_DETECTED if detected else EXIT_SOLVER
    entries = []
    try:
        if not failures:
            reference = _sweep_reference(cfg)
            for tau, result in zip(taus, results):
                diag_name = f"diagnostics_tau_{tau:.10g}.csv"
                _atomic_write(out / diag_name, result.diagnostics.to_csv)
                manifest.add_output(diag_name)
                entries.append((tau, _sweep_error(cfg, result.final, reference)))
            rows = convergence_table(entries)
            _atomic_write(out / "table.csv", lambda tmp: table_to_csv(rows, tmp))
            manifest.add_output("table.csv")
            svg = loglog_plot([Series(f"k={base.k}", [r.tau for r in rows],
                                      [r.error for r in rows])],
                              title="convergence", xlabel="tau", ylabel="error",
                              slope_guides=(1, 2, 3, 4))
            _atomic_text(out / "table.svg", svg)
            manifest.add_output("table.svg")
            manifest.data["status"] = "completed"
    except (BlowupDetected, PinchOffDetected) as exc:
        manifest.data["status"] = "partial"
        manifest.data["error"] = f"reference run failed: {exc}"
        exit_code = EXIT_DETECTED
    except _SOLVER_ERRORS as exc:
        manifest.data["status"] = "partial"
        manifest.data["error"] = f"reference run failed: {exc}"
        exit_code = EXIT_SOLVER
    manifest.write(out)
    if manifest.data["error"]:
        print(f"error: {manifest.data['error']}", file=sys.stderr)
    return exit_code


_FIELD_STYLES = {
    # column -> (transform over the values, ylabel, horizontal reference lines)
    "Psi": (lambda v: v, "Psi", (1.0,)),
    "A": (relative_change_series, "relative area change", (0.0,)),
    "L": (normalized_series, "L / L(0)", ()),
    "V": (relative_change_series, "relative volume change", (0.0,)),
    "S": (normalized_series, "S / S(0)", ()),
    "r_h": (lambda v: v, "r_h", ()),
    "r_a": (lambda v: v, "r_a", ()),
    "newton_iters": (lambda v: v, "Newton iterations", ()),
}


def _read_csv_columns(path: Path):
    with open(path) as fh:
        header = fh.readline().strip()
    if not header:
        raise ValueError(f"{path}: empty file")
    names = header.split(",")
    data = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    return names, data


def cmd_plot(args) -> int:
    try:
        first_header = None
        series = []
        for path in args.csv:
            path = Path(path)
            names, data = _read_csv_columns(path)
            if first_header is None:
                first_header = names
            elif names != first_header:
                raise ValueError(f"{path}: header differs from first input")
            if names == ["tau", "error", "order"]:
                rows = table_from_csv(path)
                series.append(Series(path.stem, [r.tau for r in rows],
                                     [r.error for r in rows]))
                continue
            if "t" not in names:
                raise ValueError(f"{path}: unrecognized CSV header {names}")
            field = args.field or ("Psi" if "Psi" in names else "V")
            if field not in names or field not in _FIELD_STYLES:
                raise ValueError(f"{path}: no plottable column {field!r}")
            transform, _, _ = _FIELD_STYLES[field]
            series.append(Series(path.stem, np.asarray(data["t"], dtype=float),
                                 transform(np.asarray(data[field], dtype=float))))
        if first_header == ["tau", "error", "order"]:
            svg = loglog_plot(series, title="convergence", xlabel="tau",
                              ylabel="error", slope_guides=(1, 2, 3, 4))
        else:
            field = args.field or ("Psi" if "Psi" in first_header else "V")
            _, ylabel, hlines = _FIELD_STYLES[field]
            svg = line_plot(series, title=field, xlabel="t", ylabel=ylabel,
                            hlines=hlines)
        out = Path(args.output)
        if out.parent != Path(""):
            out.parent.mkdir(parents=True, exist_ok=True)
        _atomic_text(out, svg)
    except (OSError, ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="geomflow",
        description="Curvature-flow simulations for closed curves and surfaces.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation from a JSON config")
    p_run.add_argument("config", help="path to the JSON configuration")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="convergence study over the sweep steps")
    p_sweep.add_argument("config", help="path to the JSON configuration")
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="concurrent runs (default 1)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render CSV outputs as SVG")
    p_plot.add_argument("csv", nargs="+", help="diagnostics or table CSV files")
    p_plot.add_argument("-o", "--output", required=True, help="output SVG path")
    p_plot.add_argument("--field", default=None,
                        help="diagnostics column to plot (default Psi or V)")
    p_plot.set_defaults(func=cmd_plot)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GeomFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
