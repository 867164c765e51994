"""JSON experiment configuration: parsing, validation, shape construction.

The schema is strict: unknown keys anywhere in the document are rejected, and
every validation error names the offending field by its dotted path (for
example "scheme.tau").  This catches typos that would otherwise silently
change a convergence study.

Top-level sections: "flow", "shape", "scheme", optional "output", optional
"sweep", optional "seed".  The flow kind decides whether the run is planar
(csf, apcsf, gmcf, wf) or a surface evolution (mcf, sdf); shape names are
checked against the matching dimension and scheme orders above 3 are rejected
for surfaces.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

from .curve import CurveState, generate_curve
from .curve_flows import FLOW_KINDS, FlowSpec, SchemeConfig
from .errors import ConfigError
from .surface import SurfaceState, generate_surface
from .surface_flows import MAX_ORDER_3D, SURFACE_FLOW_KINDS, SurfaceFlowSpec

__all__ = ["ExperimentConfig", "SweepConfig", "load_config", "config_from_dict",
           "build_initial_shape", "exact_reference"]

_CURVE_SHAPES = {
    "circle": ("n", "radius"),
    "ellipse": ("n", "a", "b"),
    "flower": ("n", "petals", "base", "amplitude"),
}
_SURFACE_SHAPES = {
    "icosphere": ("radius", "subdivisions"),
    "ellipsoid": ("a", "b", "c", "subdivisions"),
    "dumbbell": ("kind", "n_theta", "n_phi"),
    "cuboid": ("dims", "divisions"),
}

#: (flow kind, shape name) pairs with a closed-form solution usable as a
#: sweep reference.
_EXACT_PAIRS = {
    ("csf", "circle"), ("apcsf", "circle"), ("gmcf", "circle"), ("wf", "circle"),
    ("mcf", "icosphere"), ("sdf", "icosphere"),
}


class _Section:
    """Dict wrapper that tracks consumed keys and reports dotted paths."""

    def __init__(self, data: Dict[str, Any], path: str = ""):
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", "expected an object")
        self.data = data
        self.path = path
        self.seen = set()

    def _field(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key: str, kind, default=None, required: bool = False):
        self.seen.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(self._field(key), "missing required field")
            return default
        value = self.data[key]
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(self._field(key), f"expected a number, got {value!r}")
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(self._field(key), f"expected an integer, got {value!r}")
            return value
        if kind is str:
            if not isinstance(value, str):
                raise ConfigError(self._field(key), f"expected a string, got {value!r}")
            return value
        if kind is list:
            if not isinstance(value, list):
                raise ConfigError(self._field(key), f"expected a list, got {value!r}")
            return value
        if kind is dict:
            if not isinstance(value, dict):
                raise ConfigError(self._field(key), f"expected an object, got {value!r}")
            return value
        raise AssertionError(f"unhandled kind {kind}")

    def subsection(self, key: str, required: bool = False) -> Optional["_Section"]:
        raw = self.take(key, dict, required=required)
        if raw is None:
            return None
        return _Section(raw, self._field(key))

    def finish(self):
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ConfigError(self._field(unknown[0]), "unknown field")


def _number_list(section: _Section, key: str, required: bool = False):
    raw = section.take(key, list, required=required)
    if raw is None:
        return None
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{section._field(key)}[{i}]", f"expected a number, got {v!r}")
        out.append(float(v))
    return out


@dataclass(frozen=True)
class SweepConfig:
    """Convergence-study settings: step ladder, reference policy, metric."""

    taus: Tuple[float, ...]
    reference: str = "finest"
    reference_tau: Optional[float] = None
    reference_bootstrap_fine_step: Optional[float] = None
    metric: str = "manifold"


@dataclass
class ExperimentConfig:
    flow: Union[FlowSpec, SurfaceFlowSpec]
    shape_name: str
    shape_params: Dict[str, Any]
    scheme: SchemeConfig
    output_dir: Optional[str] = None
    sweep: Optional[SweepConfig] = None
    seed: int = 0
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_surface(self) -> bool:
        return isinstance(self.flow, SurfaceFlowSpec)


def _parse_flow(section: _Section) -> Union[FlowSpec, SurfaceFlowSpec]:
    kind = section.take("kind", str, required=True)
    alpha = section.take("alpha", float)
    beta = section.take("beta", float)
    section.finish()
    try:
        if kind in SURFACE_FLOW_KINDS:
            if alpha is not None or beta is not None:
                raise ValueError("alpha/beta are not meaningful for surface flows")
            return SurfaceFlowSpec(kind)
        return FlowSpec(kind, alpha, beta)
    except ValueError as exc:
        raise ConfigError(section.path or "flow", str(exc)) from exc


def _parse_shape(section: _Section, is_surface: bool) -> Tuple[str, Dict[str, Any]]:
    name = section.take("name", str, required=True)
    table = _SURFACE_SHAPES if is_surface else _CURVE_SHAPES
    if name not in table:
        dim = "surface" if is_surface else "curve"
        raise ConfigError(section._field("name"),
                          f"unknown {dim} shape {name!r}; expected one of {sorted(table)}")
    params: Dict[str, Any] = {}
    for key in table[name]:
        if key in ("n", "subdivisions", "petals", "n_theta", "n_phi"):
            value = section.take(key, int)
        elif key == "kind":
            value = section.take(key, str)
        elif key in ("dims", "divisions"):
            raw = _number_list(section, key)
            if raw is not None:
                if len(raw) != 3:
                    raise ConfigError(section._field(key), "expected three values")
                value = tuple(int(v) for v in raw) if key == "divisions" else tuple(raw)
            else:
                value = None
        else:
            value = section.take(key, float)
        if value is not None:
            params[key] = value
    section.finish()
    return name, params


def _parse_scheme(section: _Section, snapshot_times, is_surface: bool) -> SchemeConfig:
    k = section.take("k", int, required=True)
    tau = section.take("tau", float, required=True)
    horizon = section.take("T", float, required=True)
    predictor = section.take("predictor", str, default="cascade")
    fine = section.take("bootstrap_fine_step", float)
    section.finish()
    if is_surface and k > MAX_ORDER_3D:
        raise ConfigError(section._field("k"),
                          f"k={k} not supported for surface flows (max {MAX_ORDER_3D})")
    try:
        return SchemeConfig(k=k, tau=tau, T=horizon, predictor=predictor,
                            bootstrap_fine_step=fine,
                            snapshot_times=tuple(snapshot_times))
    except ValueError as exc:
        raise ConfigError(section.path or "scheme", str(exc)) from exc


def _parse_sweep(section: _Section, scheme: SchemeConfig, flow_kind: str,
                 shape_name: str) -> SweepConfig:
    taus = _number_list(section, "taus", required=True)
    reference = section.take("reference", str, default="finest")
    reference_tau = section.take("reference_tau", float)
    reference_fine = section.take("reference_bootstrap_fine_step", float)
    metric = section.take("metric", str, default="manifold")
    section.finish()
    if reference not in ("exact", "finest"):
        raise ConfigError(section._field("reference"),
                          "expected 'exact' or 'finest'")
    if metric not in ("manifold", "hausdorff"):
        raise ConfigError(section._field("metric"),
                          "expected 'manifold' or 'hausdorff'")
    if len(taus) < 2:
        raise ConfigError(section._field("taus"), "need at least two step sizes")
    if any(t2 >= t1 for t1, t2 in zip(taus, taus[1:])):
        raise ConfigError(section._field("taus"), "must be strictly decreasing")
    for i, tau in enumerate(taus):
        steps = scheme.T / tau
        if tau <= 0 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"{section._field('taus')}[{i}]",
                              f"T={scheme.T} is not an integer multiple of {tau}")
    if reference == "exact":
        if (flow_kind, shape_name) not in _EXACT_PAIRS:
            raise ConfigError(section._field("reference"),
                              f"no exact solution for {flow_kind} from {shape_name!r}")
    else:
        if reference_tau is None:
            raise ConfigError(section._field("reference_tau"),
                              "required when reference = 'finest'")
        if reference_tau >= taus[-1]:
            raise ConfigError(section._field("reference_tau"),
                              "must be smaller than the finest sweep step")
    return SweepConfig(taus=tuple(taus), reference=reference,
                       reference_tau=reference_tau,
                       reference_bootstrap_fine_step=reference_fine, metric=metric)


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    root = _Section(dict(data))
    flow = _parse_flow(root.subsection("flow", required=True))
    is_surface = isinstance(flow, SurfaceFlowSpec)
    shape_name, shape_params = _parse_shape(root.subsection("shape", required=True),
                                            is_surface)

    output = root.subsection("output")
    output_dir = None
    snapshot_times = []
    if output is not None:
        output_dir = output.take("directory", str)
        snapshot_times = _number_list(output, "snapshot_times") or []
        output.finish()

    scheme_section = root.subsection("scheme", required=True)
    scheme = _parse_scheme(scheme_section, snapshot_times, is_surface)

    sweep_section = root.subsection("sweep")
    sweep = None
    if sweep_section is not None:
        sweep = _parse_sweep(sweep_section, scheme, flow.kind, shape_name)

    seed = root.take("seed", int, default=0)
    root.finish()
    return ExperimentConfig(flow=flow, shape_name=shape_name, shape_params=shape_params,
                            scheme=scheme, output_dir=output_dir, sweep=sweep,
                            seed=seed, raw=dict(data))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def build_initial_shape(cfg: ExperimentConfig) -> Union[CurveState, SurfaceState]:
    if cfg.is_surface:
        return generate_surface(cfg.shape_name, **cfg.shape_params)
    return generate_curve(cfg.shape_name, **cfg.shape_params)


def _circle_radius_at(flow: FlowSpec, r0: float, t: float) -> float:
    """Closed-form circle radius under the planar flows."""
    if flow.kind == "csf":
        value = r0 * r0 - 2.0 * t
        if value <= 0:
            raise ValueError(f"circle vanishes before t={t}")
        return math.sqrt(value)
    if flow.kind == "apcsf":
        return r0
    if flow.kind == "wf":
        return (r0**4 + 2.0 * t) ** 0.25
    # gmcf: dr/dt = -beta r^(-alpha)
    alpha, beta = flow.alpha, flow.beta
    if alpha == -1.0:
        return r0 * math.exp(-beta * t)
    value = r0 ** (1.0 + alpha) - (1.0 + alpha) * beta * t
    if value <= 0:
        raise ValueError(f"circle vanishes before t={t}")
    return value ** (1.0 / (1.0 + alpha))


def exact_reference(cfg: ExperimentConfig) -> Union[CurveState, SurfaceState]:
    """Closed-form solution at time T, sampled like the initial shape.

    Supports the circle flows and the sphere under mcf (shrinking) and sdf
    (stationary); validated at config-parse time for sweeps.
    """
    key = (cfg.flow.kind, cfg.shape_name)
    if key not in _EXACT_PAIRS:
        raise ValueError(f"no exact solution for {key}")
    t_final = cfg.scheme.T
    initial = build_initial_shape(cfg)
    if cfg.is_surface:
        r0 = cfg.shape_params.get("radius", 1.0)
        if cfg.flow.kind == "mcf":
            value = r0 * r0 - 4.0 * t_final
            if value <= 0:
                raise ValueError(f"sphere vanishes before t={t_final}")
            scale = math.sqrt(value) / r0
        else:  # sdf: stationary sphere
            scale = 1.0
        return SurfaceState(initial.vertices * scale, initial.triangles, time=t_final)
    r0 = cfg.shape_params.get("radius", 1.0)
    r_final = _circle_radius_at(cfg.flow, r0, t_final)
    return CurveState(initial.positions * (r_final / r0), time=t_final)
