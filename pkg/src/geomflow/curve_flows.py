"""Time steppers for curvature-driven flows of closed curves.

The flows evolve a curve with normal velocity

    csf    V = -kappa                     (curve shortening)
    apcsf  V = -kappa + <kappa>           (area preserving, <.> the lumped average)
    gmcf   V = -beta kappa^alpha          (generalized, alpha*beta > 0)
    wf     V = d_ss kappa + kappa^3/2     (Willmore / elastic flow)

and are discretized in the split formulation: positions X and scalar curvature
kappa are solved for jointly, with kappa n = -d_ss X imposed weakly.  One step
of the k-step backward-differentiation scheme finds (X^{m+1}, kappa^{m+1}) from

    ( (a X^{m+1} - Xhat)/tau . n~, phi )^h + (flow terms in kappa^{m+1}, phi)^h = 0
    ( kappa^{m+1} n~, omega )^h - (d_s X^{m+1}, d_s omega) = 0

where Xhat is the BDF history combination and every geometric quantity (n~,
edge lengths, lumped weights) is evaluated on a predictor of Gamma^{m+1}.  The
stable predictor is one step of the order-(k-1) scheme, recursing down to the
single-step scheme whose "predictor" is the current curve; plain polynomial
extrapolation of the history is also available, mainly to reproduce its mesh
instability.

Starting values for k >= 3 are bootstrapped with the first-order scheme at a
fine step tau_fine ~ tau^{k-1} (tau/tau_fine substeps per missing level), so
the accumulated O(tau_fine * tau) starting error does not spoil the order.

All tangential motion is left to the scheme itself; this is what equidistributes
the mesh over time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .curve import (
    CurveState,
    edge_geometry,
    mesh_ratio,
    polygon_area,
    polygon_perimeter,
    validate_orientation,
    vertex_masses,
    vertex_normal_weights,
)
from .errors import (
    BlowupDetected,
    DegenerateEdgeError,
    NoConvergenceError,
    NonPositiveCurvatureError,
    SingularMatrixError,
)
from .linalg import NewtonConfig, SparseMatrix, assemble, newton_solve, solve_direct

__all__ = [
    "FlowSpec",
    "BdfCoefficients",
    "bdf_coefficients",
    "EXTRAPOLATION_WEIGHTS",
    "SchemeConfig",
    "DiagnosticsSeries",
    "EvolveResult",
    "bgn1_step",
    "bdfk_step",
    "predict",
    "bootstrap",
    "evolve",
    "newton_system",
    "default_fine_step",
]

FLOW_KINDS = ("csf", "apcsf", "gmcf", "wf")

# Blow-up detection thresholds for evolve(); relative to the initial curve.
PSI_MAX = 1e4
EDGE_FLOOR_REL = 1e-10
AREA_FLOOR_REL = 1e-8

NEWTON_DEFAULT = NewtonConfig(abs_tol=1e-12)


@dataclass(frozen=True)
class FlowSpec:
    """Which flow to solve; alpha/beta only apply to the generalized flow."""

    kind: str
    alpha: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}, expected one of {FLOW_KINDS}")
        if self.kind == "gmcf":
            if self.alpha is None or self.beta is None:
                raise ValueError("gmcf requires alpha and beta")
            if self.alpha * self.beta <= 0:
                raise ValueError("gmcf requires alpha*beta > 0 (parabolic regime)")
        elif self.alpha is not None or self.beta is not None:
            raise ValueError(f"alpha/beta are only meaningful for gmcf, not {self.kind!r}")

    @property
    def is_nonlinear(self) -> bool:
        return self.kind in ("gmcf", "wf")


@dataclass(frozen=True)
class BdfCoefficients:
    """One-leg BDF data: a X^{m+1} - sum_i weights[i] X^{m-i}, scaled by 1/tau.

    Consistency requires a == sum(weights); this makes every step exactly
    translation equivariant.
    """

    k: int
    a: float
    weights: Tuple[float, ...]


_BDF_TABLE = {
    1: BdfCoefficients(1, 1.0, (1.0,)),
    2: BdfCoefficients(2, 1.5, (2.0, -0.5)),
    3: BdfCoefficients(3, 11.0 / 6.0, (3.0, -1.5, 1.0 / 3.0)),
    4: BdfCoefficients(4, 25.0 / 12.0, (4.0, -3.0, 4.0 / 3.0, -0.25)),
}

#: Polynomial extrapolation weights for the unstable predictor variant.
EXTRAPOLATION_WEIGHTS = {
    2: (2.0, -1.0),
    3: (3.0, -3.0, 1.0),
    4: (4.0, -6.0, 4.0, -1.0),
}


def bdf_coefficients(k: int) -> BdfCoefficients:
    if k not in _BDF_TABLE:
        raise ValueError(f"BDF order k={k} not supported (1..4)")
    return _BDF_TABLE[k]


def default_fine_step(tau: float, k: int) -> Optional[float]:
    """Bootstrap fine step: tau^(k-1), rounded down so tau/tau_fine is an integer."""
    if k < 3:
        return None
    raw = tau ** (k - 1)
    substeps = max(1, int(np.ceil(tau / raw - 1e-9)))
    return tau / substeps


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme order, step sizes and run horizon for evolve().

    bootstrap_fine_step defaults to tau^(k-1) (k >= 3); when given it must
    divide tau an integer number of times.
    """

    k: int
    tau: float
    T: float
    predictor: str = "cascade"
    bootstrap_fine_step: Optional[float] = None
    snapshot_times: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.k not in (1, 2, 3, 4):
            raise ValueError("k must be in 1..4")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.predictor not in ("cascade", "extrapolation"):
            raise ValueError("predictor must be 'cascade' or 'extrapolation'")
        steps = self.T / self.tau
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("T must be an integer multiple of tau")
        if round(steps) < max(1, self.k - 1):
            raise ValueError(f"T/tau = {round(steps)} gives too few steps for k={self.k}")
        if self.bootstrap_fine_step is not None:
            if not 0 < self.bootstrap_fine_step <= self.tau:
                raise ValueError("bootstrap_fine_step must lie in (0, tau]")
            sub = self.tau / self.bootstrap_fine_step
            if abs(sub - round(sub)) > 1e-9 * max(1.0, sub):
                raise ValueError("tau must be an integer multiple of bootstrap_fine_step")
        for t in self.snapshot_times:
            idx = t / self.tau
            if abs(idx - round(idx)) > 1e-9 * max(1.0, idx) or not 0 <= t <= self.T:
                raise ValueError(f"snapshot time {t} is not a step time within [0, T]")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))

    def fine_step(self) -> Optional[float]:
        if self.bootstrap_fine_step is not None:
            substeps = int(round(self.tau / self.bootstrap_fine_step))
            return self.tau / substeps
        return default_fine_step(self.tau, self.k)


# ---------------------------------------------------------------------------
# One implicit step on a given geometry


def _assemble_linear_part(flow: FlowSpec, geometry: CurveState, a: float, tau: float,
                          xhat: np.ndarray):
    """Linear system pieces on the predictor geometry.

    Returns (A, b, aux) where aux carries the lumped masses needed by the
    nonlinear terms.  The unknown ordering is X interleaved (x0,y0,x1,y1,...),
    then kappa, then (apcsf only) the curvature average.
    """
    geom = edge_geometry(geometry)
    n = geometry.n_vertices
    m = vertex_masses(geom)
    w = vertex_normal_weights(geom)
    inv_l = 1.0 / geom.lengths
    inv_l_next = np.roll(inv_l, -1)

    idx = np.arange(n)
    x_col = 2 * idx  # x-component column of vertex i; +1 for y
    k_col = 2 * n + idx
    size = 3 * n + (1 if flow.kind == "apcsf" else 0)

    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []

    def put(r, c, v):
        rows.append(np.asarray(r, dtype=np.int64))
        cols.append(np.asarray(c, dtype=np.int64))
        vals.append(np.asarray(v, dtype=float))

    # Vector equation (rows 2i+c): kappa w_i - (L X)_i = 0 with L the periodic
    # graph Laplacian weighted by 1/|h_j|.
    diag = inv_l + inv_l_next
    for c in (0, 1):
        put(x_col + c, k_col, w[:, c])
        put(x_col + c, x_col + c, -diag)
        put(x_col + c, 2 * np.roll(idx, 1) + c, inv_l)
        put(x_col + c, 2 * np.roll(idx, -1) + c, inv_l_next)

    # Scalar equation (rows 2n+i): (a/tau) X_i.w_i + [kappa terms] = Xhat_i.w_i/tau.
    r1 = 2 * n + idx
    put(r1, x_col, (a / tau) * w[:, 0])
    put(r1, x_col + 1, (a / tau) * w[:, 1])
    if flow.kind in ("csf", "apcsf"):
        put(r1, k_col, m)
    elif flow.kind == "wf":
        put(r1, k_col, diag)
        put(r1, 2 * n + np.roll(idx, 1), -inv_l)
        put(r1, 2 * n + np.roll(idx, -1), -inv_l_next)
    # gmcf: scalar-equation kappa coupling is entirely nonlinear.

    if flow.kind == "apcsf":
        # Bordered average: row 3n enforces sum_i m_i kappa_i = mu * (1,1)^h,
        # and -mu m_i feeds back into the scalar equation.
        put(r1, np.full(n, 3 * n), -m)
        put(np.full(n, 3 * n), k_col, m)
        put([3 * n], [3 * n], [-geom.total_length])

    A = assemble(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                 (size, size))
    b = np.zeros(size)
    b[r1] = np.einsum("ij,ij->i", xhat.reshape(n, 2), w) / tau
    return A, b, m


def _curvature_guess(geometry: CurveState) -> np.ndarray:
    """Vertex curvature solving the weak relation kappa_i w_i = (L X)_i in least squares."""
    geom = edge_geometry(geometry)
    w = vertex_normal_weights(geom)
    x = geometry.positions
    inv_l = 1.0 / geom.lengths[:, None]
    inv_l_next = np.roll(inv_l, -1, axis=0)
    lap = (x - np.roll(x, 1, axis=0)) * inv_l - (np.roll(x, -1, axis=0) - x) * inv_l_next
    wnorm = np.einsum("ij,ij->i", w, w)
    return np.einsum("ij,ij->i", w, lap) / np.maximum(wnorm, 1e-300)


def newton_system(flow: FlowSpec, geometry: CurveState, history: Sequence[CurveState],
                  tau: float, coeffs: Optional[BdfCoefficients] = None,
                  ) -> Tuple[Callable, np.ndarray]:
    """Residual/Jacobian callable and initial guess for a nonlinear step.

    Exposed so the Jacobian can be verified against finite differences.
    """
    if not flow.is_nonlinear:
        raise ValueError(f"{flow.kind} steps are linear; no Newton system")
    if coeffs is None:
        coeffs = bdf_coefficients(len(history))
    xhat = _history_combination(history, coeffs)
    A, b, m = _assemble_linear_part(flow, geometry, coeffs.a, tau, xhat)
    n = geometry.n_vertices
    alpha, beta = flow.alpha, flow.beta
    alpha_integer = alpha is not None and float(alpha).is_integer()

    def fun(u: np.ndarray):
        kappa = u[2 * n:3 * n]
        if flow.kind == "gmcf":
            if not alpha_integer and np.any(kappa <= 0.0):
                raise NonPositiveCurvatureError(
                    f"kappa_min = {kappa.min():.3e} with non-integer alpha = {alpha}"
                )
            nl = beta * np.power(kappa, alpha) * m
            dnl = alpha * beta * np.power(kappa, alpha - 1.0) * m
        else:  # wf
            nl = -0.5 * kappa**3 * m
            dnl = -1.5 * kappa**2 * m
        F = A @ u - b
        F[2 * n:3 * n] += nl
        J = A.add_diagonal_block(2 * n, 2 * n, dnl)
        return F, J

    u0 = np.empty(3 * n)
    u0[:2 * n] = geometry.positions.ravel()
    u0[2 * n:] = _curvature_guess(geometry)
    return fun, u0


def _history_combination(history: Sequence[CurveState], coeffs: BdfCoefficients) -> np.ndarray:
    xhat = np.zeros(2 * history[0].n_vertices)
    for weight, state in zip(coeffs.weights, history):
        xhat += weight * state.positions.ravel()
    return xhat


def _advance(flow: FlowSpec, geometry: CurveState, history: Sequence[CurveState],
             tau: float, newton_config: NewtonConfig,
             coeffs: Optional[BdfCoefficients] = None) -> Tuple[CurveState, int]:
    """One implicit step of order len(history) on the given geometry."""
    n = history[0].n_vertices
    if geometry.n_vertices != n:
        raise ValueError("predictor and history vertex counts differ")
    if coeffs is None:
        coeffs = bdf_coefficients(len(history))
    if flow.is_nonlinear:
        fun, u0 = newton_system(flow, geometry, history, tau, coeffs)
        u, iterations = newton_solve(fun, u0, newton_config)
    else:
        xhat = _history_combination(history, coeffs)
        A, b, _ = _assemble_linear_part(flow, geometry, coeffs.a, tau, xhat)
        u = solve_direct(A, b)
        iterations = 0
    state = CurveState(
        positions=u[:2 * n].reshape(n, 2).copy(),
        curvature=u[2 * n:3 * n].copy(),
        time=history[0].time + tau,
    )
    return state, iterations


def _step_of_order(flow: FlowSpec, history: Sequence[CurveState], order: int, tau: float,
                   newton_config: NewtonConfig) -> Tuple[CurveState, int]:
    """One full step of the order-j scheme, cascade predictor included."""
    if order == 1:
        return _advance(flow, history[0], history[:1], tau, newton_config)
    predictor, pred_iters = _step_of_order(flow, history, order - 1, tau, newton_config)
    state, iters = _advance(flow, predictor, history[:order], tau, newton_config)
    return state, max(iters, pred_iters)


def bgn1_step(flow: FlowSpec, state: CurveState, tau: float,
              newton_config: NewtonConfig = NEWTON_DEFAULT) -> CurveState:
    """One first-order step: geometry taken from the current curve itself."""
    return _advance(flow, state, [state], tau, newton_config)[0]


def bdfk_step(flow: FlowSpec, history: Sequence[CurveState], predictor: CurveState,
              tau: float, coeffs: Optional[BdfCoefficients] = None,
              newton_config: NewtonConfig = NEWTON_DEFAULT) -> CurveState:
    """One k-step BDF step; history is [X^m, X^{m-1}, ...], newest first.

    k = len(history) in 1..4; coeffs defaults to the matching BDF table row.
    With k = 1 and predictor = history[0] this is exactly bgn1_step (same code
    path, bit-identical result).
    """
    if not 1 <= len(history) <= 4:
        raise ValueError("history length must be 1..4")
    if coeffs is not None and coeffs.k != len(history):
        raise ValueError(f"coeffs are for k={coeffs.k} but history has {len(history)} states")
    return _advance(flow, predictor, history, tau, newton_config, coeffs)[0]


def predict(flow: FlowSpec, history: Sequence[CurveState], tau: float,
            mode: str = "cascade",
            newton_config: NewtonConfig = NEWTON_DEFAULT) -> CurveState:
    """Predictor for the upcoming step of order k = len(history).

    cascade: one step of the order-(k-1) scheme (recursive; stable).
    extrapolation: polynomial extrapolation of the history (unstable for
    fine steps; kept for the instability reproduction).
    """
    k = len(history)
    if k == 1:
        return history[0]
    if mode == "cascade":
        return _step_of_order(flow, history, k - 1, tau, newton_config)[0]
    if mode == "extrapolation":
        weights = EXTRAPOLATION_WEIGHTS[k]
        pos = np.zeros_like(history[0].positions)
        for weight, state in zip(weights, history):
            pos += weight * state.positions
        return CurveState(positions=pos, time=history[0].time + tau)
    raise ValueError(f"unknown predictor mode {mode!r}")


def bootstrap(flow: FlowSpec, initial: CurveState, k: int, tau: float,
              tau_fine: Optional[float] = None,
              newton_config: NewtonConfig = NEWTON_DEFAULT) -> List[CurveState]:
    """Starting values X^0..X^{k-1} for the k-step scheme, chronological order."""
    states, _ = _bootstrap(flow, initial, k, tau, tau_fine, newton_config)
    return states


def _substep_run(flow: FlowSpec, start: CurveState, tau: float, tau_fine: float,
                 newton_config: NewtonConfig) -> Tuple[CurveState, int]:
    """Advance one coarse level with first-order substeps; exact end time."""
    substeps = int(round(tau / tau_fine))
    state = start
    worst = 0
    for i in range(substeps):
        state, iters = _advance(flow, state, [state], tau_fine, newton_config)
        state.time = start.time + (i + 1) * (tau / substeps)
        worst = max(worst, iters)
    state.time = start.time + tau
    return state, worst


def _bootstrap(flow, initial, k, tau, tau_fine, newton_config):
    if k == 1:
        return [initial], [0]
    if k == 2:
        x1, iters = _advance(flow, initial, [initial], tau, newton_config)
        return [initial, x1], [0, iters]
    if tau_fine is None:
        tau_fine = default_fine_step(tau, k)
    states = [initial]
    iters_list = [0]
    # Fill levels 1..k-2 by fine first-order runs, then the last level by one
    # step of the order-(k-1) scheme on the history gathered so far.
    for _ in range(1, k - 1):
        state, iters = _substep_run(flow, states[-1], tau, tau_fine, newton_config)
        states.append(state)
        iters_list.append(iters)
    history = states[::-1]  # newest first
    last, iters = _step_of_order(flow, history, k - 1, tau, newton_config)
    states.append(last)
    iters_list.append(iters)
    return states, iters_list


# ---------------------------------------------------------------------------
# Evolution driver with diagnostics and blow-up detection


@dataclass
class DiagnosticsSeries:
    """Per-step scalar diagnostics: area, perimeter, mesh ratio, Newton effort."""

    time: np.ndarray
    area: np.ndarray
    perimeter: np.ndarray
    psi: np.ndarray
    newton_iters: np.ndarray

    HEADER = "t,A,L,Psi,newton_iters"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.HEADER + "\n")
            for t, a, l, p, it in zip(self.time, self.area, self.perimeter,
                                      self.psi, self.newton_iters):
                fh.write(f"{t:.17g},{a:.17g},{l:.17g},{p:.17g},{int(it)}\n")

    @classmethod
    def from_csv(cls, path) -> "DiagnosticsSeries":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        return cls(
            time=np.asarray(data["t"], dtype=float),
            area=np.asarray(data["A"], dtype=float),
            perimeter=np.asarray(data["L"], dtype=float),
            psi=np.asarray(data["Psi"], dtype=float),
            newton_iters=np.asarray(data["newton_iters"], dtype=int),
        )


@dataclass
class EvolveResult:
    final: CurveState
    diagnostics: DiagnosticsSeries
    snapshots: List[CurveState] = field(default_factory=list)


class _DiagnosticsRecorder:
    def __init__(self):
        self.rows = []

    def record(self, state: CurveState, newton_iters: int):
        self.rows.append((state.time, polygon_area(state), polygon_perimeter(state),
                          mesh_ratio(state), newton_iters))

    def series(self) -> DiagnosticsSeries:
        arr = np.array(self.rows, dtype=float).reshape(-1, 5)
        return DiagnosticsSeries(
            time=arr[:, 0], area=arr[:, 1], perimeter=arr[:, 2], psi=arr[:, 3],
            newton_iters=arr[:, 4].astype(int),
        )


def _check_thresholds(state: CurveState, perimeter0: float, area0: float) -> Optional[str]:
    geom = edge_geometry(state)  # raises DegenerateEdgeError on collapsed edges
    lmin, lmax = float(geom.lengths.min()), float(geom.lengths.max())
    if lmin < EDGE_FLOOR_REL * perimeter0:
        return f"min edge {lmin:.3e} below {EDGE_FLOOR_REL:.0e} * initial perimeter"
    if lmax / lmin > PSI_MAX:
        return f"mesh ratio {lmax / lmin:.3e} above {PSI_MAX:.0e}"
    if polygon_area(state) < AREA_FLOOR_REL * area0:
        return f"area below {AREA_FLOOR_REL:.0e} * initial area"
    return None


def evolve(flow: FlowSpec, initial: CurveState, scheme: SchemeConfig,
           newton_config: NewtonConfig = NEWTON_DEFAULT) -> EvolveResult:
    """Run the k-step scheme from t=0 to t=T with diagnostics and detection.

    Degenerate geometry, singular systems or stalled Newton iterations during
    stepping, as well as crossing the mesh-ratio/edge/area thresholds, halt
    the run with BlowupDetected carrying the last valid state, the detection
    time and the recorded diagnostics.
    """
    validate_orientation(initial)
    if initial.time != 0.0:
        initial = CurveState(initial.positions, initial.curvature, 0.0)
    area0 = polygon_area(initial)
    perimeter0 = polygon_perimeter(initial)
    recorder = _DiagnosticsRecorder()
    snap_steps = {int(round(t / scheme.tau)) for t in scheme.snapshot_times}
    snapshots: List[CurveState] = []

    def snap(state: CurveState, step_index: int):
        if step_index in snap_steps:
            snapshots.append(state)

    tau = scheme.tau
    k = scheme.k
    try:
        boot_states, boot_iters = _bootstrap(flow, initial, k, tau, scheme.fine_step(),
                                             newton_config)
    except (DegenerateEdgeError, SingularMatrixError, NoConvergenceError,
            NonPositiveCurvatureError) as exc:
        raise BlowupDetected(0.0, initial, recorder.series(), exc) from exc
    for step_index, (state, iters) in enumerate(zip(boot_states, boot_iters)):
        state.time = step_index * tau
        recorder.record(state, iters)
        snap(state, step_index)

    history = boot_states[::-1]  # newest first
    for m in range(k - 1, scheme.n_steps):
        t_next = (m + 1) * tau
        try:
            predictor = predict(flow, history[:k], tau, scheme.predictor, newton_config)
            state, iters = _advance(flow, predictor, history[:k], tau, newton_config)
        except (DegenerateEdgeError, SingularMatrixError, NoConvergenceError,
                NonPositiveCurvatureError) as exc:
            raise BlowupDetected(t_next, history[0], recorder.series(), exc) from exc
        state.time = t_next
        try:
            trouble = _check_thresholds(state, perimeter0, area0)
        except DegenerateEdgeError as exc:
            trouble = str(exc)
        if trouble is not None:
            raise BlowupDetected(t_next, history[0], recorder.series(), trouble)
        recorder.record(state, iters)
        snap(state, m + 1)
        history.insert(0, state)
        del history[k:]
    return EvolveResult(final=history[0], diagnostics=recorder.series(),
                        snapshots=snapshots)
