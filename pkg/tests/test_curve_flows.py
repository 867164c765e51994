"""Tests for the curve flow steppers.

One-step behavior on regular N-gons has closed forms (derived by symmetry:
a regular polygon maps to a regular polygon), which pin the assembled systems
independently of the assembly code.  With c = cos(pi/N) and circumradius R:

  - discrete curvature of the N-gon: kappa = 1/(R c)
  - csf step:            R1 = R / (1 + tau/(R^2 c^2)),  kappa1 = R1/(R^2 c)
  - gmcf(-1,-1) step:    R1 = R (1 + sqrt(1 + 4 tau)) / 2   (N-independent)
  - gmcf(a,b)/wf steps:  scalar root problems solved here by brentq

All remaining expected values are either exact solutions of the continuum
flows or regression values measured once and frozen.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.optimize import brentq

from geomflow.curve import (
    CurveState,
    generate_circle,
    generate_ellipse,
    generate_flower,
    mesh_ratio,
    polygon_area,
)
from geomflow.curve_flows import (
    EXTRAPOLATION_WEIGHTS,
    BdfCoefficients,
    DiagnosticsSeries,
    FlowSpec,
    SchemeConfig,
    bdf_coefficients,
    bdfk_step,
    bgn1_step,
    bootstrap,
    default_fine_step,
    evolve,
    newton_system,
    predict,
)
from geomflow.errors import (
    BlowupDetected,
    NonPositiveCurvatureError,
    SingularMatrixError,
)

CSF = FlowSpec("csf")
APCSF = FlowSpec("apcsf")
WF = FlowSpec("wf")


def radii(state: CurveState) -> np.ndarray:
    return np.hypot(state.positions[:, 0], state.positions[:, 1])


# ---------------------------------------------------------------------------
# FlowSpec / BDF coefficients


def test_flow_spec_validation():
    with pytest.raises(ValueError, match="unknown flow kind"):
        FlowSpec("mcf")
    with pytest.raises(ValueError, match="requires alpha and beta"):
        FlowSpec("gmcf", alpha=1.0)
    with pytest.raises(ValueError, match="alpha\\*beta > 0"):
        FlowSpec("gmcf", alpha=1.0, beta=-1.0)
    with pytest.raises(ValueError, match="only meaningful for gmcf"):
        FlowSpec("csf", alpha=1.0)
    assert not FlowSpec("csf").is_nonlinear
    assert not FlowSpec("apcsf").is_nonlinear
    assert FlowSpec("gmcf", alpha=0.5, beta=1.0).is_nonlinear
    assert FlowSpec("wf").is_nonlinear


def test_bdf_coefficient_table():
    expected = {
        1: (1.0, (1.0,)),
        2: (1.5, (2.0, -0.5)),
        3: (11.0 / 6.0, (3.0, -1.5, 1.0 / 3.0)),
        4: (25.0 / 12.0, (4.0, -3.0, 4.0 / 3.0, -0.25)),
    }
    for k, (a, weights) in expected.items():
        coeffs = bdf_coefficients(k)
        assert coeffs.k == k
        assert coeffs.a == a
        assert coeffs.weights == weights
    for k in (0, 5, -1):
        with pytest.raises(ValueError):
            bdf_coefficients(k)


def test_bdf_order_conditions():
    # The one-leg form (a x^{m+1} - sum_i w_i x^{m-i})/tau approximates x' at
    # t^{m+1} exactly for polynomials up to degree k.  With nodes t^{m-i} at
    # distance (i+1) tau this reads: sum w_i = a, sum w_i (i+1) = 1, and
    # sum w_i (i+1)^p = 0 for p = 2..k.
    for k in (1, 2, 3, 4):
        coeffs = bdf_coefficients(k)
        nodes = np.arange(1, k + 1, dtype=float)
        w = np.array(coeffs.weights)
        assert abs(w.sum() - coeffs.a) < 1e-14
        assert abs((w * nodes).sum() - 1.0) < 1e-14
        for p in range(2, k + 1):
            assert abs((w * nodes**p).sum()) < 1e-13


# ---------------------------------------------------------------------------
# One-step closed forms on regular polygons


@pytest.mark.parametrize("n,tau", [(64, 1e-2), (64, 1e-3), (333, 1e-2)])
def test_csf_step_regular_polygon_closed_form(n, tau):
    c = np.cos(np.pi / n)
    out = bgn1_step(CSF, generate_circle(n, 1.0), tau)
    r1 = 1.0 / (1.0 + tau / (c * c))
    assert_allclose(radii(out), r1, rtol=1e-12)
    assert_allclose(out.curvature, r1 / c, rtol=1e-10)
    # Tangential symmetry: vertices stay on their rays.
    directions = out.positions / radii(out)[:, None]
    assert_allclose(directions, generate_circle(n, 1.0).positions, atol=1e-12)


def test_csf_step_circle_exact_solution():
    # Large-N one step against the shrinking circle sqrt(1-2t).
    tau = 1e-4
    state = generate_circle(10000, 1.0)
    out = bgn1_step(CSF, state, tau)
    assert np.abs(radii(out) - np.sqrt(1.0 - 2.0 * tau)).max() <= 1e-6
    assert polygon_area(out) < polygon_area(state)


def test_apcsf_regular_polygon_is_stationary():
    n = 128
    state = generate_circle(n, 1.0)
    out = bgn1_step(APCSF, state, 1e-2)
    assert np.abs(out.positions - state.positions).max() <= 1e-10
    assert_allclose(out.curvature, 1.0 / np.cos(np.pi / n), rtol=1e-10)


def test_apcsf_stationary_state_residual():
    # Assemble the full system at the known equilibrium values and check the
    # residual directly; kappa and its average both equal 1/(R c).
    from geomflow.curve_flows import _assemble_linear_part

    n = 96
    state = generate_circle(n, 1.0)
    kappa = 1.0 / np.cos(np.pi / n)
    A, b, _ = _assemble_linear_part(APCSF, state, 1.0, 1e-2, state.positions.ravel())
    u = np.concatenate([state.positions.ravel(), np.full(n, kappa), [kappa]])
    assert np.abs(A @ u - b).max() <= 1e-10


@pytest.mark.parametrize("tau", [1e-2, 1e-3])
def test_gmcf_inverse_power_closed_form(tau):
    # alpha = beta = -1 gives V = 1/kappa; one step solves the quadratic
    # R1^2 - R R1 - tau R^2 = 0 on any regular polygon.
    flow = FlowSpec("gmcf", alpha=-1.0, beta=-1.0)
    out = bgn1_step(flow, generate_circle(64, 1.0), tau)
    r1 = (1.0 + np.sqrt(1.0 + 4.0 * tau)) / 2.0
    assert_allclose(radii(out), r1, rtol=1e-12)
    assert r1 > 1.0
    # Against the exact exponential: the gap is a genuine O(tau^2).
    gap = abs(r1 - np.exp(tau))
    assert tau**2 <= gap <= 2.0 * tau**2


@pytest.mark.parametrize("n", [64, 500])
def test_gmcf_cube_root_matches_scalar_oracle(n):
    tau = 1e-2
    c = np.cos(np.pi / n)
    flow = FlowSpec("gmcf", alpha=1.0 / 3.0, beta=1.0)
    out = bgn1_step(flow, generate_circle(n, 1.0), tau)

    def residual(r):
        return (r - 1.0) * c / tau + (r / c) ** (1.0 / 3.0)

    r1 = brentq(residual, 1e-12, 1.0, xtol=1e-15, rtol=8.9e-16)
    assert_allclose(radii(out), r1, rtol=1e-12)
    assert r1 < 1.0


def test_gmcf_linear_power_matches_csf():
    flow = FlowSpec("gmcf", alpha=1.0, beta=1.0)
    state = generate_ellipse(128)
    out_gmcf = bgn1_step(flow, state, 1e-2)
    out_csf = bgn1_step(CSF, state, 1e-2)
    assert np.abs(out_gmcf.positions - out_csf.positions).max() <= 1e-9


def test_gmcf_fractional_power_rejects_nonconvex():
    flow = FlowSpec("gmcf", alpha=1.0 / 3.0, beta=1.0)
    with pytest.raises(NonPositiveCurvatureError):
        bgn1_step(flow, generate_flower(96), 1e-3)


def test_gmcf_integer_power_allows_nonconvex():
    flow = FlowSpec("gmcf", alpha=1.0, beta=1.0)
    out = bgn1_step(flow, generate_flower(96), 1e-3)
    assert out.curvature.min() < 0.0  # necks stay concave after one step


@pytest.mark.parametrize("n", [64, 500])
def test_wf_matches_scalar_oracle_and_grows(n):
    # On a regular polygon the curvature is constant, so the d_ss kappa term
    # drops and the step solves (R1 - R) c/tau = kappa1^3/2.
    tau = 1e-2
    c = np.cos(np.pi / n)
    out = bgn1_step(WF, generate_circle(n, 1.0), tau)

    def residual(r):
        return (r - 1.0) * c / tau - 0.5 * (r / c) ** 3

    r1 = brentq(residual, 1.0, 2.0, xtol=1e-15, rtol=8.9e-16)
    assert_allclose(radii(out), r1, rtol=1e-12)
    assert r1 > 1.0


def test_wf_second_order_step_grows_circle():
    states = bootstrap(WF, generate_circle(128, 1.0), 2, 1e-2)
    history = states[::-1]
    out = bdfk_step(WF, history, predict(WF, history, 1e-2), 1e-2)
    assert radii(out).min() > radii(states[1]).max()


def test_newton_jacobian_matches_finite_differences():
    state = generate_ellipse(32)
    fun, u0 = newton_system(WF, state, [state], 1e-2)
    F0, J = fun(u0)
    dense = J.csr().toarray()
    fd = np.empty_like(dense)
    h = 1e-7
    for j in range(u0.size):
        up = u0.copy()
        up[j] += h
        fd[:, j] = (fun(up)[0] - F0) / h
    assert np.abs(dense - fd).max() <= 1e-6 * np.abs(dense).max()


def test_newton_system_rejects_linear_flows():
    state = generate_circle(16, 1.0)
    with pytest.raises(ValueError, match="linear"):
        newton_system(CSF, state, [state], 1e-2)


# ---------------------------------------------------------------------------
# bdfk_step mechanics


def test_bdfk_step_k1_is_bgn1_bitwise():
    state = generate_ellipse(96)
    a = bgn1_step(CSF, state, 1e-2)
    b = bdfk_step(CSF, [state], state, 1e-2)
    assert_array_equal(a.positions, b.positions)
    assert_array_equal(a.curvature, b.curvature)


def test_bdfk_step_validates_inputs():
    state = generate_circle(16, 1.0)
    with pytest.raises(ValueError, match="history length"):
        bdfk_step(CSF, [], state, 1e-2)
    with pytest.raises(ValueError, match="history length"):
        bdfk_step(CSF, [state] * 5, state, 1e-2)
    with pytest.raises(ValueError, match="k=2"):
        bdfk_step(CSF, [state], state, 1e-2, coeffs=bdf_coefficients(2))
    small = generate_circle(8, 1.0)
    with pytest.raises(ValueError, match="vertex counts"):
        bdfk_step(CSF, [state], small, 1e-2)


def test_static_history_acts_like_shorter_step():
    # With X^m = X^{m-1} = P the BDF2 combination is (2 - 1/2) P = a P, so the
    # step equals a single first-order step with tau/a.
    P = generate_ellipse(64)
    history = [P, CurveState(P.positions.copy())]
    out = bdfk_step(CSF, history, P, 1e-2)
    ref = bgn1_step(CSF, P, 1e-2 / 1.5)
    assert np.abs(out.positions - ref.positions).max() <= 1e-12


def test_bdf2_local_truncation_is_third_order():
    # Exact circle history at t=0, tau; predictor by one first-order step.
    errors = []
    taus = [1e-2, 5e-3, 2.5e-3]
    for tau in taus:
        x0 = generate_circle(10000, 1.0)
        x1 = generate_circle(10000, np.sqrt(1.0 - 2.0 * tau), time=tau)
        pred = bgn1_step(CSF, x1, tau)
        out = bdfk_step(CSF, [x1, x0], pred, tau)
        errors.append(np.abs(radii(out) - np.sqrt(1.0 - 4.0 * tau)).max())
    slope = np.polyfit(np.log(taus), np.log(errors), 1)[0]
    assert 2.7 <= slope <= 3.3
    assert errors[0] <= 2e-6


def test_collinear_predictor_reports_singular_matrix():
    square = CurveState(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]))
    flat = CurveState(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.5, 0.0]]))
    with pytest.raises(SingularMatrixError):
        bdfk_step(CSF, [square], flat, 1e-2)


# ---------------------------------------------------------------------------
# Equivariance and scaling


def test_translation_equivariance():
    shift = np.array([10.5, -3.25])
    tau = 1e-2

    def two_steps(initial):
        h0 = bgn1_step(CSF, initial, tau)
        history = [h0, initial]
        return bdfk_step(CSF, history, predict(CSF, history, tau), tau)

    base = two_steps(generate_ellipse(200))
    shifted = two_steps(CurveState(generate_ellipse(200).positions + shift))
    assert np.abs(shifted.positions - (base.positions + shift)).max() <= 1e-12


@pytest.mark.parametrize("kind", ["csf", "apcsf"])
def test_cyclic_relabeling_equivariance(kind):
    flow = FlowSpec(kind)
    state = generate_ellipse(96)
    out = bgn1_step(flow, state, 1e-2)
    rolled = bgn1_step(flow, CurveState(np.roll(state.positions, 17, axis=0)), 1e-2)
    assert np.abs(rolled.positions - np.roll(out.positions, 17, axis=0)).max() <= 1e-12


def test_csf_parabolic_rescaling():
    # Doubling the curve and running with 4 tau over 4 T reproduces twice the
    # original evolution.
    lam = 2.0
    small = evolve(CSF, generate_circle(128, 1.0), SchemeConfig(k=2, tau=5e-3, T=0.1))
    scaled_initial = CurveState(lam * generate_circle(128, 1.0).positions)
    big = evolve(CSF, scaled_initial, SchemeConfig(k=2, tau=lam**2 * 5e-3, T=lam**2 * 0.1))
    assert np.abs(big.final.positions - lam * small.final.positions).max() <= 1e-12


# ---------------------------------------------------------------------------
# Predictors


def test_predict_modes():
    state = generate_ellipse(48)
    static = [state, CurveState(state.positions.copy())]
    assert_array_equal(predict(CSF, static, 1e-2, "extrapolation").positions,
                       state.positions)
    # Cascade at k=2 is one first-order step, same code path as bgn1_step.
    h0 = bgn1_step(CSF, state, 1e-2)
    history = [h0, state]
    assert_array_equal(predict(CSF, history, 1e-2, "cascade").positions,
                       bgn1_step(CSF, h0, 1e-2).positions)
    assert predict(CSF, [state], 1e-2) is state
    with pytest.raises(ValueError, match="predictor mode"):
        predict(CSF, history, 1e-2, "neville")


@pytest.mark.parametrize("k", [2, 3, 4])
def test_predict_extrapolation_weights(k):
    rng = np.random.default_rng(7)
    base = generate_ellipse(32)
    history = [CurveState(base.positions + 0.01 * rng.standard_normal((32, 2)))
               for _ in range(k)]
    expected = sum(w * s.positions for w, s in zip(EXTRAPOLATION_WEIGHTS[k], history))
    out = predict(CSF, history, 1e-2, "extrapolation")
    assert_allclose(out.positions, expected, rtol=0.0, atol=1e-15)


def test_extrapolation_is_fine_on_smooth_data():
    res = evolve(CSF, generate_circle(128, 1.0),
                 SchemeConfig(k=3, tau=1e-2, T=0.1, predictor="extrapolation"))
    assert np.abs(radii(res.final) - np.sqrt(0.8)).max() <= 1e-3


# ---------------------------------------------------------------------------
# Bootstrap


def test_bootstrap_k1_k2():
    state = generate_circle(64, 1.0)
    only = bootstrap(CSF, state, 1, 1e-2)
    assert len(only) == 1 and only[0] is state
    states = bootstrap(CSF, state, 2, 1e-2)
    assert len(states) == 2
    assert states[0] is state
    assert_array_equal(states[1].positions, bgn1_step(CSF, state, 1e-2).positions)
    assert states[1].time == pytest.approx(1e-2)


def test_bootstrap_k3_substep_structure():
    # tau/tau_fine = 100 first-order substeps build X^1; X^2 is one cascade
    # BDF2 step on [X^1, X^0].
    tau, fine = 1e-2, 1e-4
    state = generate_circle(64, 1.0)
    states = bootstrap(CSF, state, 3, tau, fine)
    assert len(states) == 3
    manual = state
    for _ in range(100):
        manual = bgn1_step(CSF, manual, fine)
    assert_array_equal(states[1].positions, manual.positions)
    history = [states[1], states[0]]
    ref = bdfk_step(CSF, history, predict(CSF, history, tau), tau)
    assert_array_equal(states[2].positions, ref.positions)
    assert [s.time for s in states] == pytest.approx([0.0, tau, 2 * tau])


def test_bootstrap_k3_starting_error_is_third_order():
    errors = []
    taus = [4e-2, 2e-2, 1e-2]
    for tau in taus:
        states = bootstrap(CSF, generate_circle(1000, 1.0), 3, tau)
        errors.append(np.abs(radii(states[1]) - np.sqrt(1.0 - 2.0 * tau)).max())
    slope = np.polyfit(np.log(taus), np.log(errors), 1)[0]
    assert 2.7 <= slope <= 3.4
    assert errors[0] <= 2e-4


def test_default_fine_step():
    assert default_fine_step(1e-2, 1) is None
    assert default_fine_step(1e-2, 2) is None
    assert default_fine_step(1e-2, 3) == pytest.approx(1e-4)
    assert default_fine_step(1.0 / 160.0, 3) == pytest.approx(1.0 / 160.0**2)
    fine = default_fine_step(0.03, 3)
    assert 0.03 / fine == pytest.approx(round(0.03 / fine))
    assert fine <= 0.03**2 * 1.0001


# ---------------------------------------------------------------------------
# SchemeConfig


def test_scheme_config_validation():
    good = dict(k=2, tau=1e-2, T=0.1)
    assert SchemeConfig(**good).n_steps == 10
    for bad in (
        dict(good, k=5),
        dict(good, tau=0.0),
        dict(good, T=-1.0),
        dict(good, predictor="euler"),
        dict(good, T=0.105),                      # not a multiple of tau
        dict(good, k=4, T=2e-2),                  # too few steps for k=4
        dict(good, bootstrap_fine_step=2e-2),     # larger than tau
        dict(good, bootstrap_fine_step=3e-3),     # does not divide tau
        dict(good, snapshot_times=(0.015,)),      # off the step grid
        dict(good, snapshot_times=(0.2,)),        # beyond T
    ):
        with pytest.raises(ValueError):
            SchemeConfig(**bad)
    cfg = SchemeConfig(k=3, tau=1e-2, T=0.1, bootstrap_fine_step=2e-3)
    assert cfg.fine_step() == pytest.approx(2e-3)
    assert SchemeConfig(k=3, tau=1e-2, T=0.1).fine_step() == pytest.approx(1e-4)
    assert SchemeConfig(k=1, tau=1e-2, T=0.1).fine_step() is None


# ---------------------------------------------------------------------------
# evolve


def test_evolve_records_diagnostics_and_snapshots():
    res = evolve(CSF, generate_circle(128, 1.0),
                 SchemeConfig(k=2, tau=1e-2, T=0.1, snapshot_times=(0.0, 0.05, 0.1)))
    d = res.diagnostics
    assert_allclose(d.time, np.arange(11) * 1e-2, atol=1e-15)
    assert np.all(np.diff(d.area) < 0.0)
    assert np.all(d.newton_iters == 0)  # linear flow
    assert len(res.snapshots) == 3
    for snap, t in zip(res.snapshots, (0.0, 0.05, 0.1)):
        assert snap.time == pytest.approx(t)
        assert_allclose(radii(snap), np.sqrt(1.0 - 2.0 * t), atol=2e-3)


def test_evolve_second_order_beats_first_order():
    from geomflow.metrics import manifold_distance_2d

    reference = generate_circle(256, np.sqrt(0.5))
    errors = {}
    for k, radius_tol in ((1, 1e-2), (2, 1e-3)):
        res = evolve(CSF, generate_circle(256, 1.0), SchemeConfig(k=k, tau=1e-2, T=0.25))
        errors[k] = manifold_distance_2d(res.final, reference)
        assert np.abs(radii(res.final).mean() - np.sqrt(0.5)) <= radius_tol
    assert errors[2] < errors[1]


def test_evolve_detects_collapse():
    with pytest.raises(BlowupDetected) as info:
        evolve(CSF, generate_circle(64, 0.05), SchemeConfig(k=2, tau=1e-4, T=0.1))
    exc = info.value
    # The exact circle vanishes at t = R^2/2 = 1.25e-3.
    assert 0.0 < exc.time <= 3e-3
    assert isinstance(exc.state, CurveState)
    assert len(exc.diagnostics.time) >= 2
    assert exc.diagnostics.time[-1] < exc.time + 1e-4


def test_evolve_rejects_counterclockwise_input():
    ccw = CurveState(generate_circle(64, 1.0).positions[::-1].copy())
    with pytest.raises(ValueError, match="clockwise"):
        evolve(CSF, ccw, SchemeConfig(k=1, tau=1e-2, T=0.1))


@pytest.mark.slow
def test_evolve_apcsf_ellipse_preserves_area():
    # Regression thresholds: |dA| stays below 1e-3 (measured 7.9e-6) and the
    # perimeter never increases beyond round-off.
    res = evolve(APCSF, generate_ellipse(640), SchemeConfig(k=2, tau=1.0 / 1280.0, T=1.0))
    d = res.diagnostics
    assert np.abs(d.area - d.area[0]).max() <= 1e-3
    assert np.diff(d.perimeter).max() <= 1e-12
    assert d.psi[-1] < d.psi[0]


def test_evolve_flower_extrapolation_goes_unstable():
    # The zigzag instability of the extrapolated predictor: the mesh ratio
    # passes 100 well before t=0.25 (first crossing measured at t=0.131),
    # while the cascade predictor keeps it below its initial value 5.549
    # for the whole run and equidistributes in the long term.
    cfg = SchemeConfig(k=3, tau=1.0 / 160.0, T=0.25, predictor="extrapolation")
    try:
        diag = evolve(APCSF, generate_flower(80), cfg).diagnostics
    except BlowupDetected as exc:
        diag = exc.diagnostics
    crossed = diag.psi > 100.0
    assert crossed.any()
    assert diag.time[np.argmax(crossed)] < 0.25

    res = evolve(APCSF, generate_flower(80), SchemeConfig(k=3, tau=1.0 / 160.0, T=2.0))
    assert res.diagnostics.psi.max() <= 5.6
    assert res.diagnostics.psi[-1] <= 1.2
    assert np.diff(res.diagnostics.perimeter).max() <= 1e-12


def test_diagnostics_series_roundtrip(tmp_path):
    series = DiagnosticsSeries(
        time=np.array([0.0, 1e-2]),
        area=np.array([np.pi, np.pi * 0.98001234567890123]),
        perimeter=np.array([2 * np.pi, 6.2]),
        psi=np.array([1.0, 1.0000001]),
        newton_iters=np.array([0, 3]),
    )
    path = tmp_path / "diag.csv"
    series.to_csv(path)
    back = DiagnosticsSeries.from_csv(path)
    assert_array_equal(back.time, series.time)
    assert_array_equal(back.area, series.area)
    assert_array_equal(back.perimeter, series.perimeter)
    assert_array_equal(back.psi, series.psi)
    assert_array_equal(back.newton_iters, series.newton_iters)


def test_diagnostics_series_single_row(tmp_path):
    series = DiagnosticsSeries(
        time=np.array([0.0]), area=np.array([1.0]), perimeter=np.array([4.0]),
        psi=np.array([1.0]), newton_iters=np.array([0]),
    )
    path = tmp_path / "one.csv"
    series.to_csv(path)
    back = DiagnosticsSeries.from_csv(path)
    assert back.time.shape == (1,)
    assert back.area[0] == 1.0
