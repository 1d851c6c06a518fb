import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odevarcoef.errors import InsufficientLocalDataError, SingularMatrixError
from odevarcoef.estimator import (
    StageTwoInput,
    build_z,
    estimate_beta,
    estimate_beta_curve,
    stage_two_input,
    ztwz_limit_gap,
)
from odevarcoef.kernels import get_kernel
from odevarcoef.locpoly import SmootherConfig, TimeDesign
from odevarcoef.sim import (
    FunctionSpec,
    Scenario,
    default_scenario,
    observe,
    rng_stream,
    sample_design,
    solve_trajectories,
)

# 99% quantile of |beta_1_hat(0.5)| over 500 independent designs and noise
# draws (p=1, m=4, n=1000, sigma=0.05, h=0.15, beta_1 = sin(2 pi t));
# regenerate with scripts/pilot_fixtures.py
PIPELINE_BAND_99 = 0.0127


def brute_force_beta(t, xhat, dxhat, t0, h, q, kernel):
    """Loop-built stacked design, solved by generic dense weighted lstsq."""
    p, m, n = xhat.shape
    K = get_kernel(kernel)
    rows, target, wts = [], [], []
    for l in range(m):
        for i in range(n):
            rows.append([xhat[d, l, i] * (t[i] - t0) ** r for d in range(p) for r in range(q + 1)])
            target.append(dxhat[l, i])
            wts.append(float(K((t[i] - t0) / h)))
    Z, y, w = np.array(rows), np.array(target), np.array(wts)
    sw = np.sqrt(w)
    coef = np.linalg.lstsq(sw[:, None] * Z, sw * y, rcond=None)[0]
    return coef.reshape(p, q + 1)


def random_input(seed, p, m, n):
    rng = rng_stream(seed, 21)
    d = TimeDesign(np.sort(rng.random(n)))
    xhat = rng.normal(1.0, 1.0, (p, m, n))
    dx = rng.standard_normal((m, n))
    return StageTwoInput(d, xhat, dx)


def test_build_z_degenerate_layout():
    inp = random_input(0, 1, 1, 7)
    Z, w = build_z(inp, SmootherConfig(h=0.3, q=0), 0.5)
    np.testing.assert_array_equal(Z[:, 0], inp.xhat[0, 0])
    assert Z.shape == (7, 1)


def test_build_z_block_pattern():
    d = TimeDesign([0.4, 0.7])
    xhat = np.array([[[2.0, 3.0]], [[5.0, 7.0]]])          # p=2, m=1
    inp = StageTwoInput(d, xhat, np.zeros((1, 2)))
    Z, w = build_z(inp, SmootherConfig(h=0.5, q=1, kernel="uniform"), 0.5)
    expected = [
        [2.0, 2.0 * (0.4 - 0.5), 5.0, 5.0 * (0.4 - 0.5)],
        [3.0, 3.0 * (0.7 - 0.5), 7.0, 7.0 * (0.7 - 0.5)],
    ]
    np.testing.assert_allclose(Z, expected, atol=1e-15)
    np.testing.assert_allclose(w, [0.5, 0.5])


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 3), q=st.integers(0, 3), m=st.integers(1, 3), n=st.integers(3, 30))
def test_build_z_shapes_and_repeat_major_rows(p, q, m, n):
    inp = random_input(p * 100 + q * 10 + m, p, m, n)
    Z, w = build_z(inp, SmootherConfig(h=0.4, q=q), 0.5)
    assert Z.shape == (m * n, p * (q + 1)) and w.shape == (m * n,)
    l, i, dd = m - 1, n - 1, p - 1
    assert Z[l * n + i, dd * (q + 1)] == inp.xhat[dd, l, i]


def test_exact_injection_constant_coefficient():
    b = 1.7
    t = np.sort(rng_stream(1, 0).random(200))
    d = TimeDesign(t)
    x = np.exp(b * t)
    inp = StageTwoInput(d, x[None, None], (b * x)[None])
    for t0 in (0.2, 0.5, 0.8):
        est = estimate_beta(inp, SmootherConfig(h=0.2), t0)
        assert est.beta[0] == pytest.approx(b, abs=1e-8)


def test_exact_injection_forced_scenario():
    sc = Scenario(
        p=2, m=1, beta_fns=(0.0, 1.0), covariate_fns=(FunctionSpec("cos", (1.0, 1.0)),),
        x1_init=(0.0,), n=300, sigma=0.0,
    )
    traj = solve_trajectories(sc)
    d = sample_design(sc)
    inp = StageTwoInput(d, traj.at(d.times), traj.deriv1_at(d.times))
    est = estimate_beta(inp, SmootherConfig(h=0.2), 0.5)
    np.testing.assert_allclose(est.beta, [0.0, 1.0], atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 100_000),
    p=st.integers(1, 3),
    q=st.integers(0, 2),
    m=st.integers(1, 3),
    n=st.integers(20, 50),
    t0=st.floats(0.3, 0.7),
)
def test_matches_brute_force_lstsq(seed, p, q, m, n, t0):
    inp = random_input(seed, p, m, n)
    cfg = SmootherConfig(h=0.45, q=q)
    try:
        est = estimate_beta(inp, cfg, t0)
    except (InsufficientLocalDataError, SingularMatrixError):
        return
    ref = brute_force_beta(inp.design.times, inp.xhat, inp.x1deriv_hat, t0, cfg.h, q, cfg.kernel)
    scale = max(1.0, np.max(np.abs(ref[:, 0])))
    np.testing.assert_allclose(est.beta, ref[:, 0], atol=1e-10 * scale * est.cond**0.5)
    np.testing.assert_array_equal(est.beta, est.local_coeffs[:, 0])


def test_scale_equivariance():
    sc = default_scenario(n=400)
    traj = solve_trajectories(sc)
    d = sample_design(sc)
    obs = observe(traj, d, sc)
    cfg = SmootherConfig(h=0.2)
    base = estimate_beta(stage_two_input(d, obs, cfg, t0=0.5), cfg, 0.5).beta
    for c in (-3.0, 0.01, 250.0):
        scaled = estimate_beta(stage_two_input(d, c * obs.y, cfg, t0=0.5), cfg, 0.5).beta
        np.testing.assert_allclose(scaled, base, atol=1e-9)


def test_repeat_permutation_invariance():
    inp = random_input(5, 2, 3, 40)
    perm = [2, 0, 1]
    swapped = StageTwoInput(inp.design, inp.xhat[:, perm], inp.x1deriv_hat[perm])
    cfg = SmootherConfig(h=0.4)
    np.testing.assert_allclose(
        estimate_beta(swapped, cfg, 0.5).beta, estimate_beta(inp, cfg, 0.5).beta, atol=1e-12
    )


def test_full_pipeline_inside_band():
    sc = Scenario(
        p=1, m=4, beta_fns=(FunctionSpec("sin", (1.0, 1.0)),), covariate_fns=(),
        x1_init=(1.0, 2.0, 3.0, 4.0), n=1000, sigma=0.05, seed=777,
    )
    traj = solve_trajectories(sc)
    d = sample_design(sc)
    cfg = SmootherConfig(h=0.15)
    est = estimate_beta(stage_two_input(d, observe(traj, d, sc), cfg, t0=0.5), cfg, 0.5)
    assert abs(est.beta[0]) < PIPELINE_BAND_99


def test_windowed_input_gives_same_estimate():
    sc = default_scenario(n=300)
    traj = solve_trajectories(sc)
    d = sample_design(sc)
    obs = observe(traj, d, sc)
    cfg = SmootherConfig(h=0.2)
    full = estimate_beta(stage_two_input(d, obs, cfg), cfg, 0.4)
    win = estimate_beta(stage_two_input(d, obs, cfg, t0=0.4), cfg, 0.4)
    np.testing.assert_allclose(win.beta, full.beta, atol=1e-12)
    assert win.n_eff == full.n_eff


def test_insufficient_rows():
    inp = random_input(1, 3, 1, 40)
    with pytest.raises(InsufficientLocalDataError):
        estimate_beta(inp, SmootherConfig(h=0.02), 0.5)


def test_collinear_states_singular():
    inp = random_input(2, 2, 2, 40)
    xhat = inp.xhat.copy()
    xhat[1] = 2.0 * xhat[0]
    with pytest.raises(SingularMatrixError):
        estimate_beta(StageTwoInput(inp.design, xhat, inp.x1deriv_hat), SmootherConfig(h=0.4), 0.5)


def test_curve_behaviour():
    sc = default_scenario()
    traj = solve_trajectories(sc)
    d = sample_design(sc)
    cfg = SmootherConfig(h=0.15)
    inp = stage_two_input(d, observe(traj, d, sc), cfg)
    assert estimate_beta_curve(inp, cfg, []) == []
    single = estimate_beta_curve(inp, cfg, [0.5])[0]
    ref = estimate_beta(inp, cfg, 0.5)
    np.testing.assert_array_equal(single.beta, ref.beta)
    curve = estimate_beta_curve(inp, cfg, np.linspace(0.1, 0.9, 21))
    assert len(curve) == 21 and all(e.ok for e in curve)
    truth = sc.beta(np.array([e.t0 for e in curve]))
    assert np.max(np.abs(np.array([e.beta for e in curve]).T - truth)) < 0.5


def test_curve_records_failures():
    inp = random_input(3, 1, 1, 30)
    out = estimate_beta_curve(inp, SmootherConfig(h=0.01), [0.5, 0.9])
    assert all(not e.ok for e in out)
    assert "InsufficientLocalData" in out[0].error and np.isnan(out[0].beta).all()


def test_ztwz_gap_closed_form():
    # p=1, q=0, uniform kernel, X = c: Z'WZ = c^2 N_win / 2 and the limit is n h c^2
    c, n, h = 1.5, 3000, 0.1
    t = np.sort(rng_stream(9, 0).random(n))
    d = TimeDesign(t)
    sc = Scenario(p=1, m=1, beta_fns=(0.0,), covariate_fns=(), x1_init=(c,), n=n)
    traj = solve_trajectories(sc)
    inp = StageTwoInput(d, np.full((1, 1, n), c), np.zeros((1, n)))
    win = d.window(0.5, h)
    expected = abs((win.stop - win.start) / (2 * n * h) - 1)
    gap = ztwz_limit_gap(inp, traj, SmootherConfig(h=h, q=0, kernel="uniform"), 0.5, 1.0)
    assert gap == pytest.approx(expected, abs=1e-12)


def test_ztwz_gap_exact_states_against_direct_formula():
    sc = default_scenario(sigma=0.0, n=600)
    traj = solve_trajectories(sc)
    d = sample_design(sc)
    inp = StageTwoInput(d, traj.at(d.times), traj.deriv1_at(d.times))
    cfg = SmootherConfig(h=0.15)
    t0, h = 0.5, cfg.h
    # direct: H^-1 (Z'WZ) H^-1 with raw powers, versus n h f X0 X0' kron S
    Z, w = build_z(inp, cfg, t0)
    Hinv = np.kron(np.eye(2), np.diag(h ** -np.arange(3.0)))
    M = Hinv @ (Z.T * w) @ Z @ Hinv
    x0 = traj.at(np.array([t0]))[:, :, 0]
    u = np.linspace(-1, 1, 200001)
    Ku = cfg.kernel(u)
    S = np.array([[np.trapezoid(u ** (i + j) * Ku, u) for j in range(3)] for i in range(3)])
    L = d.n * h * np.kron(x0 @ x0.T, S)
    expected = np.linalg.norm(M - L, 2) / np.linalg.norm(L, 2)
    assert ztwz_limit_gap(inp, traj, cfg, t0, 1.0) == pytest.approx(expected, rel=1e-6)


def test_ztwz_gap_shrinks_with_n():
    sc0 = default_scenario()
    traj = solve_trajectories(sc0)

    def med(n):
        h = n ** -0.2
        cfg = SmootherConfig(h=h)
        gaps = []
        for s in range(20):
            sc = sc0.with_(n=n, seed=s)
            d = sample_design(sc)
            inp = stage_two_input(d, observe(traj, d, sc), cfg, t0=0.5)
            gaps.append(ztwz_limit_gap(inp, traj, cfg, 0.5, 1.0))
        return np.median(gaps)

    g = [med(n) for n in (500, 2000, 8000)]
    assert g[0] > g[1] > g[2]
