import json
import math

import numpy as np
import pytest

from _certificates import BUILTIN, moment_certificate, mixture_density, random_smooth_problem, same_moment_perturbations
from _instances import gaussian_matrix, lasso, logcosh_penalty, quadratic, ridge_solution, rng
from gampkit.baselines import AdmmOptions, run_admm, state_from_primal_dual
from gampkit.errors import DomainError, NumericError
from gampkit.gamp import SUM_PRODUCT, GampOptions, run_gamp
from gampkit.penalties import BernoulliGauss, Custom, Laplace, PenaltyArray, Quadratic, TiltedDensity
from gampkit.problem import GlmProblem
from gampkit.variational import (
    GridDensity, GridSpec, VariationalPoint, check_approx_diagonals, check_maxsum_fixed_point,
    check_sumproduct_fixed_point, exact_Q_diagonals, f_sp_eval, f_sp_x_part, grid_posterior_marginals, h_gauss,
    j_functionals, kl_divergence_grid, l_sp_eval, lagrangian_eval, solve_approx_diagonals, solve_tilt_for_moments,
    tilted_grid_density,
)

GOLDEN = (math.sqrt(5) - 1) / 2
LOG2PI = math.log(2 * math.pi)


def scalar_problem():
    return GlmProblem(np.array([[1.0]]), Quadratic(0.0, 1.0), Quadratic(1.0, 1.0))


def converged(problem, variant="max_sum", damping=1.0, tol=1e-12):
    res = run_gamp(problem, GampOptions(variant=variant, damping=damping, tol=tol, max_iters=20000))
    assert res.status == "converged"
    return res.state


# ---------------------------------------------------------------------------
# grid densities


def test_grid_density_normalization_and_moments():
    b = GridDensity.gaussian(0.7, 2.0)
    assert b.total_mass() == pytest.approx(1.0, abs=1e-10)
    assert b.mean() == pytest.approx(0.7, abs=1e-12)
    assert b.var() == pytest.approx(2.0, rel=1e-10)
    assert b.entropy() == pytest.approx(0.5 * math.log(2 * math.pi * math.e * 2.0), abs=1e-10)


def test_grid_density_round_trip_and_validation():
    b = GridDensity.gaussian(0.0, 1.0, points=11)
    c = GridDensity.from_dict(json.loads(json.dumps(b.to_dict())))
    np.testing.assert_array_equal(c.log_weights, b.log_weights)
    assert c.log_norm == b.log_norm
    with pytest.raises(DomainError):
        GridDensity([0.0, 0.0, 1.0], [0.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        GridDensity([0.0, 1.0], [0.0, 0.0], atom_loc=0.5)


def test_atom_density_has_no_entropy():
    td = TiltedDensity(BernoulliGauss(0.4), 0.3, 1.0)
    b = tilted_grid_density(td)
    mean, var = td.moments()
    assert b.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert b.mean() == pytest.approx(mean, abs=1e-10)
    assert b.var() == pytest.approx(var, rel=1e-9)
    with pytest.raises(DomainError):
        b.entropy()


# ---------------------------------------------------------------------------
# Lagrangian and max-sum fixed points


def test_lagrangian_examples():
    p = scalar_problem()
    assert lagrangian_eval(p, [1.0], [2.0], [3.0]) == pytest.approx(4.0, abs=1e-15)
    g = rng(1)
    q = lasso(g, 5, 4)
    x, s = g.standard_normal(4), g.standard_normal(5)
    assert lagrangian_eval(q, x, q.A @ x, s) == pytest.approx(q.objective(x), abs=1e-12)
    z = GlmProblem(np.eye(2), Quadratic(0.0, 1.0), Quadratic(0.0, 1.0))
    assert lagrangian_eval(z, np.zeros(2), np.zeros(2), np.zeros(2)) == 0.0
    with pytest.raises(DomainError):
        lagrangian_eval(z, np.zeros(3), np.zeros(2), np.zeros(2))


def test_maxsum_check_at_admm_oracle():
    p = lasso(rng(2), 20, 30, lam=0.5)
    res = run_admm(p, AdmmOptions(tol=1e-12))
    rep = check_maxsum_fixed_point(p, state_from_primal_dual(p, res.x, res.z, res.s), 1e-8)
    assert rep.passed and max(rep.residuals().values()) <= 1e-8


def test_maxsum_check_detects_perturbation():
    p = lasso(rng(3), 20, 30, lam=0.5)
    st = converged(p, damping=0.9)
    assert check_maxsum_fixed_point(p, st, 1e-6).passed
    bad = st.copy()
    bad.x[4] += 0.1
    rep = check_maxsum_fixed_point(p, bad, 1e-6)
    assert not rep.passed and rep.stationarity_x > 0.05
    assert rep.constraint_residual > 0


def test_maxsum_check_at_ridge_solution():
    p = quadratic(rng(4), 25, 15)
    x, _ = ridge_solution(p)
    z = p.A @ x
    s = -np.array([pen.grad(v) for pen, v in zip(p.output_penalties, z)])
    rep = check_maxsum_fixed_point(p, state_from_primal_dual(p, x, z, s), 1e-10)
    assert rep.passed and max(rep.residuals().values()) <= 1e-10


# ---------------------------------------------------------------------------
# approximate diagonals


def test_approx_diagonals_examples():
    xi_x, xi_z = solve_approx_diagonals(np.zeros((2, 3)), np.array([1.0, 2.0, 4.0]), np.array([3.0, 0.5]))
    np.testing.assert_allclose(xi_x, [1.0, 0.5, 0.25], rtol=1e-15)
    np.testing.assert_allclose(xi_z, [3.0, 0.5], rtol=1e-15)
    xi_x, xi_z = solve_approx_diagonals(np.ones((1, 1)), 1.0, 1.0)
    assert abs(xi_x[0] - GOLDEN) <= 1e-9 and abs(xi_z[0] - GOLDEN) <= 1e-9
    S = rng(5).random((3, 2))
    xi_x, xi_z = solve_approx_diagonals(S, np.ones(2), np.ones(3))
    assert np.max(np.abs(1 / xi_z - (1 + S @ xi_x))) <= 1e-12
    assert np.max(np.abs(1 / xi_x - (1 + S.T @ xi_z))) <= 1e-12


def test_approx_diagonals_nonconvergence():
    with pytest.raises(NumericError):
        solve_approx_diagonals(np.ones((1, 1)), 1.0, 1.0, max_iters=2)
    with pytest.raises(DomainError):
        solve_approx_diagonals(np.ones((1, 1)), 0.0, 1.0)


def test_exact_q_diagonals_examples():
    qx, qz = exact_Q_diagonals(np.zeros((2, 3)), np.array([1.0, 2.0, 4.0]), np.array([3.0, 0.5]))
    np.testing.assert_allclose(qx, [1.0, 0.5, 0.25], rtol=1e-14)
    np.testing.assert_allclose(qz, [3.0, 0.5], rtol=1e-14)
    qx, qz = exact_Q_diagonals(np.ones((1, 1)), 1.0, 1.0)
    assert qx[0] == pytest.approx(0.5, abs=1e-15) and qz[0] == pytest.approx(0.5, abs=1e-15)
    H = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2)
    qx, _ = exact_Q_diagonals(H, 1.0, 1.0)
    np.testing.assert_allclose(qx, 0.5, rtol=1e-14)
    xi_x, _ = solve_approx_diagonals(np.ones((1, 1)), 1.0, 1.0)
    assert abs(xi_x[0] - 0.5) > 0.1


def test_check_approx_diagonals_examples():
    p = quadratic(rng(6), 30, 20)
    st = converged(p, damping=0.9)
    rep = check_approx_diagonals(p, st, 1e-8)
    assert rep.passed and rep.diag_residual_x <= 1e-8 and rep.diag_residual_z <= 1e-8
    sc = converged(GlmProblem(np.eye(1), Quadratic(0.0, 1.0), Quadratic(1.0, 1.0)))
    assert sc.tau_x[0] == pytest.approx(GOLDEN, abs=1e-9)
    bad = st.copy()
    bad.tau_x *= 2
    assert check_approx_diagonals(p, bad, 1e-6).diag_residual_x > 0.1


def test_check_approx_diagonals_drops_laplace_zeros():
    p = lasso(rng(7), 30, 40, lam=0.5)
    st = converged(p, damping=0.9)
    rep = check_approx_diagonals(p, st, 1e-6)
    assert rep.passed
    assert rep.dropped_components == int(np.sum(np.abs(st.x) <= 1e-6))


# ---------------------------------------------------------------------------
# KL functionals


def test_h_gauss_examples():
    assert h_gauss([1.0], [1.0]) == pytest.approx(0.5 + 0.5 * LOG2PI, abs=1e-15)
    assert h_gauss([1.0], [1.0]) == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-15)
    assert h_gauss([2.0], [1.0]) == pytest.approx(1.0 + 0.5 * LOG2PI, abs=1e-15)
    assert h_gauss([1.0, 1.0], [1.0, 1.0]) == pytest.approx(2 * 1.4189385332046727, abs=1e-14)
    with pytest.raises(DomainError):
        h_gauss([1.0], [0.0])


def test_kl_grid_examples():
    pen = Quadratic(0.0, 1.0)
    g = np.linspace(-14, 14, 4001)
    b = GridDensity.from_log_density(g, -g**2 / 2)
    assert kl_divergence_grid(b, pen) == pytest.approx(-0.5 * LOG2PI, abs=1e-10)
    td = TiltedDensity(Laplace(1.0), 0.4, 0.8)
    bt = tilted_grid_density(td)
    neglogz_f = -math.log(2.0)  # int exp(-|u|) = 2
    assert kl_divergence_grid(bt, Laplace(1.0)) >= neglogz_f
    # the kink is off-grid, so the trapezoid value is only second-order accurate
    assert kl_divergence_grid(bt, Laplace(1.0)) == pytest.approx(td.kl_to_penalty(), abs=1e-5)
    b = GridDensity.gaussian(0.0, 1.0)
    assert kl_divergence_grid(b, Custom.zero()) == pytest.approx(-0.5 * math.log(2 * math.pi * math.e), abs=1e-10)


def test_kl_grid_atom_mismatch_is_infinite():
    td = TiltedDensity(BernoulliGauss(0.4), 0.3, 1.0)
    assert kl_divergence_grid(tilted_grid_density(td), Quadratic(0.0, 1.0)) == math.inf
    assert kl_divergence_grid(tilted_grid_density(td), BernoulliGauss(0.4)) == pytest.approx(td.kl_to_penalty(), abs=1e-8)


def test_j_functionals_examples():
    p = GlmProblem(np.array([[1.0], [0.5]]), Quadratic(0.0, 1.0), Quadratic(0.3, 2.0))
    b_x = [GridDensity.gaussian(0.2, 0.7)]
    b_z = [GridDensity.gaussian(0.1, 0.4), GridDensity.gaussian(-0.3, 1.3)]
    v = np.array([b.var() for b in b_z])
    j_kl, j_sp = j_functionals(b_x, b_z, v, p)
    assert abs(j_sp - j_kl) <= 1e-9
    j_kl, j_sp = j_functionals(b_x, b_z, 2 * v, p)
    assert j_sp - j_kl == pytest.approx(2 * 0.5 * (0.5 - 1 + math.log(2)), abs=1e-9)
    g = np.linspace(-8, 8, 4001)
    bimodal = GridDensity.from_log_density(g, np.logaddexp(-(g - 2) ** 2 / 0.5, -(g + 2) ** 2 / 0.5))
    j_kl, j_sp = j_functionals(b_x, [bimodal, b_z[1]], [bimodal.var(), v[1]], p)
    assert j_sp > j_kl + 0.1


@pytest.mark.parametrize("seed", range(5))
def test_j_sp_bounds_j_kl(seed):
    g = rng(200 + seed)
    for _ in range(20):
        p = random_smooth_problem(g)
        b_x = [mixture_density(g) for _ in range(p.n)]
        b_z = [mixture_density(g) for _ in range(p.m)]
        tau = np.exp(g.uniform(-2, 2, p.m))
        j_kl, j_sp = j_functionals(b_x, b_z, tau, p)
        assert j_sp >= j_kl - 1e-12


# ---------------------------------------------------------------------------
# moment matching


def test_solve_tilt_examples():
    td = solve_tilt_for_moments(Quadratic(0.0, 1.0), 0.5, 0.5)
    assert td.q == pytest.approx(1.0, abs=1e-10) and td.tau_q == pytest.approx(1.0, abs=1e-10)
    td = solve_tilt_for_moments(Custom.zero(), 0.3, 1.7)
    assert td.q == pytest.approx(0.3, abs=1e-10) and td.tau_q == pytest.approx(1.7, rel=1e-10)
    _, v0, _ = Laplace(1.0).tilted(0.0, 1.0)
    td = solve_tilt_for_moments(Laplace(1.0), 0.0, float(v0))
    assert abs(td.q) <= 1e-8 and abs(td.tau_q - 1.0) <= 1e-8


@pytest.mark.parametrize("name", list(BUILTIN))
def test_solve_tilt_round_trips(name):
    pen = BUILTIN[name]
    g = rng(300)
    for _ in range(5):
        q, tau = float(g.normal()), float(np.exp(g.uniform(-2, 1.3)))
        mean, var, _ = pen.tilted(q, tau)
        td = solve_tilt_for_moments(pen, float(mean), float(var))
        m2, v2 = td.moments()
        assert abs(m2 - mean) <= 1e-10 * max(1.0, math.sqrt(var))
        assert abs(v2 - var) <= 1e-10 * var


def test_solve_tilt_infeasible_variance():
    # every tilt of a unit-variance Gaussian has variance below 1
    with pytest.raises(NumericError):
        solve_tilt_for_moments(Quadratic(0.0, 1.0), 0.0, 2.0)


@pytest.mark.parametrize("name", list(BUILTIN))
def test_moment_certificate_small(name):
    gap, moment = moment_certificate(BUILTIN[name], rng(400), targets=5, perturbations=40)
    assert gap >= -1e-6
    assert moment <= 1e-10


def test_certificate_rejects_non_tilt_reference():
    # the same-moment family must find lower D when the reference is not a tilt
    pen = Laplace(1.0)
    g = rng(401)
    b_star = tilted_grid_density(TiltedDensity(pen, 0.5, 1.0))
    ref = same_moment_perturbations(b_star, g, 1)[0]
    d_ref = kl_divergence_grid(ref, pen)
    assert kl_divergence_grid(b_star, pen) < d_ref
    gaps = [kl_divergence_grid(b, pen) - d_ref for b in same_moment_perturbations(ref, g, 200)]
    assert min(gaps) < 0


# ---------------------------------------------------------------------------
# F_SP and L_SP


def test_f_sp_flat_input_is_negative_entropy():
    assert f_sp_x_part(Custom.zero(), 0.0, 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi * math.e), abs=1e-10)


def test_f_sp_x_part_minimized_at_prior_mean():
    pen = Quadratic(0.0, 1.0)
    mid = f_sp_x_part(pen, 0.0, 0.5)
    assert f_sp_x_part(pen, 0.3, 0.5) > mid and f_sp_x_part(pen, -0.3, 0.5) > mid
    # closed form: -H(N(x, t)) + E[u^2]/2
    assert f_sp_x_part(pen, 0.3, 0.5) == pytest.approx(-0.5 * math.log(2 * math.pi * math.e * 0.5) + (0.09 + 0.5) / 2, abs=1e-10)


def test_f_sp_matches_grid_j_sp_at_fixed_point():
    p = scalar_problem()
    st = converged(p, SUM_PRODUCT)
    total, fx, fz = f_sp_eval(p, VariationalPoint.from_state(st))
    # minimizing densities: the x tilt at (r, tau_r), the z tilt of variance tau_p with mean z
    b_x = [tilted_grid_density(TiltedDensity(p.input_penalties[0], st.r[0], st.tau_r[0]))]
    b_z = [tilted_grid_density(TiltedDensity(p.output_penalties[0], st.p[0], st.tau_p[0]))]
    assert b_x[0].mean() == pytest.approx(st.x[0], abs=1e-9) and b_z[0].mean() == pytest.approx(st.z[0], abs=1e-9)
    _, j_sp = j_functionals(b_x, b_z, st.tau_p, p)
    assert total == pytest.approx(j_sp, abs=1e-8)
    # Gaussian relaxation: F_SP is not -log Z of the model
    _, log_z = grid_posterior_marginals(p)
    assert abs(total + log_z) > 1e-2


def test_l_sp_examples():
    p = scalar_problem()
    pt = VariationalPoint([0.4], [0.4], [0.5], [0.5], [1.3])
    total, _, _ = f_sp_eval(p, pt)
    assert l_sp_eval(p, pt) == pytest.approx(total, abs=1e-14)
    pt0 = VariationalPoint([0.4], [0.9], [0.5], [0.5], [0.0])
    assert l_sp_eval(p, pt0) == pytest.approx(f_sp_eval(p, pt0)[0], abs=1e-14)
    # hand algebra: Gaussian KL for x plus the z part of a conjugate tilt
    x, t, z, tp, s = 0.2, 0.6, 0.9, 0.7, 0.25
    fx = -0.5 * math.log(2 * math.pi * math.e * t) + (x * x + t) / 2
    # z part: b = N(z, tp * 1/(1+tp)) ... equivalently -(z-q)^2/(2tp) - log Z + log(2 pi tp)/2 with the q below
    q = z * (1 + tp) - tp * 1.0  # mean (q + tp y)/(1 + tp) = z with y = 1, s2 = 1
    logz = -0.5 * math.log(1 + tp) + 0.5 * math.log(2 * math.pi * tp) - (q - 1) ** 2 / (2 * (1 + tp))
    fz = -((z - q) ** 2) / (2 * tp) - logz + 0.5 * math.log(2 * math.pi * tp)
    pt = VariationalPoint([x], [z], [t], [tp], [s])
    assert l_sp_eval(p, pt) == pytest.approx(fx + fz + s * (z - x), abs=1e-9)


def test_variational_point_validation():
    with pytest.raises(DomainError):
        VariationalPoint([0.0], [0.0], [-1.0], [1.0], [0.0])
    with pytest.raises(DomainError):
        VariationalPoint([0.0], [0.0, 1.0], [1.0], [1.0], [0.0])


# ---------------------------------------------------------------------------
# sum-product fixed points


def test_sumproduct_check_scalar():
    p = scalar_problem()
    st = converged(p, SUM_PRODUCT)
    rep = check_sumproduct_fixed_point(p, st, 1e-6, 1e-4)
    assert rep.passed, rep.summary()
    assert rep.tau_s_derivative_residual <= 1e-4 and not rep.skipped
    bad = st.copy()
    bad.tau_p *= 1.1
    rep = check_sumproduct_fixed_point(p, bad, 1e-6)
    assert rep.tau_p_residual > 0 and not rep.passed


def test_sumproduct_check_laplace_2x2():
    g = rng(8)
    A = g.standard_normal((2, 2))
    p = GlmProblem(A, Laplace(0.8), PenaltyArray([Quadratic(float(v), 0.5) for v in g.standard_normal(2)]))
    st = converged(p, SUM_PRODUCT, damping=0.7)
    rep = check_sumproduct_fixed_point(p, st, 1e-6)
    for k in ("moment_residual", "constraint_residual", "tau_p_residual", "tau_s_residual"):
        assert getattr(rep, k) <= 1e-6, k
    assert rep.passed, rep.summary()


def test_sumproduct_check_skips_fd_over_budget(monkeypatch):
    monkeypatch.setenv("GAMPKIT_QUAD_BUDGET", "10")
    p = scalar_problem()
    rep = check_sumproduct_fixed_point(p, converged(p, SUM_PRODUCT), 1e-6)
    assert rep.skipped and rep.tau_s_derivative_residual is None and rep.passed


def test_report_serialization():
    p = scalar_problem()
    rep = check_sumproduct_fixed_point(p, converged(p, SUM_PRODUCT))
    d = json.loads(rep.to_json())
    assert d["format_version"] == 1 and d["check"] == "theorem2"
    assert all(v >= 0 for v in rep.residuals().values())
    assert "PASS" in rep.summary()


# ---------------------------------------------------------------------------
# brute-force posterior


def test_grid_posterior_scalar():
    marg, log_z = grid_posterior_marginals(scalar_problem())
    assert marg[0].mean() == pytest.approx(0.5, abs=1e-8)
    assert marg[0].var() == pytest.approx(0.5, abs=1e-8)
    # z = x here, so the output marginal is the same Gaussian
    assert marg[1].mean() == pytest.approx(0.5, abs=1e-8)
    # Z = int exp(-x^2/2 - (x-1)^2/2) dx = sqrt(pi) e^{-1/4}
    assert log_z == pytest.approx(0.5 * math.log(math.pi) - 0.25, abs=1e-8)


def test_grid_posterior_decoupled():
    pens = [Laplace(1.0), logcosh_penalty()]
    A = np.diag([1.0, 2.0])
    outs = PenaltyArray([Quadratic(0.7, 0.8), Quadratic(-0.4, 1.5)])
    marg, _ = grid_posterior_marginals(GlmProblem(A, PenaltyArray(pens), outs))
    # tensor trapezoid: spectral for the smooth component, O(h^2) across the Laplace kink
    tols = (1e-4, 1e-9)
    for j in range(2):
        # x_j | y: prior f_j times Gaussian in x_j with mean y/a and variance s2/a^2
        a, y, s2 = A[j, j], outs[j].y, outs[j].sigma2
        mean, var, _ = pens[j].tilted(y / a, s2 / a**2)
        assert marg[j].mean() == pytest.approx(float(mean), abs=tols[j])
        assert marg[j].var() == pytest.approx(float(var), rel=tols[j])


def test_grid_posterior_lasso_gap_is_reported():
    g = rng(9)
    A = g.standard_normal((3, 2))
    p = GlmProblem(A, Laplace(1.0), PenaltyArray([Quadratic(float(v), 0.5) for v in g.standard_normal(3)]))
    marg, _ = grid_posterior_marginals(p)
    st = converged(p, SUM_PRODUCT, damping=0.7)
    gap = np.abs(st.x - [m.mean() for m in marg[:2]])
    assert np.all(np.isfinite(gap))


def test_grid_posterior_limits():
    with pytest.raises(DomainError):
        grid_posterior_marginals(GlmProblem(np.ones((1, 4)), Quadratic(0.0, 1.0), Quadratic(0.0, 1.0)))
    with pytest.raises(DomainError):
        grid_posterior_marginals(GlmProblem(np.eye(1), BernoulliGauss(0.5), Quadratic(0.0, 1.0)))
    with pytest.raises(DomainError):
        GridSpec(points=2)
