"""Variational characterizations of GAMP fixed points, and their verifiers.

Max-sum fixed points are critical points of ``L(x, z, s) = F(x, z) + s^T (z - A x)``
with ``(tau_x, tau_s)`` solving the approximate-diagonal equations.
Sum-product fixed points are critical points of
``L_SP = F_SP(x, z, tau_x, tau_p) + s^T (z - A x)``, where ``F_SP`` is built
from moment-constrained KL minimizations solved by tilted densities.

Grid oracles (:class:`GridDensity`, :func:`grid_posterior_marginals`) use the
trapezoid rule and are independent of the closed-form tilt kernels.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
from scipy import optimize

from .errors import DomainError, NumericError
from .gamp import MAX_SUM, SUM_PRODUCT
from .penalties import Laplace, TiltedDensity, subdiff_distance
from .quadrature import DEFAULT_POINTS, quad_budget

_LOG2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# grid densities


@dataclass
class GridDensity:
    """Univariate density sampled on a grid, optionally with one point mass.

    The density is ``exp(log_weights - log_norm)`` on the grid (integrated by
    the trapezoid rule) plus an atom of mass ``exp(atom_log_weight - log_norm)``
    at ``atom_loc``.  ``log_norm`` is computed when not given.
    """

    grid: np.ndarray
    log_weights: np.ndarray
    log_norm: float = None
    atom_loc: float = None
    atom_log_weight: float = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.log_weights.shape or self.grid.size < 2:
            raise DomainError("grid and log_weights must be matching 1-D arrays")
        if not np.all(np.diff(self.grid) > 0):
            raise DomainError("grid must be strictly increasing")
        if (self.atom_loc is None) != (self.atom_log_weight is None):
            raise DomainError("atom_loc and atom_log_weight go together")
        if self.log_norm is None:
            shift = np.max(self.log_weights)
            if not np.isfinite(shift):
                raise NumericError("grid density has no mass")
            total = np.trapezoid(np.exp(self.log_weights - shift), self.grid)
            log_norm = math.log(total) + shift
            if self.atom_log_weight is not None:
                log_norm = np.logaddexp(log_norm, self.atom_log_weight)
            self.log_norm = float(log_norm)

    @classmethod
    def from_log_density(cls, grid, log_density, atom=None):
        """Normalize ``exp(log_density)`` on ``grid``; ``atom`` is ``(loc, log_weight)``."""
        loc, lw = (None, None) if atom is None else atom
        return cls(grid, log_density, atom_loc=loc, atom_log_weight=lw)

    @classmethod
    def gaussian(cls, mean, var, half_width=12.0, points=DEFAULT_POINTS):
        sd = math.sqrt(var)
        g = np.linspace(mean - half_width * sd, mean + half_width * sd, points)
        return cls.from_log_density(g, -((g - mean) ** 2) / (2.0 * var))

    def density(self):
        return np.exp(self.log_weights - self.log_norm)

    @property
    def atom_mass(self):
        if self.atom_log_weight is None:
            return 0.0
        return math.exp(self.atom_log_weight - self.log_norm)

    def total_mass(self):
        return float(np.trapezoid(self.density(), self.grid)) + self.atom_mass

    def expect(self, fn):
        """``E[fn(u)]`` including the atom."""
        out = float(np.trapezoid(self.density() * fn(self.grid), self.grid))
        if self.atom_loc is not None:
            out += self.atom_mass * float(fn(np.asarray(self.atom_loc)))
        return out

    def mean(self):
        return self.expect(lambda u: u)

    def var(self):
        mu = self.mean()
        return self.expect(lambda u: (u - mu) ** 2)

    def entropy(self):
        """Differential entropy ``-int b log b``; undefined with an atom."""
        if self.atom_loc is not None:
            raise DomainError("differential entropy is undefined for a density with a point mass")
        b = self.density()
        lb = self.log_weights - self.log_norm
        return -float(np.trapezoid(np.where(b > 0, b * lb, 0.0), self.grid))

    def to_dict(self):
        d = {"grid": self.grid.tolist(), "log_weights": self.log_weights.tolist(), "log_norm": self.log_norm}
        if self.atom_loc is not None:
            d["atom_loc"] = self.atom_loc
            d["atom_log_weight"] = self.atom_log_weight
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["grid"], d["log_weights"], d.get("log_norm"), d.get("atom_loc"), d.get("atom_log_weight"))


def tilted_grid_density(td, half_width=12.0, points=DEFAULT_POINTS):
    """Discretize a :class:`TiltedDensity` on a grid around its mean, keeping any atom."""
    mean, var = td.moments()
    sd = math.sqrt(max(var, td.tau_q))
    g = np.linspace(mean - half_width * sd, mean + half_width * sd, points)
    pen = td.penalty
    logd = -pen.continuous_neglog(g) - (g - td.q) ** 2 / (2.0 * td.tau_q)
    atom = pen.atom()
    if atom is None:
        return GridDensity.from_log_density(g, logd)
    loc, mass = atom
    return GridDensity.from_log_density(g, logd, (loc, math.log(mass) - (loc - td.q) ** 2 / (2.0 * td.tau_q)))


def kl_divergence_grid(b, pen):
    """``D(b || exp(-f)) = int b (log b + f)`` by the trapezoid rule.

    ``exp(-f)`` is an unnormalized measure.  A point mass of ``b`` is compared
    with the matching point mass of the penalty (Bernoulli-Gauss spike);
    ``0 log 0`` counts as 0.
    """
    d = b.density()
    lb = b.log_weights - b.log_norm
    integrand = np.where(d > 0, d * (lb + pen.continuous_neglog(b.grid)), 0.0)
    out = float(np.trapezoid(integrand, b.grid))
    mass = b.atom_mass
    if mass > 0:
        atom = pen.atom()
        if atom is None or atom[0] != b.atom_loc:
            return math.inf
        out += mass * (math.log(mass) - math.log(atom[1]))
    return out


# ---------------------------------------------------------------------------
# Lagrangians and max-sum verification


def lagrangian_eval(problem, x, z, s):
    """``sum f_x(x) + sum f_z(z) + s^T (z - A x)``."""
    x, z, s = (np.asarray(v, dtype=float) for v in (x, z, s))
    if x.shape != (problem.n,) or z.shape != (problem.m,) or s.shape != (problem.m,):
        raise DomainError("x, z, s dimensions do not match the problem")
    return problem.input_penalties.total(x) + problem.output_penalties.total(z) + float(s @ (z - problem.A @ x))


_FD_RESIDUALS = ("tau_s_derivative_residual", "stationarity_x", "stationarity_z", "stationarity_tau_x")


@dataclass
class FixedPointReport:
    """Residuals of a fixed-point check.

    Residuals that a check does not compute stay ``None``.  ``worst`` maps a
    residual name to a label of its worst component, ``"[3]"`` or ``"z[1]"``.  Finite-difference
    residuals of the sum-product check are judged against ``fd_tol``, every
    other residual against ``tol``.
    """

    check: str
    tol: float
    fd_tol: float = None
    constraint_residual: float = None
    stationarity_x: float = None
    stationarity_z: float = None
    stationarity_tau_x: float = None
    diag_residual_x: float = None
    diag_residual_z: float = None
    moment_residual: float = None
    tau_p_residual: float = None
    tau_s_residual: float = None
    tau_s_derivative_residual: float = None
    worst: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    dropped_components: int = 0
    passed: bool = False

    def residuals(self):
        names = (
            "constraint_residual", "stationarity_x", "stationarity_z", "stationarity_tau_x",
            "diag_residual_x", "diag_residual_z", "moment_residual", "tau_p_residual",
            "tau_s_residual", "tau_s_derivative_residual",
        )
        return {k: getattr(self, k) for k in names if getattr(self, k) is not None}

    def failures(self):
        out = []
        for k, v in self.residuals().items():
            limit = self.fd_tol if (self.check == "theorem2" and k in _FD_RESIDUALS) else self.tol
            if not v <= limit:
                out.append(k)
        return out

    def finalize(self):
        self.passed = not self.failures()
        return self

    def to_dict(self):
        d = asdict(self)
        d["format_version"] = 1
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self):
        lines = [f"check: {self.check}  tol: {self.tol:g}" + (f"  fd_tol: {self.fd_tol:g}" if self.fd_tol else "")]
        bad = set(self.failures())
        for k, v in self.residuals().items():
            where = f"  (component {self.worst[k]})" if k in self.worst else ""
            lines.append(f"  {k:<28s} {v:.3e}{'  FAIL' if k in bad else ''}{where}")
        if self.skipped:
            lines.append(f"  skipped: {', '.join(self.skipped)}")
        if self.dropped_components:
            lines.append(f"  dropped components: {self.dropped_components}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _inf_norm(report, name, values, labels=None):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        setattr(report, name, 0.0)
        return
    bad = ~np.isfinite(values)
    idx = int(np.argmax(np.where(bad, np.inf, values)))
    setattr(report, name, float(np.inf if bad.any() else values[idx]))
    report.worst[name] = labels[idx] if labels is not None else f"[{idx}]"


def enlarged_subdifferential(pens, u, radius):
    """Union of the subdifferentials of ``f`` over ``[u - radius, u + radius]``.

    For convex ``f`` this is the exact union; for non-convex kinds the three
    sampled intervals are merged.  A damped iterate approaches a kink only
    geometrically, so an exact-point test would reject states that sit
    within round-off of a true critical point.
    """
    u = np.asarray(u, dtype=float)
    los, his = zip(*(pens.subdifferential(u + d) for d in (-radius, 0.0, radius)))
    return np.minimum.reduce(los), np.maximum.reduce(his)


def check_maxsum_fixed_point(problem, state, tol=1e-6, kink_radius=None):
    """Theorem-1 check: is ``(x, z, s)`` a critical point of the Lagrangian?

    The dual is recovered from the state as ``s = (z - p) / tau_p``.  Reports
    ``|z - A x|``, the distance of ``A^T s`` to ``df_x(x)`` and the distance of
    ``-s`` to ``df_z(z)`` (interval distances for nonsmooth penalties).
    Subdifferentials are taken over a ball of radius ``kink_radius``
    (default ``tol``) around the iterate.
    """
    rep = FixedPointReport("theorem1", tol)
    radius = tol if kink_radius is None else kink_radius
    if not np.isfinite(radius):
        radius = 0.0
    s = (state.z - state.p) / state.tau_p
    _inf_norm(rep, "constraint_residual", np.abs(state.z - problem.A @ state.x))
    lo, hi = enlarged_subdifferential(problem.input_penalties, state.x, radius)
    _inf_norm(rep, "stationarity_x", subdiff_distance(lo, hi, problem.A.T @ s))
    lo, hi = enlarged_subdifferential(problem.output_penalties, state.z, radius)
    _inf_norm(rep, "stationarity_z", subdiff_distance(lo, hi, -s))
    return rep.finalize()


# ---------------------------------------------------------------------------
# approximate diagonals


def _positive(v, name):
    v = np.asarray(v, dtype=float)
    if not np.all(v > 0) or not np.all(np.isfinite(v)):
        raise DomainError(f"{name} must be positive and finite")
    return v


def approx_diagonal_residual(S, d_x, d_z, xi_x, xi_z):
    """Relative residuals of ``1/xi_z = 1/d_z + S xi_x`` and ``1/xi_x = d_x + S^T xi_z``."""
    r_z = np.abs(xi_z * (1.0 / d_z + S @ xi_x) - 1.0)
    r_x = np.abs(xi_x * (d_x + S.T @ xi_z) - 1.0)
    return r_x, r_z


def solve_approx_diagonals(S, d_x, d_z, tol=1e-12, damping=1.0, max_iters=100_000):
    """Positive solution ``(xi_x, xi_z)`` of the approximate-diagonal equations.

    Iterates ``xi_z = d_z / (1 + d_z S xi_x)``, ``xi_x = 1 / (d_x + S^T xi_z)``
    from ``xi_x = 1 / d_x`` until the relative residual of both equations is
    at most ``tol``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or np.any(S < 0):
        raise DomainError("S must be a non-negative matrix")
    m, n = S.shape
    d_x = np.broadcast_to(_positive(d_x, "d_x"), (n,))
    d_z = np.broadcast_to(_positive(d_z, "d_z"), (m,))
    if not 0.0 < damping <= 1.0:
        raise DomainError("damping must lie in (0, 1]")
    xi_x = 1.0 / d_x
    res = np.inf
    for _ in range(max_iters):
        xi_z = d_z / (1.0 + d_z * (S @ xi_x))
        new = 1.0 / (d_x + S.T @ xi_z)
        xi_x = damping * new + (1.0 - damping) * xi_x
        xi_z = d_z / (1.0 + d_z * (S @ xi_x))
        r_x, r_z = approx_diagonal_residual(S, d_x, d_z, xi_x, xi_z)
        res = float(max(r_x.max(), r_z.max()))
        if res <= tol:
            return xi_x, xi_z
    raise NumericError(f"approximate diagonals did not converge (residual {res:.3g})", achieved=res)


def exact_Q_diagonals(A, d_x, d_z):
    """Diagonals of ``(D_x + A^T D_z A)^{-1}`` and ``(D_z^{-1} + A D_x^{-1} A^T)^{-1}``."""
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    if max(m, n) > 500:
        raise DomainError("exact_Q_diagonals is limited to dimensions <= 500")
    d_x = np.broadcast_to(_positive(d_x, "d_x"), (n,))
    d_z = np.broadcast_to(_positive(d_z, "d_z"), (m,))
    try:
        qx = scipy.linalg.cho_solve(scipy.linalg.cho_factor(np.diag(d_x) + A.T @ (d_z[:, None] * A)), np.eye(n))
        qz = scipy.linalg.cho_solve(scipy.linalg.cho_factor(np.diag(1.0 / d_z) + (A / d_x) @ A.T), np.eye(m))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Q matrix is singular: {exc}") from exc
    return np.diag(qx).copy(), np.diag(qz).copy()


def _curvatures(pens, u, report, side, radius):
    """Componentwise ``f''(u)`` with the Laplace convention; returns (d, keep mask)."""
    d = np.asarray(pens.curvature(u), dtype=float)
    keep = np.ones(len(pens), dtype=bool)
    for i, pen in enumerate(pens):
        near_kink = any(abs(u[i] - k) <= radius for k in pen.kinks())
        if near_kink or not np.isfinite(d[i]):
            if isinstance(pen, Laplace):
                keep[i] = False
                d[i] = 0.0
            else:
                raise DomainError(f"{side} curvature undefined at component {i} ({pen.kind})")
    report.dropped_components += int((~keep).sum())
    return d, keep


def check_approx_diagonals(problem, state, tol=1e-6, tau_min=1e-12, tau_max=1e12, kink_radius=None):
    """Do ``(tau_x, tau_s)`` solve the approximate-diagonal equations at the fixed point?

    ``d_x = f_x''(x)`` and ``d_z = f_z''(z)``.  The residuals compare
    ``tau_x`` with ``1 / (d_x + S^T tau_s)`` and ``tau_s`` with
    ``d_z / (1 + d_z S tau_x)``, relative to the right-hand sides clipped to
    ``[tau_min, tau_max]`` (the GAMP clamp).  Laplace components within
    ``kink_radius`` (default ``tol``) of their kink have no curvature and are
    dropped; the count is reported.
    """
    rep = FixedPointReport("approx_diagonals", tol)
    radius = tol if kink_radius is None else kink_radius
    S = problem.S
    d_x, keep_x = _curvatures(problem.input_penalties, state.x, rep, "input", radius)
    d_z, keep_z = _curvatures(problem.output_penalties, state.z, rep, "output", radius)
    # a dropped output leaves its tau_s row undetermined; it cannot be checked
    rhs_x = np.clip(1.0 / (d_x + S.T @ state.tau_s), tau_min, tau_max)
    rhs_z = np.clip(d_z / (1.0 + d_z * (S @ state.tau_x)), tau_min, tau_max)
    r_x = np.where(keep_x, np.abs(state.tau_x - rhs_x) / rhs_x, 0.0)
    r_z = np.where(keep_z, np.abs(state.tau_s - rhs_z) / rhs_z, 0.0)
    _inf_norm(rep, "diag_residual_x", r_x)
    _inf_norm(rep, "diag_residual_z", r_z)
    return rep.finalize()


# ---------------------------------------------------------------------------
# KL functionals


def h_gauss(var_z, tau_p):
    """Gaussian entropy bound ``sum var/(2 tau) + log(2 pi tau)/2``."""
    var_z = _positive(var_z, "var_z")
    tau_p = _positive(tau_p, "tau_p")
    return float(np.sum(var_z / (2.0 * tau_p) + 0.5 * (_LOG2PI + np.log(tau_p))))


def j_functionals(b_x, b_z, tau_p, problem):
    """``(J_KL, J_SP)`` for separable beliefs ``b_x`` (n) and ``b_z`` (m).

    ``J_KL`` uses the sum of marginal entropies of ``b_z``; ``J_SP`` replaces
    it by :func:`h_gauss` of the ``b_z`` variances.
    """
    if len(b_x) != problem.n or len(b_z) != problem.m:
        raise DomainError("need one density per input and per output component")
    tau_p = np.broadcast_to(_positive(tau_p, "tau_p"), (problem.m,))
    d = sum(kl_divergence_grid(b, p) for b, p in zip(b_x, problem.input_penalties))
    d += sum(kl_divergence_grid(b, p) for b, p in zip(b_z, problem.output_penalties))
    j_kl = d + sum(b.entropy() for b in b_z)
    j_sp = d + h_gauss(np.array([b.var() for b in b_z]), tau_p)
    return float(j_kl), float(j_sp)


def _moment_residual(pen, q, log_tau, target_mean, target_var):
    mean, var, _ = pen.tilted(q, math.exp(log_tau))
    return np.array([(float(mean) - target_mean) / math.sqrt(target_var), math.log(float(var) / target_var)])


def solve_tilt_for_moments(pen, target_mean, target_var, tol=1e-11, max_iters=200):
    """Tilt ``(q, tau_q)`` whose tilted density has the given mean and variance.

    Newton's method in ``(q, log tau_q)`` with a central-difference Jacobian
    and step halving, started at ``(target_mean, target_var)``.  The scaled
    residuals ``(mean - m)/sqrt(v)`` and ``log(var / v)`` must fall below
    ``tol``.
    """
    target_mean = float(target_mean)
    target_var = float(target_var)
    if not (math.isfinite(target_mean) and target_var > 0 and math.isfinite(target_var)):
        raise DomainError("targets need a finite mean and a positive variance")
    x = np.array([target_mean, math.log(target_var)])
    res = _moment_residual(pen, x[0], x[1], target_mean, target_var)
    norm = float(np.max(np.abs(res)))
    for _ in range(max_iters):
        if norm <= tol:
            return TiltedDensity(pen, float(x[0]), math.exp(x[1]))
        jac = np.empty((2, 2))
        steps = (1e-6 * math.sqrt(target_var) + 1e-7 * abs(x[0]), 1e-6)
        for k in range(2):
            e = np.zeros(2)
            e[k] = steps[k]
            jac[:, k] = (
                _moment_residual(pen, *(x + e), target_mean, target_var)
                - _moment_residual(pen, *(x - e), target_mean, target_var)
            ) / (2.0 * steps[k])
        try:
            delta = -np.linalg.solve(jac, res)
        except np.linalg.LinAlgError:
            break
        # keep log tau within a sane range per step
        delta[1] = float(np.clip(delta[1], -2.0, 2.0))
        lam = 1.0
        while lam > 1e-6:
            trial = x + lam * delta
            try:
                r_new = _moment_residual(pen, trial[0], trial[1], target_mean, target_var)
            except (NumericError, FloatingPointError, ValueError):
                r_new = None
            if r_new is not None and np.all(np.isfinite(r_new)) and np.max(np.abs(r_new)) < norm:
                break
            lam *= 0.5
        else:
            break
        x, res = trial, r_new
        norm = float(np.max(np.abs(res)))
    if norm <= tol:
        return TiltedDensity(pen, float(x[0]), math.exp(x[1]))
    raise NumericError(
        f"no tilt reproduces mean {target_mean:.6g} and variance {target_var:.6g} (residual {norm:.3g})",
        achieved=norm,
    )


def _tilt_for_mean(pen, target_mean, tau):
    """Centre ``q`` such that the tilt at ``(q, tau)`` has the given mean."""

    def g(q):
        return float(pen.tilted(q, tau)[0]) - target_mean

    step = 2.0 * math.sqrt(tau) + 1.0
    lo = hi = target_mean
    g_lo = g_hi = g(target_mean)
    if g_lo == 0.0:
        return target_mean
    for _ in range(200):
        if g_lo > 0:
            hi, g_hi = lo, g_lo
            lo -= step
            g_lo = g(lo)
        elif g_hi < 0:
            lo, g_lo = hi, g_hi
            hi += step
            g_hi = g(hi)
        if g_lo <= 0 <= g_hi:
            return optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        step *= 2.0
    raise NumericError(f"no tilt of variance {tau:.6g} has mean {target_mean:.6g}")


@dataclass
class VariationalPoint:
    """Arguments of ``L_SP``: means, variances and the dual vector."""

    x: np.ndarray
    z: np.ndarray
    tau_x: np.ndarray
    tau_p: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        for k in ("x", "z", "tau_x", "tau_p", "s"):
            setattr(self, k, np.atleast_1d(np.asarray(getattr(self, k), dtype=float)))
        if self.x.shape != self.tau_x.shape or not (self.z.shape == self.tau_p.shape == self.s.shape):
            raise DomainError("inconsistent variational point dimensions")
        _positive(self.tau_x, "tau_x")
        _positive(self.tau_p, "tau_p")

    def check(self, problem):
        if self.x.shape != (problem.n,) or self.z.shape != (problem.m,):
            raise DomainError("variational point does not match the problem dimensions")

    @classmethod
    def from_state(cls, state):
        return cls(state.x, state.z, state.tau_x, state.tau_p, state.s)


def f_sp_x_part(pen, x_bar, tau_bar):
    """``min D(b || e^{-f})`` over ``b`` with mean ``x_bar`` and variance ``tau_bar``."""
    return solve_tilt_for_moments(pen, x_bar, tau_bar).kl_to_penalty()


def f_sp_z_part(pen, z_bar, tau_bar):
    """``min D(b || e^{-f}) + H_gauss(b, tau_bar)`` over ``b`` with mean ``z_bar``.

    The minimizer is the tilt of variance ``tau_bar`` whose mean is ``z_bar``;
    the value collapses to ``-(z_bar - q)^2 / (2 tau) - log Z + log(2 pi tau) / 2``.
    """
    q = _tilt_for_mean(pen, z_bar, tau_bar)
    logz = float(pen.tilted(q, tau_bar)[2])
    return -((z_bar - q) ** 2) / (2.0 * tau_bar) - logz + 0.5 * (_LOG2PI + math.log(tau_bar))


def f_sp_eval(problem, point):
    """``F_SP = F^x_SP(x, tau_x) + F^z_SP(z, tau_p)`` and its per-component parts."""
    point.check(problem)
    fx = np.array([f_sp_x_part(p, a, t) for p, a, t in zip(problem.input_penalties, point.x, point.tau_x)])
    fz = np.array([f_sp_z_part(p, a, t) for p, a, t in zip(problem.output_penalties, point.z, point.tau_p)])
    return float(fx.sum() + fz.sum()), fx, fz


def l_sp_eval(problem, point):
    """``L_SP = F_SP + s^T (z - A x)``."""
    total, _, _ = f_sp_eval(problem, point)
    return total + float(point.s @ (point.z - problem.A @ point.x))


def _central(fn, at):
    h = 1e-4 * max(1.0, abs(at))
    return (fn(at + h) - fn(at - h)) / (2.0 * h)


def check_sumproduct_fixed_point(problem, state, tol=1e-6, fd_tol=1e-4):
    """Theorem-2 check at a converged sum-product state.

    Moment consistency of ``(x, tau_x)`` with the tilt at ``(r, tau_r)`` and
    of ``(z, tau_z)`` with the tilt at ``(p, tau_p)``; the constraints
    ``z = A x`` and ``tau_p = S tau_x``; the identity
    ``tau_s = 1/tau_p - tau_z/tau_p^2``.  When ``n m`` quadrature problems fit
    in the budget it also checks by central differences that
    ``dL_SP/dtau_p = tau_s/2`` and that ``L_SP`` is stationary in ``x``, ``z``
    and (through ``tau_p = S tau_x``) in ``tau_x``.
    """
    rep = FixedPointReport("theorem2", tol, fd_tol=fd_tol)
    A, S = problem.A, problem.S
    fx, fz = problem.input_penalties, problem.output_penalties
    mx, vx, _ = fx.tilted(state.r, state.tau_r)
    mz, vz, _ = fz.tilted(state.p, state.tau_p)
    moment = np.concatenate([
        np.maximum(np.abs(state.x - mx), np.abs(state.tau_x - vx) / vx),
        np.maximum(np.abs(state.z - mz), np.abs(state.tau_z - vz) / vz),
    ])
    labels = [f"x[{j}]" for j in range(problem.n)] + [f"z[{i}]" for i in range(problem.m)]
    _inf_norm(rep, "moment_residual", moment, labels)
    _inf_norm(rep, "constraint_residual", np.abs(state.z - A @ state.x))
    _inf_norm(rep, "tau_p_residual", np.abs(state.tau_p - S @ state.tau_x) / state.tau_p)
    tau_s_rhs = 1.0 / state.tau_p - state.tau_z / state.tau_p**2
    _inf_norm(rep, "tau_s_residual", np.abs(state.tau_s - tau_s_rhs) / np.abs(state.tau_s))

    if problem.n * problem.m * DEFAULT_POINTS > quad_budget():
        rep.skipped.append("finite-difference checks (n*m exceeds GAMPKIT_QUAD_BUDGET)")
        return rep.finalize()

    # L_SP is separable, so each derivative only needs the affected component
    s = state.s
    grad_tp = np.empty(problem.m)
    dz = np.empty(problem.m)
    for i, pen in enumerate(fz):
        zi, ti = float(state.z[i]), float(state.tau_p[i])
        grad_tp[i] = _central(lambda t: f_sp_z_part(pen, zi, t), ti)
        dz[i] = abs(_central(lambda a: f_sp_z_part(pen, a, ti), zi) + s[i])
    dtau = np.abs(grad_tp - state.tau_s / 2.0)
    ats = A.T @ s
    dx = np.empty(problem.n)
    dtx = np.empty(problem.n)
    for j, pen in enumerate(fx):
        xj, tj = float(state.x[j]), float(state.tau_x[j])
        dx[j] = abs(_central(lambda a: f_sp_x_part(pen, a, tj), xj) - ats[j])
        # tau_p = S tau_x carries the output side into the tau_x derivative
        dtx[j] = abs(_central(lambda t: f_sp_x_part(pen, xj, t), tj) + S[:, j] @ grad_tp)
    _inf_norm(rep, "tau_s_derivative_residual", dtau)
    _inf_norm(rep, "stationarity_z", dz)
    _inf_norm(rep, "stationarity_x", dx)
    _inf_norm(rep, "stationarity_tau_x", dtx)
    return rep.finalize()


# ---------------------------------------------------------------------------
# brute-force posterior oracle


@dataclass
class GridSpec:
    """Tensor grid for :func:`grid_posterior_marginals`.

    Each axis spans ``half_width`` posterior standard deviations around the
    posterior mean; both are found by re-centring passes.
    """

    points: int = 401
    half_width: float = 10.0
    passes: int = 4

    def __post_init__(self):
        if self.points < 3 or self.half_width <= 0 or self.passes < 1:
            raise DomainError("grid spec needs points >= 3, half_width > 0, passes >= 1")


def _trapz_all_but(w, axis, grids):
    out = w
    for ax in reversed(range(w.ndim)):
        if ax != axis:
            out = np.trapezoid(out, grids[ax], axis=ax)
    return out


def grid_posterior_marginals(problem, grid_spec=None):
    """Brute-force marginals of ``p(x) ~ exp(-f_x(x) - f_z(A x))`` and ``log Z``.

    Returns ``(marginals, log_evidence)`` with ``n`` input marginals followed
    by ``m`` output marginals.  Output marginal ``i`` is integrated in the
    coordinates ``(x without k, z_i)`` where ``k`` is the largest entry of row
    ``i``, so ``z = A x`` holds exactly.  Limited to ``n <= 3`` and to
    ``GAMPKIT_QUAD_BUDGET`` grid nodes per tensor grid.
    """
    spec = grid_spec or GridSpec()
    A = problem.A
    m, n = A.shape
    if n > 3:
        raise DomainError("grid_posterior_marginals supports n <= 3")
    if spec.points**n > quad_budget():
        raise DomainError(f"{spec.points}^{n} grid nodes exceed the quadrature budget")
    for pen in list(problem.input_penalties) + list(problem.output_penalties):
        if pen.atom() is not None:
            raise DomainError("grid_posterior_marginals needs absolutely continuous penalties")
    fx, fz = problem.input_penalties, problem.output_penalties

    def logjoint(xs):
        # xs: list of n broadcastable coordinate arrays
        out = sum(fx[j].value(xs[j]) for j in range(n))
        z = sum(A[:, j].reshape((m,) + (1,) * np.ndim(xs[0])) * xs[j] for j in range(n))
        out = out + sum(fz[i].value(z[i]) for i in range(m))
        return -out

    center = np.zeros(n)
    scale = np.array([max(1.0, math.sqrt(v)) for v in fx.prior_moments()[1]])
    for _ in range(spec.passes):
        grids = [np.linspace(c - spec.half_width * sc, c + spec.half_width * sc, spec.points) for c, sc in zip(center, scale)]
        mesh = np.meshgrid(*grids, indexing="ij")
        lj = logjoint(mesh)
        shift = float(np.max(lj))
        w = np.exp(lj - shift)
        new_center = np.empty(n)
        new_scale = np.empty(n)
        for j in range(n):
            mj = _trapz_all_but(w, j, grids)
            z0 = np.trapezoid(mj, grids[j])
            new_center[j] = np.trapezoid(mj * grids[j], grids[j]) / z0
            new_scale[j] = math.sqrt(max(np.trapezoid(mj * (grids[j] - new_center[j]) ** 2, grids[j]) / z0, 1e-300))
        done = np.allclose(new_center, center, atol=1e-3 * new_scale.min()) and np.allclose(new_scale, scale, rtol=1e-3)
        center, scale = new_center, new_scale
        if done:
            break
    grids = [np.linspace(c - spec.half_width * sc, c + spec.half_width * sc, spec.points) for c, sc in zip(center, scale)]
    mesh = np.meshgrid(*grids, indexing="ij")
    lj = logjoint(mesh)
    shift = float(np.max(lj))
    w = np.exp(lj - shift)
    total = w
    for ax in reversed(range(n)):
        total = np.trapezoid(total, grids[ax], axis=ax)
    log_evidence = math.log(float(total)) + shift
    marginals = []
    for j in range(n):
        mj = _trapz_all_but(w, j, grids)
        with np.errstate(divide="ignore"):
            marginals.append(GridDensity.from_log_density(grids[j], np.log(mj) + shift))

    # posterior covariance of x sets the z-grid extents
    mean_x = center
    cov = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            cov[a, b] = _integrate(w * (mesh[a] - mean_x[a]) * (mesh[b] - mean_x[b]), grids) / float(total)
    for i in range(m):
        k = int(np.argmax(np.abs(A[i])))
        a_ik = A[i, k]
        mz = float(A[i] @ mean_x)
        sz = math.sqrt(max(float(A[i] @ cov @ A[i]), 1e-300))
        zg = np.linspace(mz - spec.half_width * sz, mz + spec.half_width * sz, spec.points)
        others = [j for j in range(n) if j != k]
        sub_grids = [grids[j] for j in others] + [zg]
        sub_mesh = np.meshgrid(*sub_grids, indexing="ij")
        xs = [None] * n
        for pos, j in enumerate(others):
            xs[j] = sub_mesh[pos]
        zc = sub_mesh[-1]
        xs[k] = (zc - sum(A[i, j] * xs[j] for j in others)) / a_ik
        lj_z = logjoint(xs) - math.log(abs(a_ik))
        wz = np.exp(lj_z - shift)
        mz_dens = _trapz_all_but(wz, len(sub_grids) - 1, sub_grids)
        with np.errstate(divide="ignore"):
            marginals.append(GridDensity.from_log_density(zg, np.log(mz_dens) + shift))
    return marginals, log_evidence


def _integrate(w, grids):
    out = w
    for ax in reversed(range(w.ndim)):
        out = np.trapezoid(out, grids[ax], axis=ax)
    return float(out)


def state_variant_check(state, variant):
    if state.variant != variant:
        raise DomainError(f"state was produced by {state.variant}, expected {variant}")


__all__ = [
    "GridDensity", "GridSpec", "FixedPointReport", "VariationalPoint", "MAX_SUM", "SUM_PRODUCT",
    "approx_diagonal_residual", "check_approx_diagonals", "check_maxsum_fixed_point",
    "check_sumproduct_fixed_point", "exact_Q_diagonals", "f_sp_eval", "f_sp_x_part", "f_sp_z_part",
    "grid_posterior_marginals", "h_gauss", "j_functionals", "kl_divergence_grid", "l_sp_eval",
    "lagrangian_eval", "solve_approx_diagonals", "solve_tilt_for_moments", "tilted_grid_density",
    "state_variant_check",
]
