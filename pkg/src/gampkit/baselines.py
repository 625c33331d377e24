"""ISTA and ADMM reference solvers for the same separable problem.

Both solvers report traces with the GAMP trace schema.  The ``tau_min`` and
``tau_max`` columns hold the fixed step sizes (``1/c`` for ISTA, ``1/alpha``
for ADMM) so that every solver writes the same CSV layout.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DomainError, NumericError, PreconditionError
from .gamp import MAX_SUM, GampState, TraceRecord
from .penalties import Custom, Quadratic

EXACT = "exact"
INEXACT = "inexact_majorized"
POWER_ITERS = 100
MAJORIZATION_SLACK = 1e-6


def power_iteration_lmax(A, iters=POWER_ITERS, seed=0):
    """Largest eigenvalue of ``A^T A`` by power iteration.

    The start vector is drawn from a Philox generator with the given seed, so
    the estimate is deterministic.  The Rayleigh quotient never exceeds the
    true value.
    """
    A = np.asarray(A, dtype=float)
    v = np.random.Generator(np.random.Philox(seed)).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return max(lam, float(v @ (A.T @ (A @ v))))


@dataclass
class SolverResult:
    """Final primal/dual iterate of a baseline solver.

    ``s`` is ``None`` for ISTA, which carries no dual variable.
    """

    solver: str
    x: np.ndarray
    z: np.ndarray
    s: np.ndarray = None
    trace: list = field(default_factory=list)
    status: str = "max_iters"
    iterations: int = 0


def _max_output_curvature(pens):
    """Upper bound on ``f_z''`` over the real line; raises for nonsmooth outputs."""
    worst = 0.0
    for p in pens:
        if isinstance(p, Quadratic):
            worst = max(worst, 1.0 / p.sigma2)
        elif isinstance(p, Custom):
            # the spline's second derivative is piecewise linear, extrema sit at knots
            worst = max(worst, float(np.max(p.curvature(np.asarray(p.grid)))))
        else:
            raise PreconditionError(
                f"ISTA needs differentiable output penalties; {p.kind} is not "
                "(use ADMM or max-sum GAMP instead)"
            )
    return worst


def _record(problem, t, x, z, dx, step):
    resid = float(np.max(np.abs(z - problem.A @ x)))
    return TraceRecord(t, problem.objective(x), resid, float(dx), step, step)


def run_ista(problem, c=None, x0=None, max_iters=100_000, tol=1e-10, trace_every=1):
    """Iterative shrinkage/thresholding.

    Each step linearizes ``f_z`` at ``z = A x`` and solves the majorized
    problem componentwise, ``x+ = prox_{f_x / c}(x - A^T f_z'(A x) / c)``.

    Parameters
    ----------
    c : float, optional
        Majorization constant.  Must be at least ``lambda_max(A^T A)`` times
        the largest output curvature; that product is the default.
    tol : float
        Stop when ``max|x^{t+1} - x^t| <= tol``.
    """
    A = problem.A
    curv = _max_output_curvature(problem.output_penalties)
    bound = power_iteration_lmax(A) * curv
    if c is None:
        c = bound
    if not c > 0:
        raise DomainError("c must be positive")
    if c < bound * (1.0 - MAJORIZATION_SLACK):
        raise PreconditionError(f"c={c:.6g} does not majorize: need c >= {bound:.6g}")
    x = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=float).reshape(problem.n)
    fx, fz = problem.input_penalties, problem.output_penalties
    trace, status, t = [], "max_iters", 0
    for t in range(1, max_iters + 1):
        q = fz.grad(A @ x)
        x_new = fx.prox(1.0 / c, x - (A.T @ q) / c)
        if not np.all(np.isfinite(x_new)):
            status = "diverged"
            t -= 1
            break
        dx = float(np.max(np.abs(x_new - x)))
        x = x_new
        done = dx <= tol
        if t % trace_every == 0 or done or t == max_iters:
            trace.append(_record(problem, t, x, A @ x, dx, 1.0 / c))
        if done:
            status = "converged"
            break
    return SolverResult("ista", x, A @ x, None, trace, status, t)


@dataclass
class AdmmOptions:
    """ADMM settings.

    ``x_update`` is ``"exact"`` (coupled minimization) or
    ``"inexact_majorized"``, which linearizes the augmented term with
    constant ``c`` and interpolates the dual with ``theta``.  The bound
    ``c >= alpha * lambda_max(A^T A)`` depends on ``A`` and is checked when
    the solver starts.
    """

    alpha: float = 1.0
    x_update: str = EXACT
    c: float = None
    theta: float = 1.0
    max_iters: int = 100_000
    tol: float = 1e-10
    inner_tol: float = 1e-12
    inner_max_iters: int = 200_000
    trace_every: int = 1

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if self.x_update not in (EXACT, INEXACT):
            raise DomainError(f"x_update must be {EXACT!r} or {INEXACT!r}")
        if self.c is not None and not self.c > 0:
            raise DomainError("c must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise DomainError("theta must lie in [0, 1]")
        if self.max_iters < 1 or self.trace_every < 1:
            raise DomainError("max_iters and trace_every must be positive")
        if not (self.tol > 0 and self.inner_tol > 0):
            raise DomainError("tolerances must be positive")


def admm_x_update_inexact(problem, x, z, s, s_prev, c, alpha, theta):
    """Linearized x-update with dual interpolation.

    Returns ``prox_{f_x / c}(x + A^T (s + theta (s - s_prev)) / c)``.  When
    ``s_prev`` is ``None`` it is recovered from the previous dual step as
    ``s - alpha (z - A x)``, which makes ``theta = 1`` coincide with
    ``x - (alpha / c) A^T (A x - z - s / alpha)``.  ``theta = 0`` with
    ``c = 1 / tau_r`` is the max-sum GAMP input update.
    """
    if not (np.all(np.asarray(c) > 0) and alpha > 0):
        raise DomainError("c and alpha must be positive")
    if not 0.0 <= theta <= 1.0:
        raise DomainError("theta must lie in [0, 1]")
    A = problem.A
    if s_prev is None:
        s_prev = s - alpha * (z - A @ x)
    v = x + (A.T @ (s + theta * (s - s_prev))) / c
    return problem.input_penalties.prox(1.0 / np.asarray(c, dtype=float), v)


class _ExactXUpdate:
    """``argmin_x f_x(x) - s^T A x + (alpha/2) ||z - A x||^2``."""

    def __init__(self, problem, alpha, lmax, inner_tol, inner_max_iters):
        self.problem = problem
        self.alpha = alpha
        self.inner_tol = inner_tol
        self.inner_max_iters = inner_max_iters
        A = problem.A
        pens = problem.input_penalties
        self.chol = None
        if all(isinstance(p, Quadratic) for p in pens):
            prec = np.array([1.0 / p.sigma2 for p in pens])
            self.rhs0 = prec * np.array([p.y for p in pens])
            self.chol = scipy.linalg.cho_factor(np.diag(prec) + alpha * (A.T @ A))
        else:
            self.step = 1.0 / (alpha * lmax)

    def __call__(self, x, z, s):
        A = self.problem.A
        if self.chol is not None:
            return scipy.linalg.cho_solve(self.chol, self.rhs0 + A.T @ (s + self.alpha * z))
        # proximal gradient on the smooth part alpha/2 ||A x - z - s/alpha||^2
        fx = self.problem.input_penalties
        target = z + s / self.alpha
        h = self.step
        gmap = np.inf
        for _ in range(self.inner_max_iters):
            grad = self.alpha * (A.T @ (A @ x - target))
            x_new = fx.prox(h, x - h * grad)
            gmap = float(np.max(np.abs(x - x_new))) / h
            x = x_new
            if gmap <= self.inner_tol * max(1.0, float(np.max(np.abs(x)))):
                return x
        raise NumericError(f"exact ADMM x-update stalled at gradient-map norm {gmap:.3g}", achieved=gmap)


def run_admm(problem, options=None, x0=None):
    """Alternating direction method of multipliers on ``L(x, z, s) = F(x, z) + s^T (z - A x)``.

    One iteration performs the x-update, then ``z+ = prox_{f_z / alpha}(A x+ - s / alpha)``
    and ``s+ = s + alpha (z+ - A x+)``.  Converges when the changes in ``x``
    and ``z`` and the constraint residual ``|z - A x|`` all fall below ``tol``.
    """
    options = options or AdmmOptions()
    A = problem.A
    alpha = options.alpha
    lmax = power_iteration_lmax(A)
    if options.x_update == INEXACT:
        c = alpha * lmax if options.c is None else options.c
        if c < alpha * lmax * (1.0 - MAJORIZATION_SLACK):
            raise PreconditionError(f"c={c:.6g} does not majorize: need c >= alpha*lmax = {alpha * lmax:.6g}")
        exact = None
    else:
        exact = _ExactXUpdate(problem, alpha, lmax, options.inner_tol, options.inner_max_iters)
    fz = problem.output_penalties
    x = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=float).reshape(problem.n)
    z = A @ x
    s = np.zeros(problem.m)
    s_prev = None
    trace, status, t = [], "max_iters", 0
    for t in range(1, options.max_iters + 1):
        if exact is None:
            x_new = admm_x_update_inexact(problem, x, z, s, s_prev, c, alpha, options.theta)
        else:
            x_new = exact(x, z, s)
        ax = A @ x_new
        z_new = fz.prox(1.0 / alpha, ax - s / alpha)
        s_new = s + alpha * (z_new - ax)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z_new)) and np.all(np.isfinite(s_new))):
            status = "diverged"
            t -= 1
            break
        dx = float(np.max(np.abs(x_new - x)))
        dz = float(np.max(np.abs(z_new - z)))
        resid = float(np.max(np.abs(z_new - ax)))
        s_prev, x, z, s = s, x_new, z_new, s_new
        done = max(dx, dz, resid) <= options.tol
        if t % options.trace_every == 0 or done or t == options.max_iters:
            trace.append(_record(problem, t, x, z, dx, 1.0 / alpha))
        if done:
            status = "converged"
            break
    return SolverResult("admm", x, z, s, trace, status, t)


def state_from_primal_dual(problem, x, z, s, tau_p=None):
    """Pack a primal/dual triple into a max-sum :class:`GampState`.

    ``p`` is set to ``z - s tau_p`` so that ``(z - p) / tau_p`` recovers ``s``
    exactly; this lets the max-sum fixed-point verifier judge any solver.
    """
    m, n = problem.shape
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    s = np.asarray(s, dtype=float)
    tau_p = np.ones(m) if tau_p is None else np.broadcast_to(np.asarray(tau_p, dtype=float), (m,)).copy()
    tau_r = np.ones(n)
    return GampState(
        t=0, x=x.copy(), tau_x=np.ones(n), p=z - s * tau_p, tau_p=tau_p, z=z.copy(), tau_z=np.ones(m),
        s=s.copy(), tau_s=np.ones(m), r=x + tau_r * (problem.A.T @ s), tau_r=tau_r, variant=MAX_SUM,
    )
