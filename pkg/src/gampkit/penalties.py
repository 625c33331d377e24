"""Scalar penalties f(u) with proximal, derivative and tilted-moment kernels.

Every penalty is the negative log of an (unnormalized) prior or likelihood
factor.  The kernels are vectorized over their array arguments and, for the
built-in kinds, also over the penalty parameters, so that
:class:`PenaltyArray` can evaluate a whole vector of penalties of the same
kind in one call.

The tilted density of a penalty at centre ``q`` and width ``tau_q`` is the
probability density proportional to ``exp(-f(u) - (u - q)**2 / (2 tau_q))``.
"""

import math
from dataclasses import dataclass, fields
from typing import ClassVar

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DomainError, NumericError
from .quadrature import DEFAULT_HALF_WIDTH, DEFAULT_POINTS, richardson_moments

SPIKE_WIDTH = 1e-6
_LOG2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _as_float(x, name):
    try:
        out = float(x)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"{name} must be a real number, got {x!r}") from exc
    if not math.isfinite(out):
        raise DomainError(f"{name} must be finite, got {out}")
    return out


def _require_finite(a, name):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} must be finite")
    return a


def _require_positive(a, name):
    a = np.asarray(a, dtype=float)
    if not np.all(a > 0) or not np.all(np.isfinite(a)):
        raise DomainError(f"{name} must be positive and finite")
    return a


# ---------------------------------------------------------------------------
# scalar root finding / minimization helpers


def _rtsafe(dg, d2g, lo, hi, maxiter=300):
    """Root of the increasing-through-zero function ``dg`` on ``[lo, hi]``.

    Newton steps are taken when they stay inside the bracket; otherwise the
    bracket is bisected.  Requires ``dg(lo) < 0 < dg(hi)``.
    """
    x = 0.5 * (lo + hi)
    for _ in range(maxiter):
        g1 = dg(x)
        if g1 == 0.0:
            return x
        if g1 < 0:
            lo = x
        else:
            hi = x
        g2 = d2g(x)
        step_ok = False
        if g2 > 0 and math.isfinite(g2):
            xn = x - g1 / g2
            if lo < xn < hi:
                step_ok = True
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 4e-16 * max(1.0, abs(x)) or hi - lo <= 4e-16 * max(1.0, abs(x)):
            return xn
        x = xn
    return x


def _refine_min(g, dg, d2g, lo, hi, x0):
    """Local minimizer of ``g`` near ``x0`` inside ``[lo, hi]``."""
    glo, ghi = dg(lo), dg(hi)
    if glo < 0 < ghi:
        return _rtsafe(dg, d2g, lo, hi)
    if glo >= 0 and ghi >= 0:
        return lo if g(lo) <= g(x0) else x0
    if glo <= 0 and ghi <= 0:
        return hi if g(hi) <= g(x0) else x0
    return x0


def _pick_minimizer(cands, g, v):
    """Global minimizer among candidates; ties go to the point closest to ``v``, then the smaller one."""
    vals = [g(c) for c in cands]
    best = min(vals)
    tol = 1e-12 * max(1.0, abs(best))
    tied = [c for c, gv in zip(cands, vals) if gv <= best + tol]
    return min(tied, key=lambda c: (abs(c - v), c))


def _numeric_prox(value, grad, curv, tau, v, lo, hi, extra=(), npts=2001):
    """prox of a smooth (possibly non-convex) scalar function by scan + safeguarded Newton."""
    def g(u):
        return float(value(u)) + (u - v) ** 2 / (2.0 * tau)

    def dg(u):
        return float(grad(u)) + (u - v) / tau

    def d2g(u):
        return float(curv(u)) + 1.0 / tau

    pts = np.linspace(lo, hi, npts)
    extra = np.asarray([e for e in extra if lo <= e <= hi], dtype=float)
    pts = np.union1d(pts, extra)
    gv = np.asarray(value(pts), dtype=float) + (pts - v) ** 2 / (2.0 * tau)
    left = np.r_[np.inf, gv[:-1]]
    right = np.r_[gv[1:], np.inf]
    local = np.flatnonzero((gv <= left) & (gv <= right))
    local = local[np.argsort(gv[local])][:8]
    cands = []
    last = len(pts) - 1
    for i in local:
        # widen past near-duplicate nodes until the bracket holds a sign change
        lo_i, hi_i = max(i - 1, 0), min(i + 1, last)
        for _ in range(4):
            if lo_i > 0 and dg(pts[lo_i]) > 0:
                lo_i -= 1
            elif hi_i < last and dg(pts[hi_i]) < 0:
                hi_i += 1
            else:
                break
        cands.append(_refine_min(g, dg, d2g, pts[lo_i], pts[hi_i], pts[i]))
    return _pick_minimizer(cands, g, v)


# ---------------------------------------------------------------------------
# truncated normal moments used by the Laplace tilt


def _trunc_pos_moments(alpha):
    """Mean and variance of N(alpha, 1) conditioned on being positive.

    For ``alpha < -5`` a continued fraction of the Mills ratio avoids the
    cancellation in ``1 - r (r + alpha)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    mean = np.empty_like(alpha)
    var = np.empty_like(alpha)
    direct = alpha >= -5.0
    a = alpha[direct]
    r = _SQRT_2_OVER_PI / special.erfcx(-a / _SQRT2)
    mean[direct] = a + r
    var[direct] = 1.0 - r * (r + a)
    t = -alpha[~direct]
    if t.size:
        tail = np.zeros_like(t)
        for k in range(120, 1, -1):
            tail = k / (t + tail)
        kk = 1.0 / (t + tail)
        mean[~direct] = kk
        var[~direct] = kk * (tail - kk)
    return mean, np.maximum(var, 0.0)


# ---------------------------------------------------------------------------
# penalty kinds


class ScalarPenalty:
    """Base class of the scalar penalty kinds.

    Subclasses that are ``stackable`` implement their kernels as static
    methods ``k_<name>(args..., *params)`` taking the parameters as trailing
    broadcastable arrays.
    """

    kind: ClassVar[str] = ""
    convex: ClassVar[bool] = True
    smooth: ClassVar[bool] = True
    stackable: ClassVar[bool] = True

    def params(self):
        return tuple(getattr(self, f.name) for f in fields(self))

    # vectorized instance API -------------------------------------------
    def value(self, u):
        return type(self).k_value(np.asarray(u, dtype=float), *self.params())

    def grad(self, u):
        return type(self).k_grad(np.asarray(u, dtype=float), *self.params())

    def curvature(self, u):
        return type(self).k_curvature(np.asarray(u, dtype=float), *self.params())

    def subdifferential(self, u):
        return type(self).k_subdiff(np.asarray(u, dtype=float), *self.params())

    def prox(self, tau, v):
        return type(self).k_prox(np.asarray(tau, dtype=float), np.asarray(v, dtype=float), *self.params())

    def prox_deriv(self, tau, v):
        return type(self).k_prox_deriv(np.asarray(tau, dtype=float), np.asarray(v, dtype=float), *self.params())

    def tilted(self, q, tau):
        """``(mean, var, log_partition)`` of the tilted density at ``(q, tau)``."""
        return type(self).k_tilted(np.asarray(q, dtype=float), np.asarray(tau, dtype=float), *self.params())

    # scalar-only helpers -------------------------------------------------
    def continuous_neglog(self, u):
        """Negative log of the absolutely continuous part of ``exp(-f)``."""
        return self.value(u)

    def atom(self):
        """``(location, mass)`` of a point mass in ``exp(-f)``, or ``None``."""
        return None

    def kinks(self):
        """Points where ``f`` is not differentiable."""
        return ()

    def to_dict(self):
        raise NotImplementedError

    def prior_moments(self):
        """Mean and variance of the normalized density ``exp(-f)``."""
        raise NotImplementedError

    def sample(self, rng, size):
        raise NotImplementedError

    def observe(self, z, rng):
        """Draw an observation at ``z`` and return the penalty with it folded in."""
        raise ConfigError(f"cannot synthesize observations for a {self.kind} output penalty")


@dataclass(frozen=True)
class Quadratic(ScalarPenalty):
    """``f(u) = (u - y)^2 / (2 sigma2)``: Gaussian likelihood or prior."""

    y: float = 0.0
    sigma2: float = 1.0

    kind = "quadratic"

    def __post_init__(self):
        object.__setattr__(self, "y", _as_float(self.y, "y"))
        s2 = _as_float(self.sigma2, "sigma2")
        if s2 <= 0:
            raise DomainError("quadratic penalty needs sigma2 > 0")
        object.__setattr__(self, "sigma2", s2)

    @staticmethod
    def k_value(u, y, s2):
        return (u - y) ** 2 / (2.0 * s2)

    @staticmethod
    def k_grad(u, y, s2):
        return (u - y) / s2

    @staticmethod
    def k_curvature(u, y, s2):
        return np.broadcast_to(1.0 / np.asarray(s2, dtype=float), np.broadcast(u, s2).shape).astype(float)

    @staticmethod
    def k_subdiff(u, y, s2):
        g = (u - y) / s2
        return g, g

    @staticmethod
    def k_prox(tau, v, y, s2):
        return (s2 * v + tau * y) / (s2 + tau)

    @staticmethod
    def k_prox_deriv(tau, v, y, s2):
        return np.broadcast_to(s2 / (s2 + tau), np.broadcast(tau, v, s2).shape).astype(float)

    @staticmethod
    def k_tilted(q, tau, y, s2):
        tot = s2 + tau
        mean = (s2 * q + tau * y) / tot
        var = s2 * tau / tot
        logz = 0.5 * (_LOG2PI + np.log(var)) - (q - y) ** 2 / (2.0 * tot)
        shape = np.broadcast(q, tau, y, s2).shape
        return (np.broadcast_to(mean, shape).astype(float), np.broadcast_to(var, shape).astype(float),
                np.broadcast_to(logz, shape).astype(float))

    def to_dict(self):
        return {"type": self.kind, "y": self.y, "sigma2": self.sigma2}

    def prior_moments(self):
        return self.y, self.sigma2

    def sample(self, rng, size):
        return self.y + math.sqrt(self.sigma2) * rng.standard_normal(size)

    def observe(self, z, rng):
        return Quadratic(float(z + math.sqrt(self.sigma2) * rng.standard_normal()), self.sigma2)


@dataclass(frozen=True)
class Laplace(ScalarPenalty):
    """``f(u) = lam |u - loc|``; with ``loc = 0`` the LASSO penalty."""

    lam: float = 1.0
    loc: float = 0.0

    kind = "laplace"
    smooth = False

    def __post_init__(self):
        lam = _as_float(self.lam, "lambda")
        if lam <= 0:
            raise DomainError("laplace penalty needs lambda > 0")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "loc", _as_float(self.loc, "loc"))

    @staticmethod
    def k_value(u, lam, loc):
        return lam * np.abs(u - loc)

    @staticmethod
    def k_grad(u, lam, loc):
        return lam * np.sign(u - loc)

    @staticmethod
    def k_curvature(u, lam, loc):
        w = np.asarray(u - loc, dtype=float)
        shape = np.broadcast(w, lam).shape
        return np.where(np.broadcast_to(w, shape) == 0, np.nan, 0.0)

    @staticmethod
    def k_subdiff(u, lam, loc):
        w = u - loc
        s = np.sign(w)
        lo = np.where(w == 0, -lam, lam * s)
        hi = np.where(w == 0, lam, lam * s)
        return lo.astype(float), hi.astype(float)

    @staticmethod
    def k_prox(tau, v, lam, loc):
        w = v - loc
        return loc + np.sign(w) * np.maximum(np.abs(w) - lam * tau, 0.0)

    @staticmethod
    def k_prox_deriv(tau, v, lam, loc):
        # right-derivative at the two kinks |v - loc| = lam tau
        w = v - loc
        thr = lam * tau
        return ((w >= thr) | (w < -thr)).astype(float)

    @staticmethod
    def k_tilted(q, tau, lam, loc):
        q, tau, lam, loc = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (q, tau, lam, loc)))
        w = q - loc
        s = np.sqrt(tau)
        half = 0.5 * lam**2 * tau + 0.5 * (_LOG2PI + np.log(tau))
        alpha_p = (w - lam * tau) / s
        alpha_m = -(w + lam * tau) / s
        logz_p = -lam * w + half + special.log_ndtr(alpha_p)
        logz_m = lam * w + half + special.log_ndtr(alpha_m)
        logz = np.logaddexp(logz_p, logz_m)
        wp = np.exp(logz_p - logz)
        wm = np.exp(logz_m - logz)
        mp, vp = _trunc_pos_moments(alpha_p)
        mm, vm = _trunc_pos_moments(alpha_m)
        mp = s * mp
        mm = -s * mm
        mean = loc + wp * mp + wm * mm
        var = tau * (wp * vp + wm * vm) + wp * wm * (mp - mm) ** 2
        return mean, var, logz

    def kinks(self):
        return (self.loc,)

    def to_dict(self):
        return {"type": self.kind, "lambda": self.lam, "loc": self.loc}

    def prior_moments(self):
        return self.loc, 2.0 / self.lam**2

    def sample(self, rng, size):
        return self.loc + rng.laplace(0.0, 1.0 / self.lam, size)

    def observe(self, z, rng):
        return Laplace(self.lam, float(z + rng.laplace(0.0, 1.0 / self.lam)))


@dataclass(frozen=True)
class BernoulliGauss(ScalarPenalty):
    """Spike-and-slab prior ``(1 - rho) delta_0 + rho N(mu, sigma2)``.

    ``rho`` is the probability of the Gaussian (nonzero) component.  The
    tilted kernels treat the spike exactly.  :meth:`value` and the prox
    kernels use a spike smoothed to a Gaussian of width ``SPIKE_WIDTH``; that
    smoothed penalty is non-convex.
    """

    rho: float = 0.5
    mu: float = 0.0
    sigma2: float = 1.0

    kind = "bernoulli_gauss"
    convex = False

    def __post_init__(self):
        rho = _as_float(self.rho, "rho")
        if not 0.0 < rho < 1.0:
            raise DomainError("bernoulli_gauss penalty needs 0 < rho < 1")
        s2 = _as_float(self.sigma2, "sigma2")
        if s2 <= 0:
            raise DomainError("bernoulli_gauss penalty needs sigma2 > 0")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "mu", _as_float(self.mu, "mu"))
        object.__setattr__(self, "sigma2", s2)

    @staticmethod
    def _logparts(u, rho, mu, s2):
        eps2 = SPIKE_WIDTH**2
        l1 = np.log1p(-rho) - 0.5 * (_LOG2PI + math.log(eps2)) - u**2 / (2.0 * eps2)
        l2 = np.log(rho) - 0.5 * (_LOG2PI + np.log(s2)) - (u - mu) ** 2 / (2.0 * s2)
        return l1, l2

    @staticmethod
    def k_value(u, rho, mu, s2):
        l1, l2 = BernoulliGauss._logparts(u, rho, mu, s2)
        return -np.logaddexp(l1, l2)

    @staticmethod
    def _weights(u, rho, mu, s2):
        l1, l2 = BernoulliGauss._logparts(u, rho, mu, s2)
        lse = np.logaddexp(l1, l2)
        return np.exp(l1 - lse), np.exp(l2 - lse)

    @staticmethod
    def k_grad(u, rho, mu, s2):
        w1, w2 = BernoulliGauss._weights(u, rho, mu, s2)
        return w1 * u / SPIKE_WIDTH**2 + w2 * (u - mu) / s2

    @staticmethod
    def k_curvature(u, rho, mu, s2):
        w1, w2 = BernoulliGauss._weights(u, rho, mu, s2)
        g1 = u / SPIKE_WIDTH**2
        g2 = (u - mu) / s2
        return w1 / SPIKE_WIDTH**2 + w2 / s2 - w1 * w2 * (g1 - g2) ** 2

    @staticmethod
    def k_subdiff(u, rho, mu, s2):
        g = BernoulliGauss.k_grad(u, rho, mu, s2)
        return g, g

    @staticmethod
    def _prox_scalar(tau, v, rho, mu, s2):
        pen = BernoulliGauss(rho, mu, s2)
        c = (s2 * v + tau * mu) / (s2 + tau)
        width = 10.0 * math.sqrt(s2 * tau / (s2 + tau))
        lo = min(c - width, -50 * SPIKE_WIDTH)
        hi = max(c + width, 50 * SPIKE_WIDTH)
        spikes = [k * SPIKE_WIDTH for k in (-16, -8, -4, -2, -1, -0.5, 0, 0.5, 1, 2, 4, 8, 16)]
        return _numeric_prox(pen.value, pen.grad, pen.curvature, tau, v, lo, hi, extra=spikes + [c])

    @staticmethod
    def k_prox(tau, v, rho, mu, s2):
        args = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (tau, v, rho, mu, s2)))
        out = np.empty(args[0].shape)
        for idx in np.ndindex(out.shape):
            out[idx] = BernoulliGauss._prox_scalar(*(float(a[idx]) for a in args))
        return out

    @staticmethod
    def k_prox_deriv(tau, v, rho, mu, s2):
        p = BernoulliGauss.k_prox(tau, v, rho, mu, s2)
        return 1.0 / (1.0 + tau * BernoulliGauss.k_curvature(p, rho, mu, s2))

    @staticmethod
    def k_tilted(q, tau, rho, mu, s2):
        q, tau, rho, mu, s2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (q, tau, rho, mu, s2)))
        tot = s2 + tau
        l_spike = np.log1p(-rho) - q**2 / (2.0 * tau)
        l_slab = np.log(rho) + 0.5 * np.log(tau / tot) - (q - mu) ** 2 / (2.0 * tot)
        logz = np.logaddexp(l_spike, l_slab) + 0.0 * q
        pi = np.exp(l_slab - logz)
        m = (mu * tau + q * s2) / tot
        v = s2 * tau / tot
        mean = pi * m
        var = pi * v + pi * (1.0 - pi) * m**2
        return mean, var, logz

    def continuous_neglog(self, u):
        u = np.asarray(u, dtype=float)
        return -(math.log(self.rho) - 0.5 * (_LOG2PI + math.log(self.sigma2)) - (u - self.mu) ** 2 / (2 * self.sigma2))

    def atom(self):
        return 0.0, 1.0 - self.rho

    def to_dict(self):
        return {"type": self.kind, "rho": self.rho, "mu": self.mu, "sigma2": self.sigma2}

    def prior_moments(self):
        mean = self.rho * self.mu
        return mean, self.rho * (self.sigma2 + self.mu**2) - mean**2

    def sample(self, rng, size):
        on = rng.random(size) < self.rho
        return np.where(on, self.mu + math.sqrt(self.sigma2) * rng.standard_normal(size), 0.0)


@dataclass(frozen=True, eq=True)
class Custom(ScalarPenalty):
    """Tabulated penalty: cubic spline through ``(grid, values)``.

    Outside the grid the spline is continued linearly with its end slopes.
    Tilted moments use Richardson-checked trapezoid quadrature.
    """

    grid: tuple
    values: tuple

    kind = "custom"
    stackable = False

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        f = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or f.shape != g.shape or g.size < 2:
            raise DomainError("custom penalty needs matching 1-D grid and values (at least 2 points)")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(f))):
            raise DomainError("custom penalty grid and values must be finite")
        if not np.all(np.diff(g) > 0):
            raise DomainError("custom penalty grid must be strictly increasing")
        object.__setattr__(self, "grid", tuple(float(x) for x in g))
        object.__setattr__(self, "values", tuple(float(x) for x in f))
        bc = "not-a-knot" if g.size >= 4 else "natural"
        spline = CubicSpline(g, f, bc_type=bc, extrapolate=False)
        object.__setattr__(self, "_spline", spline)
        object.__setattr__(self, "_d1", spline.derivative(1))
        object.__setattr__(self, "_d2", spline.derivative(2))
        lo, hi = g[0], g[-1]
        ends = (float(spline(lo)), float(spline(hi)), float(self._d1(lo)), float(self._d1(hi)))
        object.__setattr__(self, "_ends", ends)
        fine = np.linspace(lo, hi, 8 * g.size + 1)
        object.__setattr__(self, "_slope_max", float(np.max(np.abs(self._d1(fine)))))
        object.__setattr__(self, "_convex", bool(np.all(self._d2(fine) >= -1e-10)))

    @classmethod
    def zero(cls):
        """The flat penalty ``f = 0`` (uninformative factor)."""
        return cls((-1.0, 0.0, 1.0), (0.0, 0.0, 0.0))

    @property
    def is_convex(self):
        return self._convex

    def _parts(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = self.grid[0], self.grid[-1]
        return u, u < lo, u > hi, lo, hi

    def value(self, u):
        u, below, above, lo, hi = self._parts(u)
        f_lo, f_hi, s_lo, s_hi = self._ends
        out = np.where(below, f_lo + s_lo * (u - lo), np.where(above, f_hi + s_hi * (u - hi), 0.0))
        inside = ~(below | above)
        if np.ndim(u) == 0:
            return float(self._spline(u)) if inside else float(out)
        out[inside] = self._spline(u[inside])
        return out

    def grad(self, u):
        u, below, above, lo, hi = self._parts(u)
        f_lo, f_hi, s_lo, s_hi = self._ends
        out = np.where(below, s_lo, np.where(above, s_hi, 0.0))
        inside = ~(below | above)
        if np.ndim(u) == 0:
            return float(self._d1(u)) if inside else float(out)
        out[inside] = self._d1(u[inside])
        return out

    def curvature(self, u):
        u, below, above, lo, hi = self._parts(u)
        inside = ~(below | above)
        if np.ndim(u) == 0:
            return float(self._d2(u)) if inside else 0.0
        out = np.zeros(u.shape)
        out[inside] = self._d2(u[inside])
        return out

    def subdifferential(self, u):
        g = self.grad(u)
        return g, g

    def _prox_scalar(self, tau, v):
        reach = tau * self._slope_max + 10.0 * math.sqrt(tau)
        lo, hi = v - reach, v + reach
        nodes = [x for x in self.grid if lo <= x <= hi]
        return _numeric_prox(self.value, self.grad, self.curvature, tau, v, lo, hi, extra=nodes + [v])

    def prox(self, tau, v):
        tau, v = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(v, dtype=float))
        out = np.empty(tau.shape)
        for idx in np.ndindex(out.shape):
            out[idx] = self._prox_scalar(float(tau[idx]), float(v[idx]))
        return out if out.ndim else float(out)

    def prox_deriv(self, tau, v):
        p = self.prox(tau, v)
        return 1.0 / (1.0 + np.asarray(tau, dtype=float) * self.curvature(p))

    def _tilted_scalar(self, q, tau):
        mode = self._prox_scalar(tau, q)
        s = math.sqrt(tau)
        lo = min(q, mode) - DEFAULT_HALF_WIDTH * s
        hi = max(q, mode) + DEFAULT_HALF_WIDTH * s
        spacing = min(np.diff(self.grid).min(), s) / 4.0
        points = int(min(max(DEFAULT_POINTS, (hi - lo) / spacing + 1), 200_001))

        def logf(u):
            return -self.value(u) - (u - q) ** 2 / (2.0 * tau)

        logz, mean, var, _ = richardson_moments(logf, lo, hi, points=points)
        if not var > 0:
            raise NumericError("tilted variance is not positive", achieved=var)
        return mean, var, logz

    def tilted(self, q, tau):
        q, tau = np.broadcast_arrays(np.asarray(q, dtype=float), np.asarray(tau, dtype=float))
        out = np.empty((3,) + q.shape)
        for idx in np.ndindex(q.shape):
            out[(slice(None),) + idx] = self._tilted_scalar(float(q[idx]), float(tau[idx]))
        if q.ndim == 0:
            return tuple(float(x) for x in out)
        return out[0], out[1], out[2]

    def to_dict(self):
        return {"type": self.kind, "grid": list(self.grid), "values": list(self.values)}

    def prior_moments(self, width=1e2):
        """Moments of a wide tilt at ``q = 0``; ``exp(-f)`` itself may not be normalizable."""
        mean, var, _ = self.tilted(0.0, width)
        return float(mean), float(var)

    def sample(self, rng, size):
        g = np.linspace(self.grid[0], self.grid[-1], 20001)
        logp = -self.value(g)
        p = np.exp(logp - logp.max())
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(g))])
        cdf /= cdf[-1]
        return np.interp(rng.random(size), cdf, g)


KINDS = {cls.kind: cls for cls in (Quadratic, Laplace, BernoulliGauss, Custom)}


# ---------------------------------------------------------------------------
# JSON descriptors

_PARAM_NAMES = {
    "quadratic": (("y", "y", 0.0), ("sigma2", "sigma2", None)),
    "laplace": (("lambda", "lam", None), ("loc", "loc", 0.0)),
    "bernoulli_gauss": (("rho", "rho", None), ("mu", "mu", 0.0), ("sigma2", "sigma2", None)),
}


def penalty_from_dict(desc, path="$"):
    """Build a penalty from its JSON descriptor ``{"type": ..., **params}``."""
    if not isinstance(desc, dict):
        raise ConfigError("penalty descriptor must be an object", path)
    kind = desc.get("type")
    if kind not in KINDS:
        raise ConfigError(f"unknown penalty type {kind!r}", f"{path}.type")
    try:
        if kind == "custom":
            extra = set(desc) - {"type", "grid", "values"}
            if extra:
                raise ConfigError(f"unexpected keys {sorted(extra)}", path)
            for key in ("grid", "values"):
                if not isinstance(desc.get(key), list):
                    raise ConfigError("must be a list of numbers", f"{path}.{key}")
            return Custom(tuple(desc["grid"]), tuple(desc["values"]))
        spec = _PARAM_NAMES[kind]
        extra = set(desc) - {"type"} - {name for name, _, _ in spec}
        if extra:
            raise ConfigError(f"unexpected keys {sorted(extra)}", path)
        kwargs = {}
        for name, attr, default in spec:
            if name not in desc:
                if default is None:
                    raise ConfigError("missing required parameter", f"{path}.{name}")
                kwargs[attr] = default
            else:
                val = desc[name]
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise ConfigError("must be a number", f"{path}.{name}")
                kwargs[attr] = val
        return KINDS[kind](**kwargs)
    except DomainError as exc:
        raise ConfigError(str(exc), path) from exc


def penalty_to_dict(pen):
    return pen.to_dict()


# ---------------------------------------------------------------------------
# vectors of penalties


class PenaltyArray:
    """A vector of scalar penalties, evaluated componentwise.

    Components of the same stackable kind are evaluated together with their
    parameters stacked into arrays; custom penalties are evaluated one
    distinct object at a time.
    """

    def __init__(self, penalties):
        self.penalties = tuple(penalties)
        if not self.penalties:
            raise DomainError("a penalty vector needs at least one component")
        for p in self.penalties:
            if not isinstance(p, ScalarPenalty):
                raise DomainError(f"not a ScalarPenalty: {p!r}")
        groups = {}
        for i, p in enumerate(self.penalties):
            key = type(p) if p.stackable else p
            groups.setdefault(key, []).append(i)
        self._groups = []
        for key, idx in groups.items():
            idx = np.asarray(idx)
            if isinstance(key, type):
                params = np.array([self.penalties[i].params() for i in idx], dtype=float)
                self._groups.append((key, idx, tuple(params.T)))
            else:
                self._groups.append((key, idx, None))

    @classmethod
    def broadcast(cls, pen, n):
        return cls([pen] * n)

    def __len__(self):
        return len(self.penalties)

    def __iter__(self):
        return iter(self.penalties)

    def __getitem__(self, i):
        return self.penalties[i]

    def __eq__(self, other):
        return isinstance(other, PenaltyArray) and self.penalties == other.penalties

    @property
    def convex(self):
        return all(p.is_convex if isinstance(p, Custom) else p.convex for p in self.penalties)

    @property
    def smooth(self):
        return all(p.smooth for p in self.penalties)

    def kinds(self):
        return {p.kind for p in self.penalties}

    def _map(self, name, *args, nout=1):
        n = len(self.penalties)
        args = [np.broadcast_to(np.asarray(a, dtype=float), (n,)) for a in args]
        outs = [np.empty(n) for _ in range(nout)]
        for key, idx, params in self._groups:
            sub = [a[idx] for a in args]
            if params is not None:
                res = getattr(key, "k_" + name)(*sub, *params)
            else:
                res = getattr(key, name)(*sub)
            if nout == 1:
                res = (res,)
            for o, r in zip(outs, res):
                o[idx] = r
        return outs[0] if nout == 1 else tuple(outs)

    def value(self, u):
        return self._map("value", u)

    def total(self, u):
        return float(np.sum(self.value(u)))

    def grad(self, u):
        return self._map("grad", u)

    def curvature(self, u):
        return self._map("curvature", u)

    def subdifferential(self, u):
        n = len(self.penalties)
        u = np.broadcast_to(np.asarray(u, dtype=float), (n,))
        lo = np.empty(n)
        hi = np.empty(n)
        for key, idx, params in self._groups:
            if params is not None:
                a, b = key.k_subdiff(u[idx], *params)
            else:
                a, b = key.subdifferential(u[idx])
            lo[idx] = a
            hi[idx] = b
        return lo, hi

    def prox(self, tau, v):
        return self._map("prox", tau, v)

    def prox_deriv(self, tau, v):
        return self._map("prox_deriv", tau, v)

    def tilted(self, q, tau):
        return self._map("tilted", q, tau, nout=3)

    def prior_moments(self):
        mv = np.array([p.prior_moments() for p in self.penalties], dtype=float)
        return mv[:, 0], mv[:, 1]

    def to_list(self):
        return [p.to_dict() for p in self.penalties]


def subdiff_distance(lo, hi, g):
    """Distance from ``g`` to the interval ``[lo, hi]`` componentwise."""
    return np.maximum(np.maximum(lo - g, g - hi), 0.0)


# ---------------------------------------------------------------------------
# tilted densities and the scalar operation surface


@dataclass(frozen=True)
class TiltedDensity:
    """Density proportional to ``exp(-f(u) - (u - q)^2 / (2 tau_q))``."""

    penalty: ScalarPenalty
    q: float
    tau_q: float

    def __post_init__(self):
        object.__setattr__(self, "q", _as_float(self.q, "q"))
        tau = _as_float(self.tau_q, "tau_q")
        if tau <= 0:
            raise DomainError("tau_q must be positive")
        object.__setattr__(self, "tau_q", tau)

    def _all(self):
        mean, var, logz = self.penalty.tilted(self.q, self.tau_q)
        return float(mean), float(var), float(logz)

    def moments(self):
        mean, var, _ = self._all()
        return mean, var

    def log_partition(self):
        return self._all()[2]

    def kl_to_penalty(self):
        """``D(b || exp(-f))`` for this tilted ``b``, from its log-partition.

        Uses ``log(b / e^{-f}) = -(u - q)^2 / (2 tau_q) - log Z``.
        """
        mean, var, logz = self._all()
        return -(var + (mean - self.q) ** 2) / (2.0 * self.tau_q) - logz


def eval_penalty(pen, u):
    """``f(u)``; the Bernoulli-Gauss spike is smoothed to width ``SPIKE_WIDTH``."""
    u = _require_finite(u, "u")
    out = pen.value(u)
    return float(out) if np.ndim(out) == 0 else out


def prox(pen, tau, v):
    """``argmin_u f(u) + (u - v)^2 / (2 tau)``."""
    tau = _require_positive(tau, "tau")
    v = _require_finite(v, "v")
    out = pen.prox(tau, v)
    return float(out) if np.ndim(out) == 0 else out


def prox_deriv(pen, tau, v):
    """Derivative of ``prox(pen, tau, .)`` at ``v`` (right-derivative at kinks)."""
    tau = _require_positive(tau, "tau")
    v = _require_finite(v, "v")
    out = pen.prox_deriv(tau, v)
    return float(out) if np.ndim(out) == 0 else out


def tilted_moments(td):
    """Mean and variance of a :class:`TiltedDensity`."""
    mean, var = td.moments()
    if not (math.isfinite(mean) and math.isfinite(var) and var > 0):
        raise NumericError("tilted moments are not finite with positive variance", achieved=var)
    return mean, var


def tilted_log_partition(td):
    """``log of the integral of exp(-f(u) - (u - q)^2 / (2 tau_q))`` (against the measure ``e^{-f}``)."""
    logz = td.log_partition()
    if not math.isfinite(logz):
        raise NumericError("log-partition is not finite", achieved=logz)
    return logz
