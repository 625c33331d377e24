"""Log-domain trapezoid quadrature for univariate densities."""

import os

import numpy as np

from .errors import DomainError, NumericError

DEFAULT_POINTS = 2001
DEFAULT_HALF_WIDTH = 10.0


def quad_budget(default=20_000_000):
    """Maximum number of quadrature nodes an oracle may allocate.

    Read from ``GAMPKIT_QUAD_BUDGET`` when set.
    """
    raw = os.environ.get("GAMPKIT_QUAD_BUDGET")
    if raw is None:
        return default
    try:
        budget = int(float(raw))
    except ValueError as exc:
        raise DomainError(f"GAMPKIT_QUAD_BUDGET is not a number: {raw!r}") from exc
    if budget < 3:
        raise DomainError("GAMPKIT_QUAD_BUDGET must be at least 3")
    return budget


def _raw_integrals(x, logf, shift, center):
    w = np.exp(logf - shift)
    d = x - center
    i0 = np.trapezoid(w, x)
    i1 = np.trapezoid(w * d, x)
    i2 = np.trapezoid(w * d * d, x)
    return np.array([i0, i1, i2])


def trapezoid_moments(x, logf):
    """Return ``(log_norm, mean, var)`` of ``exp(logf)`` sampled on the grid ``x``."""
    x = np.asarray(x, dtype=float)
    logf = np.asarray(logf, dtype=float)
    shift = np.max(logf)
    if not np.isfinite(shift):
        raise NumericError("integrand vanishes or overflows on the whole grid")
    center = x[np.argmax(logf)]
    i0, i1, i2 = _raw_integrals(x, logf, shift, center)
    mean_d = i1 / i0
    var = i2 / i0 - mean_d**2
    return np.log(i0) + shift, center + mean_d, var


def richardson_moments(logf_fn, lo, hi, points=DEFAULT_POINTS, rtol=1e-6):
    """Moments of ``exp(logf_fn(u))`` on ``[lo, hi]`` by Richardson-extrapolated trapezoid.

    The coarse grid has ``points`` nodes and the fine grid ``2 * points - 1``;
    the raw integrals are combined as ``(4 T_fine - T_coarse) / 3``.  Raises
    :class:`NumericError` when the coarse/fine discrepancy exceeds ``rtol``.

    Returns
    -------
    log_norm, mean, var, err
        ``err`` is the relative discrepancy between the two grids.
    """
    if not hi > lo:
        raise DomainError("empty integration window")
    coarse = np.linspace(lo, hi, points)
    fine = np.linspace(lo, hi, 2 * points - 1)
    lf_fine = np.asarray(logf_fn(fine), dtype=float)
    lf_coarse = lf_fine[::2]
    shift = np.max(lf_fine)
    if not np.isfinite(shift):
        raise NumericError("integrand vanishes or overflows on the whole window")
    center = fine[np.argmax(lf_fine)]
    t_coarse = _raw_integrals(coarse, lf_coarse, shift, center)
    t_fine = _raw_integrals(fine, lf_fine, shift, center)
    t = (4.0 * t_fine - t_coarse) / 3.0
    scale = np.array([t[0], np.sqrt(t[0] * t[2]) + abs(t[1]), t[2]])
    err = float(np.max(np.abs(t_fine - t_coarse) / np.where(scale > 0, scale, 1.0)))
    if not err <= rtol:
        raise NumericError(f"trapezoid quadrature did not converge (rel. change {err:.3g})", achieved=err)
    mean_d = t[1] / t[0]
    var = t[2] / t[0] - mean_d**2
    return float(np.log(t[0]) + shift), float(center + mean_d), float(var), err
