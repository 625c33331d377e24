"""Max-sum and sum-product GAMP.

One call to :func:`gamp_step` performs one pass of the output node update
followed by the input node update.  All vector-vector products and
quotients are componentwise.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import DegenerateColumnError, DivergenceError, DomainError

MAX_SUM = "max_sum"
SUM_PRODUCT = "sum_product"
VARIANTS = (MAX_SUM, SUM_PRODUCT)

STATE_VECTORS = ("x", "tau_x", "p", "tau_p", "z", "tau_z", "s", "tau_s", "r", "tau_r")
TRACE_COLUMNS = ("t", "objective", "constraint_residual", "dx_inf", "tau_min", "tau_max")


@dataclass
class GampOptions:
    """Run options.

    ``damping`` is the weight on the new value when ``x``, ``tau_x`` and ``s``
    are blended with their previous values.  ``x0``/``tau_x0`` override the
    default initialization (prior moments for sum-product, ``prox(0)`` and 1
    for max-sum).
    """

    variant: str = MAX_SUM
    max_iters: int = 5000
    tol: float = 1e-10
    damping: float = 1.0
    tau_min: float = 1e-12
    tau_max: float = 1e12
    trace_every: int = 1
    x0: np.ndarray = None
    tau_x0: np.ndarray = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.damping <= 1.0:
            raise DomainError("damping must lie in (0, 1]")
        if not 0.0 < self.tau_min < self.tau_max:
            raise DomainError("need 0 < tau_min < tau_max")
        if self.max_iters < 1 or self.trace_every < 1:
            raise DomainError("max_iters and trace_every must be positive")
        if not self.tol > 0:
            raise DomainError("tol must be positive")


@dataclass
class GampState:
    """All per-iteration vectors.

    After ``gamp_step`` produced iteration ``t``, ``x``/``tau_x`` hold
    ``x^{t+1}``/``tau_x^{t+1}`` while the remaining vectors hold their
    iteration-``t`` values.
    """

    t: int
    x: np.ndarray
    tau_x: np.ndarray
    p: np.ndarray
    tau_p: np.ndarray
    z: np.ndarray
    tau_z: np.ndarray
    s: np.ndarray
    tau_s: np.ndarray
    r: np.ndarray
    tau_r: np.ndarray
    variant: str = MAX_SUM

    def copy(self):
        return replace(self, **{k: getattr(self, k).copy() for k in STATE_VECTORS})

    def is_finite(self):
        return all(np.all(np.isfinite(getattr(self, k))) for k in STATE_VECTORS)

    def tau_range(self):
        taus = np.concatenate([getattr(self, k) for k in STATE_VECTORS if k.startswith("tau")])
        return float(taus.min()), float(taus.max())

    def to_dict(self):
        d = {"t": int(self.t), "variant": self.variant}
        for k in STATE_VECTORS:
            d[k] = [float(v) for v in getattr(self, k)]
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: np.asarray(d[k], dtype=float) for k in STATE_VECTORS}
        return cls(t=int(d["t"]), variant=d.get("variant", MAX_SUM), **kw)


@dataclass
class TraceRecord:
    t: int
    objective: float
    constraint_residual: float
    dx_inf: float
    tau_min: float
    tau_max: float

    def as_row(self):
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class GampResult:
    state: GampState
    trace: list = field(default_factory=list)
    status: str = "max_iters"
    iterations: int = 0


def _clamp(v, options):
    return np.clip(v, options.tau_min, options.tau_max)


def gamp_init(problem, options):
    """Iteration-0 state: ``x^0``, ``tau_x^0`` and ``s^{-1} = 0``."""
    m, n = problem.shape
    if options.x0 is not None:
        x = np.array(options.x0, dtype=float).reshape(n)
    elif options.variant == SUM_PRODUCT:
        x = problem.input_penalties.prior_moments()[0]
    else:
        x = problem.input_penalties.prox(1.0, np.zeros(n))
    if options.tau_x0 is not None:
        tau_x = np.broadcast_to(np.asarray(options.tau_x0, dtype=float), (n,)).copy()
    elif options.variant == SUM_PRODUCT:
        tau_x = problem.input_penalties.prior_moments()[1]
    else:
        tau_x = np.ones(n)
    tau_x = _clamp(tau_x, options)
    ones_m, ones_n = np.ones(m), np.ones(n)
    return GampState(
        t=0, x=x, tau_x=tau_x,
        p=problem.A @ x, tau_p=ones_m.copy(), z=problem.A @ x, tau_z=ones_m.copy(),
        s=np.zeros(m), tau_s=ones_m.copy(), r=x.copy(), tau_r=ones_n.copy(),
        variant=options.variant,
    )


def gamp_step(problem, state, options):
    """One GAMP iteration; returns a new state and leaves ``state`` untouched."""
    A, S = problem.A, problem.S
    beta = options.damping
    if state.x.shape != (problem.n,) or state.s.shape != (problem.m,):
        raise DomainError("state dimensions do not match the problem")

    # output node update
    tau_p = _clamp(S @ state.tau_x, options)
    p = A @ state.x - state.s * tau_p
    if options.variant == MAX_SUM:
        z = problem.output_penalties.prox(tau_p, p)
        tau_z = tau_p * problem.output_penalties.prox_deriv(tau_p, p)
    else:
        z, tau_z, _ = problem.output_penalties.tilted(p, tau_p)
    tau_z = _clamp(tau_z, options)
    s = (z - p) / tau_p
    tau_s = _clamp(1.0 / tau_p - tau_z / tau_p**2, options)
    if beta < 1.0:
        s = beta * s + (1.0 - beta) * state.s

    # input node update
    denom = S.T @ tau_s
    if np.any(denom == 0):
        raise DegenerateColumnError("S^T tau_s has a zero entry")
    tau_r = _clamp(1.0 / denom, options)
    r = state.x + tau_r * (A.T @ s)
    if options.variant == MAX_SUM:
        x = problem.input_penalties.prox(tau_r, r)
        tau_x = tau_r * problem.input_penalties.prox_deriv(tau_r, r)
    else:
        x, tau_x, _ = problem.input_penalties.tilted(r, tau_r)
    tau_x = _clamp(tau_x, options)
    if beta < 1.0:
        x = beta * x + (1.0 - beta) * state.x
        tau_x = beta * tau_x + (1.0 - beta) * state.tau_x

    new = GampState(
        t=state.t + 1, x=x, tau_x=tau_x, p=p, tau_p=tau_p, z=z, tau_z=tau_z,
        s=s, tau_s=tau_s, r=r, tau_r=tau_r, variant=options.variant,
    )
    if not new.is_finite():
        raise DivergenceError(f"non-finite value at iteration {state.t}", state=state)
    return new


def _trace_record(problem, state, dx):
    lo, hi = state.tau_range()
    resid = float(np.max(np.abs(state.z - problem.A @ state.x)))
    return TraceRecord(state.t, problem.objective(state.x), resid, float(dx), lo, hi)


def _change(new, old):
    dx = float(np.max(np.abs(new.x - old.x)))
    ds = float(np.max(np.abs(new.s - old.s))) / max(1.0, float(np.max(np.abs(new.s))))
    dtau = float(np.max(np.abs(new.tau_x - old.tau_x))) / max(1.0, float(np.max(new.tau_x)))
    return dx, max(dx, ds, dtau)


def run_gamp(problem, options=None, state=None):
    """Iterate :func:`gamp_step` until the iterates stop moving or ``max_iters``.

    Convergence requires ``max|x^{t+1} - x^t| <= tol`` and the same bound on
    the (scale-relative) changes of ``s`` and ``tau_x``; ``x`` alone can sit
    still while the dual is still moving.

    Returns a :class:`GampResult` with status ``converged``, ``max_iters`` or
    ``diverged`` (in which case ``state`` is the last finite iterate).
    """
    options = options or GampOptions()
    state = gamp_init(problem, options) if state is None else state
    trace = []
    status = "max_iters"
    dx = np.inf
    for it in range(options.max_iters):
        try:
            new = gamp_step(problem, state, options)
        except DivergenceError:
            status = "diverged"
            break
        if state.t == 0:
            dx, change = float(np.max(np.abs(new.x - state.x))), np.inf
        else:
            dx, change = _change(new, state)
        state = new
        done = change <= options.tol
        if state.t % options.trace_every == 0 or done or it == options.max_iters - 1:
            trace.append(_trace_record(problem, state, dx))
        if done:
            status = "converged"
            break
    return GampResult(state=state, trace=trace, status=status, iterations=state.t)
