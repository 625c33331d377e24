"""The generalized linear model: minimize f_x(x) + f_z(z) subject to z = A x."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateColumnError, DomainError
from .penalties import PenaltyArray, ScalarPenalty


def _as_penalties(pens, n, name):
    if isinstance(pens, ScalarPenalty):
        return PenaltyArray.broadcast(pens, n)
    if not isinstance(pens, PenaltyArray):
        pens = PenaltyArray(pens)
    if len(pens) != n:
        raise DomainError(f"{name} has {len(pens)} components, expected {n}")
    return pens


@dataclass(eq=False)
class GlmProblem:
    """Matrix ``A`` (m x n) with separable input and output penalties.

    Observations ``y`` are folded into the output penalties.  A single
    :class:`ScalarPenalty` is broadcast to every component.
    """

    A: np.ndarray
    input_penalties: PenaltyArray
    output_penalties: PenaltyArray
    S: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.size == 0:
            raise DomainError("A must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(A)):
            raise DomainError("A must be finite")
        self.A = A
        m, n = A.shape
        self.input_penalties = _as_penalties(self.input_penalties, n, "input_penalties")
        self.output_penalties = _as_penalties(self.output_penalties, m, "output_penalties")
        zero_cols = np.flatnonzero(~np.any(A != 0, axis=0))
        if zero_cols.size:
            raise DegenerateColumnError(f"columns {zero_cols.tolist()} of A are identically zero")
        self.S = A * A

    @property
    def shape(self):
        return self.A.shape

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    def objective(self, x, z=None):
        """``F(x, z) = sum f_x(x_j) + sum f_z(z_i)`` with ``z = A x`` by default."""
        x = np.asarray(x, dtype=float)
        if z is None:
            z = self.A @ x
        return self.input_penalties.total(x) + self.output_penalties.total(z)

    def __eq__(self, other):
        return (
            isinstance(other, GlmProblem)
            and np.array_equal(self.A, other.A)
            and self.input_penalties == other.input_penalties
            and self.output_penalties == other.output_penalties
        )
