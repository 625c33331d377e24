"""Problem generation and experiment orchestration.

Randomness comes from numpy's Philox 4x64 counter-based generator keyed
directly by the user-visible 64-bit seed (``np.random.Philox(key=seed)``).
Draw order is fixed: the matrix (row-major standard normals), then
``x_true`` component by component, then one observation per output.
"""

import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import EXACT, INEXACT, AdmmOptions, run_admm, run_ista, state_from_primal_dual
from .errors import ConfigError
from .gamp import MAX_SUM, SUM_PRODUCT, GampOptions, run_gamp
from .io import FORMAT_VERSION, canonical_json, problem_from_dict, problem_to_dict, sha256_hex
from .penalties import PenaltyArray, penalty_from_dict
from .problem import GlmProblem
from .variational import check_maxsum_fixed_point

MATRIX_KINDS = ("gaussian_iid", "identity", "custom")
ALGOS = ("maxsum", "sumprod", "ista", "admm")


def philox(seed):
    """The package's only random generator: Philox keyed by ``seed``."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer", "$.seed")
    return np.random.Generator(np.random.Philox(key=seed))


@dataclass
class ProblemSpec:
    """Recipe for a random (or fixed) problem instance.

    ``input_spec`` and ``output_spec`` are penalty descriptors, either one
    object broadcast to every component or a list with one per component.
    With ``truth_gen`` the output descriptors act as likelihood templates:
    ``x_true`` is drawn from the input penalties and each output gets an
    observation drawn at ``z = A x_true``.
    """

    n: int
    m: int
    input_spec: object
    output_spec: object
    matrix_kind: str = "gaussian_iid"
    scale: float = None
    matrix_path: str = None
    seed: int = 0
    truth_gen: bool = False

    def __post_init__(self):
        for key in ("n", "m"):
            v = getattr(self, key)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError("must be a positive integer", f"$.{key}")
        if self.matrix_kind not in MATRIX_KINDS:
            raise ConfigError(f"must be one of {MATRIX_KINDS}", "$.matrix_kind")
        if self.matrix_kind == "identity" and self.n != self.m:
            raise ConfigError("identity matrix needs n == m", "$.matrix_kind")
        if self.matrix_kind == "custom" and not self.matrix_path:
            raise ConfigError("custom matrix needs matrix_path", "$.matrix_path")
        if self.scale is not None and not (isinstance(self.scale, (int, float)) and self.scale > 0):
            raise ConfigError("must be a positive number", "$.scale")
        philox(self.seed)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("problem spec must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known - {"format_version"}
        if extra:
            raise ConfigError(f"unexpected keys {sorted(extra)}", "$")
        for key in ("n", "m", "input_spec", "output_spec"):
            if key not in d:
                raise ConfigError("missing required key", f"$.{key}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self):
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        return d

    def effective_scale(self):
        return 1.0 / np.sqrt(self.m) if self.scale is None else float(self.scale)


def _penalty_list(desc, count, path):
    if isinstance(desc, dict):
        return [penalty_from_dict(desc, path)] * count
    if isinstance(desc, list):
        if len(desc) != count:
            raise ConfigError(f"expected {count} descriptors, got {len(desc)}", path)
        return [penalty_from_dict(d, f"{path}[{i}]") for i, d in enumerate(desc)]
    raise ConfigError("penalty spec must be an object or a list of objects", path)


def _load_matrix(path, base_dir):
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    try:
        doc = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read matrix file {p}: {exc}", "$.matrix_path") from exc
    rows = doc.get("A") if isinstance(doc, dict) else doc
    try:
        A = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"matrix file {p} is not numeric", "$.matrix_path") from exc
    return A


def generate_problem(spec, base_dir=None):
    """Build the problem described by ``spec``.

    Returns ``(problem, truth)`` where ``truth`` is ``(x_true, y)`` when
    ``spec.truth_gen`` is set and ``None`` otherwise.
    """
    rng = philox(spec.seed)
    if spec.matrix_kind == "identity":
        A = np.eye(spec.n)
    elif spec.matrix_kind == "gaussian_iid":
        A = rng.standard_normal((spec.m, spec.n)) * spec.effective_scale()
    else:
        A = _load_matrix(spec.matrix_path, base_dir)
        if A.shape != (spec.m, spec.n):
            raise ConfigError(f"matrix has shape {A.shape}, spec says {(spec.m, spec.n)}", "$.matrix_path")
    inputs = _penalty_list(spec.input_spec, spec.n, "$.input_spec")
    outputs = _penalty_list(spec.output_spec, spec.m, "$.output_spec")
    truth = None
    if spec.truth_gen:
        x_true = np.array([float(np.asarray(p.sample(rng, 1)).ravel()[0]) for p in inputs])
        z_true = A @ x_true
        try:
            outputs = [p.observe(z, rng) for p, z in zip(outputs, z_true)]
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], "$.output_spec") from exc
        y = np.array([_observation(p) for p in outputs])
        truth = (x_true, y)
    return GlmProblem(A, PenaltyArray(inputs), PenaltyArray(outputs)), truth


def _observation(pen):
    return float(pen.y if pen.kind == "quadratic" else pen.loc)


def load_problem_source(source, seed=None):
    """Resolve a ``--problem`` argument.

    ``source`` is a path or an inline JSON object.  A document with an ``A``
    key is a stored problem; one with ``n`` and ``m`` is a
    :class:`ProblemSpec` (``seed`` overrides its seed).  Returns
    ``(problem, truth, descriptor)`` where ``descriptor`` is the document
    needed to rebuild the problem.
    """
    base_dir = None
    text = source.strip()
    if not text.startswith("{"):
        p = Path(source)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read problem file {p}: {exc}") from exc
        base_dir = p.parent
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"problem is not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and "A" in doc:
        problem, truth = problem_from_dict(doc, base_dir=base_dir)
        return problem, truth, {"problem": problem_to_dict(problem) if problem.A.size <= 10**6 else doc}
    spec_doc = dict(doc) if isinstance(doc, dict) else doc
    if seed is not None and isinstance(spec_doc, dict):
        spec_doc["seed"] = int(seed)
    spec = ProblemSpec.from_dict(spec_doc)
    problem, truth = generate_problem(spec, base_dir=base_dir)
    if spec.matrix_kind == "custom":
        # an external matrix file would make the manifest depend on the working tree
        return problem, truth, {"problem": problem_to_dict(problem)}
    return problem, truth, {"spec": spec.to_dict()}


@dataclass
class SolverRun:
    """Outcome of one solver on one problem, in GAMP-state form."""

    algo: str
    state: object
    trace: list
    status: str
    iterations: int
    wall_time: float


@dataclass
class SolverParams:
    damping: float = 1.0
    alpha: float = 1.0
    c: float = None
    theta: float = 1.0
    x_update: str = EXACT
    max_iters: int = 5000
    tol: float = 1e-10
    trace_every: int = 1


def run_solver(problem, algo, params=None):
    """Run ``algo`` (one of :data:`ALGOS`) and return a :class:`SolverRun`.

    ISTA and ADMM results are packed into a max-sum state so the same
    verifier and file formats apply; ISTA's dual is ``-f_z'(A x)``.
    """
    params = params or SolverParams()
    t0 = time.perf_counter()
    if algo in ("maxsum", "sumprod"):
        opts = GampOptions(
            variant=MAX_SUM if algo == "maxsum" else SUM_PRODUCT, max_iters=params.max_iters,
            tol=params.tol, damping=params.damping, trace_every=params.trace_every,
        )
        res = run_gamp(problem, opts)
        state, trace, status, iters = res.state, res.trace, res.status, res.iterations
    elif algo == "ista":
        res = run_ista(problem, c=params.c, max_iters=params.max_iters, tol=params.tol, trace_every=params.trace_every)
        s = -problem.output_penalties.grad(res.z)
        state = state_from_primal_dual(problem, res.x, res.z, s)
        trace, status, iters = res.trace, res.status, res.iterations
    elif algo == "admm":
        opts = AdmmOptions(
            alpha=params.alpha, x_update=params.x_update, c=params.c, theta=params.theta,
            max_iters=params.max_iters, tol=params.tol, trace_every=params.trace_every,
        )
        res = run_admm(problem, opts)
        state = state_from_primal_dual(problem, res.x, res.z, res.s)
        trace, status, iters = res.trace, res.status, res.iterations
    else:
        raise ConfigError(f"unknown algorithm {algo!r}; choose from {ALGOS}")
    return SolverRun(algo, state, trace, status, iters, time.perf_counter() - t0)


def kkt_residual(problem, state):
    """Largest residual of the max-sum fixed-point check."""
    rep = check_maxsum_fixed_point(problem, state, tol=np.inf, kink_radius=1e-9)
    return max(rep.residuals().values())


def versions():
    return {
        "gampkit": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "prng": "numpy Philox4x64-10, key=seed",
    }


def spec_hash(descriptor):
    """SHA-256 of the canonical JSON of a problem descriptor."""
    return sha256_hex(canonical_json(descriptor))


@dataclass
class ExperimentResult:
    """Record of one run as written to the manifest."""

    spec_hash: str
    solver: str
    state: dict
    trace_path: str
    report: dict = None
    wall_time: float = 0.0
    status: str = ""
    iterations: int = 0
    extra: dict = field(default_factory=dict)


COMPARE_COLUMNS = ("solver", "status", "iterations", "objective", "kkt_residual")


def compare_solvers(problem, algos, params):
    """One row per solver; a failure is recorded in the row, never raised."""
    rows = []
    for algo in algos:
        try:
            run = run_solver(problem, algo, params)
            rows.append({
                "solver": algo, "status": run.status, "iterations": run.iterations,
                "objective": problem.objective(run.state.x), "kkt_residual": kkt_residual(problem, run.state),
            })
        except Exception as exc:  # recorded in-table by contract
            rows.append({
                "solver": algo, "status": f"error: {type(exc).__name__}: {exc}",
                "iterations": 0, "objective": float("nan"), "kkt_residual": float("nan"),
            })
    return rows


def format_table(rows):
    """Aligned plain-text rendering of :func:`compare_solvers` rows."""
    cells = [list(COMPARE_COLUMNS)]
    for r in rows:
        cells.append([
            r["solver"], r["status"], str(r["iterations"]), f"{r['objective']:.12g}", f"{r['kkt_residual']:.3e}",
        ])
    widths = [max(len(row[k]) for row in cells) for k in range(len(COMPARE_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells)


__all__ = [
    "ALGOS", "COMPARE_COLUMNS", "ExperimentResult", "ProblemSpec", "SolverParams", "SolverRun",
    "compare_solvers", "format_table", "generate_problem", "kkt_residual", "load_problem_source",
    "philox", "run_solver", "spec_hash", "versions", "INEXACT",
]
