"""File formats: problem JSON, state JSON, trace CSV.

All JSON documents carry ``"format_version": 1``.  The canonical form has
sorted keys, no insignificant whitespace and Python's shortest round-trip
float repr, so equal documents are byte-identical and hash stably.
"""

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .gamp import TRACE_COLUMNS, GampState
from .penalties import PenaltyArray, penalty_from_dict
from .problem import GlmProblem

FORMAT_VERSION = 1
SIDECAR_THRESHOLD = 1_000_000


def canonical_json(obj):
    """Sorted keys, compact separators, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _check_version(doc, what):
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} must be a JSON object")
    v = doc.get("format_version")
    if v != FORMAT_VERSION:
        raise ConfigError(f"unsupported {what} format_version {v!r}", "$.format_version")


def problem_to_dict(problem, path=None, truth=None):
    """JSON-ready dict; ``A`` goes to a little-endian float64 sidecar above 10^6 entries.

    ``path`` is the JSON file the dict will be written to; it names the sidecar.
    """
    A = problem.A
    if A.size > SIDECAR_THRESHOLD:
        if path is None:
            raise ConfigError("a sidecar matrix needs a target path")
        side = Path(path).with_suffix(".A.f64le")
        A.astype("<f8").tofile(side)
        a_entry = {"sidecar": side.name, "shape": list(A.shape)}
    else:
        a_entry = A.tolist()
    doc = {
        "format_version": FORMAT_VERSION,
        "A": a_entry,
        "input_penalties": problem.input_penalties.to_list(),
        "output_penalties": problem.output_penalties.to_list(),
    }
    if truth is not None:
        doc["x_true"] = [float(v) for v in truth[0]]
        doc["y"] = [float(v) for v in truth[1]]
    return doc


def _penalties(entries, path):
    if not isinstance(entries, list) or not entries:
        raise ConfigError("expected a non-empty list of penalty descriptors", path)
    return PenaltyArray([penalty_from_dict(d, f"{path}[{i}]") for i, d in enumerate(entries)])


def _matrix(entry, base_dir):
    if isinstance(entry, dict):
        if "sidecar" not in entry or "shape" not in entry:
            raise ConfigError("sidecar entry needs 'sidecar' and 'shape'", "$.A")
        shape = tuple(int(v) for v in entry["shape"])
        data = np.fromfile(Path(base_dir or ".") / entry["sidecar"], dtype="<f8")
        if data.size != math.prod(shape):
            raise ConfigError(f"sidecar holds {data.size} values, shape needs {math.prod(shape)}", "$.A.sidecar")
        return data.reshape(shape).astype(float)
    try:
        A = np.array(entry, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"matrix is not a rectangular numeric array: {exc}", "$.A") from exc
    if A.ndim != 2:
        raise ConfigError("matrix must be a nested list of rows", "$.A")
    return A


def problem_from_dict(doc, base_dir=None):
    """Inverse of :func:`problem_to_dict`; returns ``(problem, truth or None)``."""
    _check_version(doc, "problem")
    for key in ("A", "input_penalties", "output_penalties"):
        if key not in doc:
            raise ConfigError(f"missing key {key!r}", "$")
    A = _matrix(doc["A"], base_dir)
    problem = GlmProblem(
        A, _penalties(doc["input_penalties"], "$.input_penalties"), _penalties(doc["output_penalties"], "$.output_penalties")
    )
    truth = None
    if "x_true" in doc:
        truth = (np.asarray(doc["x_true"], dtype=float), np.asarray(doc.get("y", []), dtype=float))
    return problem, truth


def save_problem(problem, path, truth=None):
    doc = problem_to_dict(problem, path, truth)
    Path(path).write_text(canonical_json(doc) + "\n")
    return doc


def load_problem(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return problem_from_dict(doc, base_dir=path.parent)


def state_to_dict(state):
    d = state.to_dict()
    d["format_version"] = FORMAT_VERSION
    return d


def save_state(state, path):
    Path(path).write_text(canonical_json(state_to_dict(state)) + "\n")


def load_state(path):
    doc = json.loads(Path(path).read_text())
    _check_version(doc, "state")
    try:
        return GampState.from_dict(doc)
    except KeyError as exc:
        raise ConfigError(f"state is missing vector {exc.args[0]!r}") from exc


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in trace:
            w.writerow([repr(v) if isinstance(v, float) else v for v in rec.as_row()])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ConfigError(f"{path} does not have the trace header {','.join(TRACE_COLUMNS)}")
    return [[int(r[0])] + [float(v) for v in r[1:]] for r in rows[1:]]
