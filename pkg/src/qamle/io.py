"""Problem ingestion, solution persistence, run logs and plot export.

File formats are described in ``docs/formats.md``.  Reals are written with
Python's shortest round-trip ``repr``, so every saved float reloads to the
same binary64 value.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InfiniteLipschitz, ParseError
from .functionals import FunctionalKind, Jet, JetField, ScalarField, phi_total
from .geometry import BallUnion, DiscreteDomain
from .refine import IterationRecord, default_config


# -- low-level readers ---------------------------------------------------------

def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def _real(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ParseError(f"{where}: value must be finite")
    return value


def _index(key, n, where):
    try:
        i = int(key)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: point index {key!r} is not an integer") from None
    if str(i) != str(key).strip() and not isinstance(key, int):
        raise ParseError(f"{where}: point index {key!r} is not an integer")
    if not 0 <= i < n:
        raise ParseError(f"{where}: point index {i} out of range [0, {n})")
    return i


def _read_points_csv(path):
    rows = []
    try:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    rows.append([float(c) for c in row])
                except ValueError:
                    if lineno == 1 and not rows:
                        continue  # header
                    raise ParseError(f"{path}:{lineno}: non-numeric coordinate") from None
                if not all(math.isfinite(v) for v in rows[-1]):
                    raise ParseError(f"{path}:{lineno}: coordinate must be finite")
                if len(rows[-1]) != len(rows[0]):
                    raise ParseError(f"{path}:{lineno}: expected {len(rows[0])} columns, "
                                     f"got {len(rows[-1])}")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from None
    if not rows:
        raise ParseError(f"{path}: no points")
    return {"points": rows}


@dataclass
class DomainDoc:
    points: np.ndarray
    metric: str = "euclidean"
    k_neighbors: int | None = None
    constraints: list | None = None
    h: float | None = None


def read_domain(path):
    """Parse a domain file (JSON or CSV) without building the domain."""
    path = Path(path)
    doc = _read_points_csv(path) if path.suffix.lower() == ".csv" else _read_json(path)
    if not isinstance(doc, dict) or "points" not in doc:
        raise ParseError(f"{path}: missing 'points'")
    pts = doc["points"]
    if not isinstance(pts, list) or not pts:
        raise ParseError(f"{path}: 'points' must be a nonempty list")
    first = pts[0] if isinstance(pts[0], list) else None
    if first is None or not first:
        raise ParseError(f"{path}: points[0] must be a nonempty coordinate list")
    dim = len(first)
    arr = np.empty((len(pts), dim))
    for k, p in enumerate(pts):
        if not isinstance(p, list) or len(p) != dim:
            raise ParseError(f"{path}: points[{k}] must have {dim} coordinates")
        for a, v in enumerate(p):
            arr[k, a] = _real(v, f"{path}: points[{k}][{a}]")
    metric, k_nb = "euclidean", None
    m = doc.get("metric", "euclidean")
    if isinstance(m, dict) and set(m) == {"graph"}:
        metric = "graph"
        k_nb = m["graph"]
        if isinstance(k_nb, bool) or not isinstance(k_nb, int) or k_nb < 1:
            raise ParseError(f"{path}: metric.graph must be a positive integer")
    elif m != "euclidean":
        raise ParseError(f"{path}: metric must be \"euclidean\" or {{\"graph\": k}}")
    cons = doc.get("constraints")
    if cons is not None:
        if not isinstance(cons, list):
            raise ParseError(f"{path}: 'constraints' must be a list")
        cons = [_index(c, len(pts), f"{path}: constraints[{k}]") for k, c in enumerate(cons)]
    h = doc.get("h")
    if h is not None:
        h = _real(h, f"{path}: h")
    return DomainDoc(arr, metric, k_nb, cons, h)


def read_field_payload(path, n_points, dim):
    """Return ``(kind, data)`` with data ``{index: float}`` or ``{index: Jet}``."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    keys = {"values", "jets"} & set(doc)
    if len(keys) != 1:
        raise ParseError(f"{path}: expected exactly one of 'values' or 'jets'")
    key = keys.pop()
    body = doc[key]
    if not isinstance(body, dict) or not body:
        raise ParseError(f"{path}: '{key}' must be a nonempty object")
    data = {}
    for k, v in body.items():
        where = f"{path}: {key}[{k!r}]"
        i = _index(k, n_points, where)
        if i in data:
            raise ParseError(f"{where}: duplicate index {i}")
        if key == "values":
            data[i] = _real(v, where)
            continue
        if not isinstance(v, dict) or set(v) != {"value", "grad"}:
            raise ParseError(f"{where}: a jet needs exactly 'value' and 'grad'")
        g = v["grad"]
        if not isinstance(g, list) or len(g) != dim:
            raise ParseError(f"{where}.grad: expected {dim} components")
        data[i] = Jet(_real(v["value"], f"{where}.value"),
                      np.array([_real(c, f"{where}.grad[{a}]") for a, c in enumerate(g)]))
    kind = FunctionalKind.LIP if key == "values" else FunctionalKind.GAMMA1
    return kind, data


def _payload_equal(a, b):
    if isinstance(a, Jet):
        return a.value == b.value and np.array_equal(a.grad, b.grad)
    return a == b


def _reject_duplicates(doc, data, path):
    """Reject duplicated coordinates; conflicting data on them is infinite slope."""
    pts = doc.points
    _, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    if first.size == len(pts):
        return
    groups = [np.flatnonzero(inverse == g).tolist()
              for g in np.flatnonzero(np.bincount(inverse) > 1)]
    for rows in groups:
        carried = [r for r in rows if r in data]
        if len(carried) >= 2 and not all(_payload_equal(data[carried[0]], data[r])
                                         for r in carried[1:]):
            raise InfiniteLipschitz(
                f"points {carried} share coordinates {pts[rows[0]].tolist()} "
                f"but carry different data")
    raise ParseError(f"{path}: points {groups[0]} are duplicates; "
                     f"domain points must be distinct")


# -- problem -------------------------------------------------------------------

@dataclass
class ProblemSpec:
    domain_path: str
    field_path: str
    kind: FunctionalKind
    domain: DiscreteDomain
    field: object
    K: float
    config: RefinementConfig


def build_field(dom, kind, data):
    if kind is FunctionalKind.LIP:
        return ScalarField(dom, data)
    return JetField(dom, data)


def load_problem(domain_path, field_path, functional=None, **flags):
    """Read and validate a problem; unset flags get data-scaled defaults.

    ``flags`` holds RefinementConfig fields (``rho``, ``n0``, ``alpha``,
    ``sigma0``, ``max_iter``, ``scan``, ``seed``, ``samples_per_iter``,
    ``c_b``, ``initial``); ``None`` means "use the default".
    """
    doc = read_domain(domain_path)
    kind, data = read_field_payload(field_path, len(doc.points), doc.points.shape[1])
    if functional is not None:
        want = FunctionalKind.parse(functional)
        if want is not kind:
            shape = "values" if kind is FunctionalKind.LIP else "jets"
            raise ParseError(f"{field_path}: payload holds {shape}, "
                             f"which does not match functional {want.value!r}")
    _reject_duplicates(doc, data, domain_path)
    E = sorted(data)
    if doc.constraints is not None and sorted(set(doc.constraints)) != E:
        raise ParseError(f"{domain_path}: 'constraints' {sorted(set(doc.constraints))} "
                         f"differ from the indices defined in {field_path}")
    try:
        dom = DiscreteDomain(doc.points, metric=doc.metric, k_neighbors=doc.k_neighbors,
                             constraints=E, h=doc.h)
    except ValueError as exc:
        raise ParseError(f"{domain_path}: {exc}") from None
    f = build_field(dom, kind, data)
    K = phi_total(kind, f)
    if not math.isfinite(K):
        raise InfiniteLipschitz(f"{field_path}: data has an infinite functional value")
    try:
        config = default_config(dom, K, **flags)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid configuration: {exc}") from None
    return ProblemSpec(str(domain_path), str(field_path), kind, dom, f, K, config)


# -- atomic writes ---------------------------------------------------------------

def atomic_write_text(path, text):
    """Write ``text`` to a sibling temp file, then rename it over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj):
    return json.dumps(obj, sort_keys=True, allow_nan=False)


# -- solution artifact -----------------------------------------------------------

@dataclass
class SolutionArtifact:
    functional: str
    values: list
    grads: list | None
    K: float
    iterations: int
    max_gap: float | None
    config: dict
    version: str = __version__
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_field(cls, kind, U, K, iterations, max_gap, config):
        kind = FunctionalKind.parse(kind)
        grads = U.grads.tolist() if kind is FunctionalKind.GAMMA1 else None
        gap = None if max_gap is None or not math.isfinite(max_gap) else float(max_gap)
        return cls(kind.value, U.values.tolist(), grads, float(K), int(iterations), gap,
                   dict(config))

    def to_field(self, dom):
        kind = FunctionalKind.parse(self.functional)
        vals = np.asarray(self.values, dtype=float)
        if len(vals) != dom.n:
            raise ParseError(f"solution has {len(vals)} values for a domain of {dom.n} points")
        if kind is FunctionalKind.LIP:
            return ScalarField(dom, vals)
        return JetField(dom, (vals, np.asarray(self.grads, dtype=float)))

    def to_json(self):
        out = {"functional": self.functional, "values": self.values, "K": self.K,
               "iterations": self.iterations, "max_gap": self.max_gap,
               "config": self.config, "version": self.version}
        if self.grads is not None:
            out["grads"] = self.grads
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_json(cls, obj, where="solution"):
        try:
            return cls(obj["functional"], list(obj["values"]), obj.get("grads"),
                       float(obj["K"]), int(obj["iterations"]), obj.get("max_gap"),
                       dict(obj["config"]), str(obj.get("version", "")),
                       dict(obj.get("extra", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}: malformed solution ({exc})") from None

    def __eq__(self, other):
        return isinstance(other, SolutionArtifact) and _dump(self.to_json()) == _dump(other.to_json())


def save_solution(artifact, path):
    atomic_write_text(path, _dump(artifact.to_json()) + "\n")


def load_solution(path):
    return SolutionArtifact.from_json(_read_json(path), str(path))


# -- logs and plots --------------------------------------------------------------

def format_log(records):
    return "".join(_dump(r.to_json()) + "\n" for r in records)


def write_log(records, path):
    atomic_write_text(path, format_log(records))


def read_log(path):
    records = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(IterationRecord.from_json(json.loads(line)))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ParseError(f"{path}:{lineno}: bad log record ({exc})") from None
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from None
    return records


def format_plot_csv(dom, U):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = dom.dim
    jets = hasattr(U, "grads")
    header = [f"x{k + 1}" for k in range(d)] + ["u"]
    if jets:
        header += [f"du{k + 1}" for k in range(d)]
    w.writerow(header)
    vals = U.values
    grads = U.grads if jets else None
    for i in range(dom.n):
        row = [repr(float(v)) for v in dom.points[i]] + [repr(float(vals[i]))]
        if jets:
            row += [repr(float(g)) for g in grads[i]]
        w.writerow(row)
    return buf.getvalue()


def write_plot_csv(dom, U, path):
    atomic_write_text(path, format_plot_csv(dom, U))


def parse_ball_union(text, where="--omega"):
    """Ball union from JSON text ``[[center, radius], ...]``."""
    try:
        obj = json.loads(text)
        return BallUnion.from_json(obj)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: expected [[center, radius], ...] ({exc})") from None
