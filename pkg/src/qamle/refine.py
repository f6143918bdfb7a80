"""Iterative local correction towards a quasi absolutely minimal extension.

Starting from a minimal extension ``U_0`` of the data, the solver scans a
finite family of ball unions that avoid the constraint set.  For a region
``omega`` the defect is

    gap = psi_localized(U, interior(omega), alpha) - Phi(U; boundary(omega))

and the first region in stream order with ``gap >= sigma0`` is corrected by
re-extending ``U`` from its boundary trace.  The loop stops when a full
scan finds no such region.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBoundary, MaxIterExceeded
from .extension import (correction_H, mcshane_upper, minimal_extension,
                        whitney_lower)
from .functionals import (NO_ADMISSIBLE_PAIR, FunctionalKind, pair_matrix,
                          phi_set, phi_total, psi_localized)
from .geometry import DEFAULT_CB, BallUnion, interior, region_boundary

log = logging.getLogger(__name__)

MAIN_TOL = 1e-9
# exhaustive scan visits large radii first
LADDER_DESCENDING = True


def scan_threads():
    """Worker count for the pair-matrix scan, capped by ``QAMLE_THREADS``."""
    env = os.environ.get("QAMLE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


@dataclass(frozen=True)
class RefinementConfig:
    """Parameters of the quasi-AMLE iteration.

    ``scan`` is ``"exhaustive"`` (single balls on the radius ladder
    ``rho * 2**k`` up to the domain diameter) or ``"random"``: a family of
    ``samples_per_iter`` unions of up to ``n0`` balls, drawn once from
    ``seed`` and rescanned at every iteration.  ``initial`` selects the
    scalar starting extension.
    """

    rho: float
    n0: int
    alpha: float
    sigma0: float
    max_iter: int | None = None
    scan: str = "exhaustive"
    seed: int = 0
    samples_per_iter: int = 256
    c_b: float = DEFAULT_CB
    initial: str = "average"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if int(self.n0) < 1:
            raise ValueError("n0 must be at least 1")
        if self.max_iter is not None and int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")
        if self.scan not in ("exhaustive", "random"):
            raise ValueError(f"unknown scan mode {self.scan!r}")
        if not self.c_b > 0:
            raise ValueError("c_b must be positive")
        if self.initial not in ("average", "upper", "lower"):
            raise ValueError(f"unknown initial extension {self.initial!r}")

    def iteration_cap(self, K, n_points):
        if self.max_iter is not None:
            return int(self.max_iter)
        levels = max(1, math.ceil(2 * K / self.sigma0))
        return 10 * levels * n_points

    def to_json(self):
        return {"rho": self.rho, "n0": self.n0, "alpha": self.alpha, "sigma0": self.sigma0,
                "max_iter": self.max_iter, "scan": self.scan, "seed": self.seed,
                "samples_per_iter": self.samples_per_iter, "c_b": self.c_b,
                "initial": self.initial}


@dataclass(frozen=True)
class IterationRecord:
    n: int
    omega: BallUnion
    gap: float
    phi_before: float
    phi_after: float
    phi_boundary: float
    phi_global: float
    K: float
    boundary_digest: str

    def to_json(self):
        return {"n": self.n, "omega": self.omega.to_json(), "gap": self.gap,
                "phi_before": self.phi_before, "phi_after": self.phi_after,
                "phi_boundary": self.phi_boundary, "phi_global": self.phi_global,
                "K": self.K, "boundary_digest": self.boundary_digest}

    @classmethod
    def from_json(cls, obj):
        return cls(int(obj["n"]), BallUnion.from_json(obj["omega"]), float(obj["gap"]),
                   float(obj["phi_before"]), float(obj["phi_after"]),
                   float(obj.get("phi_boundary", float("nan"))),
                   float(obj.get("phi_global", float("nan"))), float(obj["K"]),
                   str(obj.get("boundary_digest", "")))


@dataclass
class RefinementState:
    U: object
    K: float
    n: int = 0
    log: list = field(default_factory=list)


# -- candidate family ----------------------------------------------------------

def radius_ladder(rho, diameter):
    radii = []
    r = float(rho)
    while r <= diameter:
        radii.append(r)
        r *= 2
    return radii


def _admissible_parts(dom, omega, c_b):
    """(interior, boundary) if ``omega`` may be corrected, else None."""
    inner = interior(dom, omega)
    if inner.size == 0 or dom.constraint_mask[inner].any():
        return None
    try:
        bnd = region_boundary(dom, inner, c_b)
    except EmptyBoundary:
        return None
    return inner, bnd


def _raw_stream(dom, config):
    free = np.flatnonzero(~dom.constraint_mask)
    if config.scan == "exhaustive":
        for r in sorted(radius_ladder(config.rho, dom.diameter), reverse=LADDER_DESCENDING):
            for c in free:
                yield BallUnion(((int(c), r),))
        return
    if free.size == 0 or config.rho > dom.diameter:
        return
    rng = np.random.default_rng(int(config.seed))
    span = math.log2(dom.diameter / config.rho)
    for _ in range(config.samples_per_iter):
        k = int(rng.integers(1, config.n0 + 1))
        centers = rng.choice(free, size=k)
        radii = config.rho * np.exp2(rng.uniform(0.0, span, size=k))
        yield BallUnion(tuple(zip(centers.tolist(), radii.tolist())))


def candidate_stream(dom, config):
    """Admissible regions in deterministic scan order.

    Every emitted union satisfies the radius/count limits, has a nonempty
    interior disjoint from the constraint set and a nonempty boundary.
    Regions whose interior repeats an earlier one are skipped.
    """
    seen = set()
    for omega in _raw_stream(dom, config):
        if not omega.satisfies(config.rho, config.n0):
            continue
        parts = _admissible_parts(dom, omega, config.c_b)
        if parts is None:
            continue
        key = parts[0].tobytes()
        if key in seen:
            continue
        seen.add(key)
        yield omega


# -- gaps ----------------------------------------------------------------------

def _boundary_digest(U, bnd):
    h = hashlib.sha1(np.ascontiguousarray(U.values[bnd]).tobytes())
    if hasattr(U, "grads"):
        h.update(np.ascontiguousarray(U.grads[bnd]).tobytes())
    return h.hexdigest()


def omega_gap(kind, U, omega, alpha, c_b=DEFAULT_CB):
    """Defect of ``U`` on ``omega``; ``-inf`` when no admissible pair exists."""
    dom = U.domain
    inner = interior(dom, omega)
    bnd = region_boundary(dom, inner, c_b)
    psi = psi_localized(kind, U, inner, alpha, c_b)
    if psi == NO_ADMISSIBLE_PAIR:
        return NO_ADMISSIBLE_PAIR
    phib = phi_set(kind, U, bnd) if bnd.size >= 2 else 0.0
    return psi - phib


def find_violation(kind, state, config, stream):
    """First region of ``stream`` whose defect reaches ``sigma0``, or None."""
    for omega in stream:
        gap = omega_gap(kind, state.U, omega, config.alpha, config.c_b)
        if gap >= config.sigma0:
            return omega, gap
    return None


class _Candidate:
    __slots__ = ("omega", "inner", "bnd", "roots", "reach")

    def __init__(self, omega, inner, bnd, roots, reach):
        self.omega = omega
        self.inner = inner
        self.bnd = bnd
        self.roots = roots
        self.reach = reach


class ScanContext:
    """Static geometry of a candidate family, reused across iterations.

    For each candidate the admissible pairs rooted at ``x`` are exactly the
    first ``reach[x]`` entries of ``x``'s distance-sorted row, so the
    localised functional of every candidate reduces to a lookup in the
    row-wise running maximum of the pair matrix.
    """

    def __init__(self, dom, config, omegas):
        self.dom = dom
        self.config = config
        D = dom.distances
        self.order = np.argsort(D, axis=1, kind="stable")
        self.sorted_d = np.take_along_axis(D, self.order, axis=1)
        self.candidates = []
        alpha = config.alpha
        inside = np.zeros(dom.n, dtype=bool)
        for omega in omegas:
            parts = _admissible_parts(dom, omega, config.c_b)
            if parts is None:
                continue
            inner, bnd = parts
            inside[:] = False
            inside[inner] = True
            depth = D[np.ix_(inner, bnd)].min(axis=1)
            roots = inner[depth >= alpha]
            if roots.size:
                flags = inside[self.order[roots]]
                # first non-interior entry of each sorted row; all-inside rows cannot occur
                first_out = np.argmax(~flags, axis=1)
                radius = self.sorted_d[roots, first_out]
                reach = np.array([np.searchsorted(self.sorted_d[x], r, side="right")
                                  for x, r in zip(roots, radius)], dtype=int)
            else:
                reach = np.empty(0, dtype=int)
            self.candidates.append(_Candidate(omega, inner, bnd, roots, reach))
        self._flat_roots = np.concatenate(
            [c.roots for c in self.candidates] + [np.empty(0, dtype=int)])
        self._flat_reach = np.concatenate(
            [c.reach for c in self.candidates] + [np.empty(0, dtype=int)])
        sizes = np.array([c.roots.size for c in self.candidates], dtype=int)
        self._starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]) if sizes.size else sizes
        self._sizes = sizes

    def __len__(self):
        return len(self.candidates)

    def pair_values(self, kind, U):
        """Full pair matrix of ``U`` and its running maximum along sorted rows."""
        n = self.dom.n
        S = np.empty((n, n))
        T = np.empty((n, n))
        idx = np.arange(n)
        chunks = [idx[s:s + 256] for s in range(0, n, 256)]

        def work(rows):
            S[rows] = pair_matrix(kind, U, rows, idx)
            T[rows] = np.maximum.accumulate(
                np.take_along_axis(S[rows], self.order[rows], axis=1), axis=1)

        with ThreadPoolExecutor(max_workers=scan_threads()) as pool:
            list(pool.map(work, chunks))
        return S, T

    def psi_all(self, T):
        """Localised functional of every candidate (``-inf`` if no pair)."""
        out = np.full(len(self.candidates), NO_ADMISSIBLE_PAIR)
        if self._flat_roots.size == 0:
            return out
        vals = T[self._flat_roots, self._flat_reach - 1]
        # a reach of 1 holds only the root itself
        vals = np.where(self._flat_reach >= 2, vals, NO_ADMISSIBLE_PAIR)
        nonempty = self._sizes > 0
        red = np.maximum.reduceat(vals, self._starts[nonempty])
        out[nonempty] = red
        return out

    @staticmethod
    def boundary_phi(S, cand):
        b = cand.bnd
        return float(S[np.ix_(b, b)].max()) if b.size >= 2 else 0.0

    def gaps(self, S, T):
        psi = self.psi_all(T)
        phib = np.array([self.boundary_phi(S, c) for c in self.candidates])
        return psi - phib


# -- iteration -----------------------------------------------------------------

def _interior_phi(kind, U, inner):
    return phi_set(kind, U, inner) if inner.size >= 2 else 0.0


def refine_step(kind, state, omega, config, gap=None):
    """Correct ``state.U`` on ``omega`` and append the iteration record."""
    kind = FunctionalKind.parse(kind)
    U = state.U
    dom = U.domain
    inner = interior(dom, omega)
    bnd = region_boundary(dom, inner, config.c_b)
    if gap is None:
        gap = omega_gap(kind, U, omega, config.alpha, config.c_b)
    phi_b = phi_set(kind, U, bnd) if bnd.size >= 2 else 0.0
    before = _interior_phi(kind, U, inner)
    V = correction_H(kind, U, omega, config.c_b)
    after = _interior_phi(kind, V, inner)
    if after > phi_b + MAIN_TOL * max(1.0, state.K):
        raise AssertionError(
            f"correction raised the interior value above the boundary value "
            f"({after!r} > {phi_b!r}) on {omega}")
    rec = IterationRecord(state.n + 1, omega, float(gap), before, after, phi_b,
                          phi_total(kind, V), state.K, _boundary_digest(U, bnd))
    return RefinementState(V, state.K, state.n + 1, state.log + [rec])


def initial_extension(kind, f, dom, method="average"):
    """``U_0``; ``method`` picks the scalar envelope (ignored for jets)."""
    kind = FunctionalKind.parse(kind)
    targets = np.setdiff1d(np.arange(dom.n), f.indices)
    if targets.size == 0:
        return f
    if kind is FunctionalKind.LIP and method != "average":
        ext = mcshane_upper if method == "upper" else whitney_lower
        return ext(f, targets)
    return minimal_extension(kind, f, targets)


def scan_context(kind, dom, config):
    """Scan context over the full candidate family of ``config``."""
    kind = FunctionalKind.parse(kind)
    omegas = list(candidate_stream(dom, config))
    if kind is FunctionalKind.GAMMA1:
        # jet corrections exist only for boundaries of one or two points
        omegas = [om for om in omegas
                  if region_boundary(dom, interior(dom, om), config.c_b).size <= 2]
    return ScanContext(dom, config, omegas)


def solve_quasi_amle(kind, f, dom, config, progress=None):
    """Quasi-AMLE of the data ``f`` on ``dom``.

    Returns ``(U, log)``.  Raises :class:`MaxIterExceeded` (with the
    partial state attached) when the iteration cap is reached.  The data
    must be defined exactly on the constraint set of ``dom``, since only
    those points are protected from corrections.
    """
    kind = FunctionalKind.parse(kind)
    if not np.array_equal(np.sort(f.indices), dom.constraints):
        raise ValueError(f"data defined on {f.indices.size} points but the domain "
                         f"constrains {dom.constraints.size}; they must coincide")
    K = phi_total(kind, f)
    U0 = initial_extension(kind, f, dom, config.initial)
    state = RefinementState(U0, K)
    if f.indices.size == dom.n:
        return U0, []
    cap = config.iteration_cap(K, dom.n)
    ctx = scan_context(kind, dom, config)
    last_digest = {}
    skipped_cycle = 0
    while True:
        S, T = ctx.pair_values(kind, state.U)
        psi = ctx.psi_all(T)
        hit = None
        for k in np.flatnonzero(psi >= config.sigma0):
            cand = ctx.candidates[k]
            gap = psi[k] - ctx.boundary_phi(S, cand)
            if gap < config.sigma0:
                continue
            key = cand.inner.tobytes()
            if last_digest.get(key) == _boundary_digest(state.U, cand.bnd):
                skipped_cycle += 1
                continue
            hit = (cand, float(gap))
            break
        if hit is None:
            break
        if state.n >= cap:
            raise MaxIterExceeded(f"no convergence after max_iter={cap} corrections", state)
        cand, gap = hit
        last_digest[cand.inner.tobytes()] = _boundary_digest(state.U, cand.bnd)
        state = refine_step(kind, state, cand.omega, config, gap=gap)
        if state.log[-1].phi_global > K + MAIN_TOL * max(1.0, K):
            # possible on Euclidean clouds: segments may skip the boundary layer
            log.warning("iteration %d raised the global functional to %r (K=%r)",
                        state.n, state.log[-1].phi_global, K)
        if progress is not None:
            progress(state)
    if skipped_cycle:
        log.warning("cycle guard skipped %d repeated corrections", skipped_cycle)
    return state.U, state.log


@dataclass
class Certificate:
    max_gap: float
    omega: BallUnion | None
    n_candidates: int
    histogram: tuple
    gaps: np.ndarray = field(repr=False)

    def to_json(self):
        counts, edges = self.histogram
        return {"max_gap": None if not np.isfinite(self.max_gap) else self.max_gap,
                "omega": None if self.omega is None else self.omega.to_json(),
                "n_candidates": self.n_candidates,
                "histogram": {"counts": [int(c) for c in counts],
                              "edges": [float(e) for e in edges]}}


def violation_certificate(kind, U, dom, config):
    """Exhaustive re-scan of the candidate family: worst defect and its region."""
    kind = FunctionalKind.parse(kind)
    ctx = scan_context(kind, dom, config)
    if len(ctx):
        S, T = ctx.pair_values(kind, U)
        gaps = ctx.gaps(S, T)
    else:
        gaps = np.empty(0)
    finite = gaps[np.isfinite(gaps)]
    if finite.size:
        k = int(np.argmax(np.where(np.isfinite(gaps), gaps, -np.inf)))
        best, omega = float(gaps[k]), ctx.candidates[k].omega
        hist = np.histogram(finite, bins=10)
    else:
        best, omega = NO_ADMISSIBLE_PAIR, None
        hist = (np.zeros(0, dtype=int), np.zeros(0))
    return Certificate(best, omega, int(gaps.size), hist, gaps)


def default_config(dom, K, **overrides):
    """Data-scaled parameters: sigma0 = 0.05 K, alpha = 2h, rho = 4h, n0 = 3."""
    params = dict(rho=4 * dom.h, n0=3, alpha=2 * dom.h,
                  sigma0=0.05 * K if K > 0 else 1.0)
    params.update({k: v for k, v in overrides.items() if v is not None})
    return RefinementConfig(**params)


def replay_corrections(kind, U0, omegas, c_b=DEFAULT_CB):
    """Fields ``[U_0, U_1, ...]`` obtained by re-applying logged corrections."""
    seq = [U0]
    for om in omegas:
        seq.append(correction_H(kind, seq[-1], om, c_b))
    return seq


__all__ = [
    "RefinementConfig", "RefinementState", "IterationRecord", "Certificate",
    "ScanContext", "candidate_stream", "find_violation", "refine_step",
    "solve_quasi_amle", "violation_certificate", "omega_gap", "radius_ladder",
    "initial_extension", "default_config", "scan_context", "replay_corrections",
]
