"""Finite-instance checkers for the structural properties of the functionals.

Each checker returns a :class:`CheckReport` whose ``witness`` holds plain
JSON-serialisable data describing the worst case found.  Tolerances carry a
mesh slack ``1e-6 + C h K``: continuum identities hold on a point cloud only
up to the distance between a maximising configuration and the nearest
domain points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateField
from .extension import biponctual_solve, correction_H
from .functionals import (NO_ADMISSIBLE_PAIR, FunctionalKind, pair_matrix,
                          phi_set, phi_total, psi_localized)
from .geometry import (DEFAULT_CB, ball_members, chasles_curve,
                       half_ball_members, hausdorff_distance, interior,
                       region_boundary)

MONOTONE_TOL = 1e-9
CHASLES_C = 4.0
CUSTOMS_C = 4.0
PROP1_C = 8.0


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_violation: float
    tolerance: float
    witness: dict = field(default_factory=dict)

    def to_json(self):
        wv = self.worst_violation
        return {"name": self.name, "passed": bool(self.passed),
                "worst_violation": wv if np.isfinite(wv) else None,
                "tolerance": self.tolerance, "witness": self.witness}


def _mesh_tol(dom, K, c):
    return 1e-6 + c * dom.h * K


def _pairs_row(kind, f, x, ys):
    return pair_matrix(kind, f, [x], np.asarray(ys, dtype=int))[0]


def check_chasles(kind, f, i, j):
    """Chasles' inequality along the discrete curve joining ``i`` and ``j``.

    Scalar fields use the straight segment.  Jet fields use the broken
    segment through the point ``c`` of the two-point problem at (i, j),
    snapped to the domain; if the two jets agree as polynomials the straight
    segment is used.
    """
    kind = FunctionalKind.parse(kind)
    dom = f.domain
    hb = half_ball_members(dom, i, j)
    missing = hb[~f.mask[hb]]
    if missing.size:
        raise ValueError(f"field undefined on half-ball point(s) {missing[:5].tolist()}")
    via = None
    if kind is FunctionalKind.GAMMA1:
        try:
            sol = biponctual_solve(dom.points[i], f.jet(i), dom.points[j], f.jet(j))
            via = dom.nearest_point(sol.c)
        except DegenerateField:
            via = None
        if via in (i, j):
            via = None
    curve = chasles_curve(dom, i, j, via=via)
    K = phi_total(kind, f)
    tol = _mesh_tol(dom, K, CHASLES_C)
    target = float(pair_matrix(kind, f, [i], [j])[0, 0])
    inner = np.asarray(curve.indices[1:-1], dtype=int)
    if inner.size == 0:
        return CheckReport("chasles", True, 0.0, tol,
                           {"i": int(i), "j": int(j), "curve": curve.indices.tolist()})
    legs = np.maximum(_pairs_row(kind, f, i, inner), _pairs_row(kind, f, j, inner))
    k = int(np.argmin(legs))
    worst = target - float(legs[k])
    return CheckReport("chasles", worst <= tol, worst, tol,
                       {"i": int(i), "j": int(j), "via": via, "phi_xy": target,
                        "argmin_point": int(inner[k]), "min_max_leg": float(legs[k]),
                        "curve": curve.indices.tolist()})


def _reach(dom, region):
    """Distance from each region point to the nearest point outside it."""
    region = np.asarray(region, dtype=int)
    outside = np.ones(dom.n, dtype=bool)
    outside[region] = False
    D = dom.dist_rows(region)
    if not outside.any():
        return D, np.full(region.size, np.inf)
    return D, D[:, outside].min(axis=1)


def _contained_pair_max(kind, U, region):
    """Largest pair value over pairs whose open ball at x stays in ``region``."""
    dom = U.domain
    region = np.unique(np.asarray(region, dtype=int))
    D, reach = _reach(dom, region)
    best, pair = NO_ADMISSIBLE_PAIR, None
    for r, x in enumerate(region):
        ys = np.flatnonzero((D[r] > 0) & (D[r] <= reach[r]))
        if ys.size:
            vals = _pairs_row(kind, U, int(x), ys)
            k = int(np.argmax(vals))
            if vals[k] > best:
                best, pair = float(vals[k]), (int(x), int(ys[k]))
    return best, pair


def check_customs(kind, U_sequence, omega_sequence, C, c_b=DEFAULT_CB):
    """Customs bound on the union of corrected regions.

    ``U_sequence`` ends with the fields produced by the corrections of
    ``omega_sequence`` (a leading ``U_0`` is allowed).  ``U_sequence[-1]``
    is checked on all pairs (x, y) whose open ball
    ``B(x; d(x, y))`` lies in the union of the interiors of
    ``omega_sequence``.  The hypothesis ``Phi(U_j; omega_j) <= C`` is
    re-evaluated and reported in the witness.
    """
    kind = FunctionalKind.parse(kind)
    U_sequence = list(U_sequence)
    omega_sequence = list(omega_sequence)
    U = U_sequence[-1]
    dom = U.domain
    K = phi_total(kind, U)
    tol = _mesh_tol(dom, K, CUSTOMS_C)
    if not omega_sequence:
        return CheckReport("customs", True, NO_ADMISSIBLE_PAIR, tol, {"regions": 0})
    union = np.unique(np.concatenate([interior(dom, om) for om in omega_sequence]))
    hyp = []
    if len(U_sequence) >= len(omega_sequence):
        # U_j is the field right after correcting omega_j
        for Uj, om in zip(U_sequence[-len(omega_sequence):], omega_sequence):
            inner = interior(dom, om)
            hyp.append(phi_set(kind, Uj, inner) if inner.size >= 2 else 0.0)
    best, pair = _contained_pair_max(kind, U, union)
    worst = best - C
    return CheckReport("customs", worst <= tol, worst, tol,
                       {"C": C, "union_size": int(union.size), "pair": pair,
                        "pair_value": best,
                        "max_region_value": max(hyp) if hyp else None,
                        "hypothesis_holds": bool(max(hyp) <= C + MONOTONE_TOL) if hyp else None})


def check_h_monotone(kind, U, omega, c_b=DEFAULT_CB):
    """Global functional after one correction versus before."""
    kind = FunctionalKind.parse(kind)
    before = phi_total(kind, U)
    V = correction_H(kind, U, omega, c_b)
    after = phi_total(kind, V)
    worst = after - before
    return CheckReport("hmono", worst <= MONOTONE_TOL, worst, MONOTONE_TOL,
                       {"omega": omega.to_json(), "before": before, "after": after})


def check_prop_alpha_zero(kind, f, V, c_b=DEFAULT_CB):
    """Split of a region value into deep pairs and boundary pairs.

    Compares ``Phi(f; V u dV)`` with ``max(Psi(f; V; 0), Phi(f; dV))``.
    """
    kind = FunctionalKind.parse(kind)
    dom = f.domain
    V = np.unique(np.asarray(V, dtype=int))
    bnd = region_boundary(dom, V, c_b)
    closure = np.union1d(V, bnd)
    lhs = phi_set(kind, f, closure)
    psi = psi_localized(kind, f, V, 0.0, c_b)
    phib = phi_set(kind, f, bnd) if bnd.size >= 2 else 0.0
    rhs = max(psi, phib)
    K = phi_total(kind, f)
    tol = _mesh_tol(dom, K, PROP1_C)
    worst = abs(lhs - rhs)
    return CheckReport("prop1", worst <= tol, worst, tol,
                       {"lhs": lhs, "psi": psi if np.isfinite(psi) else None,
                        "phi_boundary": phib, "region_size": int(V.size),
                        "boundary_size": int(bnd.size)})


def _union_mask(dom, balls):
    mask = np.zeros(dom.n, dtype=bool)
    for c, r in balls:
        mask[ball_members(dom, c, r)] = True
    return mask


def check_geometrical(dom, balls, beta, epsilon):
    """Smallest prefix of ``balls`` absorbing every shrunk contained ball.

    For each domain point x the largest open ball ``B(x; R)`` inside the
    full union is found; when ``R >= beta`` its shrink ``B(x; R - epsilon)``
    must lie in the prefix union.  Reports that prefix length ``N_eps``,
    the Hausdorff distances of the prefix unions to the full union, and
    whether the prefix unions grow monotonically.
    """
    balls = [(int(c), float(r)) for c, r in balls]
    if not balls:
        raise ValueError("ball list is empty")
    if not (beta > 0 and epsilon > 0):
        raise ValueError("beta and epsilon must be positive")
    small = [r for _, r in balls if not r > beta]
    if small:
        raise ValueError(f"radius {small[0]} does not exceed beta={beta}")
    prefix = []
    mask = np.zeros(dom.n, dtype=bool)
    for c, r in balls:
        mask = mask | _union_mask(dom, [(c, r)])
        prefix.append(mask.copy())
    full = prefix[-1]
    members = np.flatnonzero(full)
    D, reach = _reach(dom, members)
    reach = np.minimum(reach, dom.diameter + 1.0)
    shrunk = []
    for r, x in enumerate(members):
        if reach[r] >= beta and reach[r] - epsilon > 0:
            shrunk.append(np.flatnonzero(D[r] < reach[r] - epsilon))
    n_eps = None
    for N, m in enumerate(prefix, start=1):
        if all(m[s].all() for s in shrunk):
            n_eps = N
            break
    monotone = all((a <= b).all() for a, b in zip(prefix[:-1], prefix[1:]))
    haus = [hausdorff_distance(dom, np.flatnonzero(m), members) for m in prefix]
    passed = n_eps is not None and monotone
    return CheckReport("geom", passed, 0.0 if passed else float("inf"), 0.0,
                       {"N_eps": n_eps, "count": len(balls), "monotone": monotone,
                        "hausdorff": haus, "shrunk_balls": len(shrunk)})


def check_p4_continuity(kind, f, i, j, eta_probe, halvings=4):
    """Pair-value oscillation as the second point moves within ``eta``.

    For ``eta = eta_probe / 2**k``, ``k = 0..halvings``, reports the largest
    ``|Phi(f; i, j) - Phi(f; i, z)|`` over defined points ``z != i`` with
    ``d(j, z) < eta``.  Informational: passes when the sequence does not
    increase.
    """
    kind = FunctionalKind.parse(kind)
    dom = f.domain
    if not eta_probe > 0:
        raise ValueError("eta_probe must be positive")
    dj = dom.dist_rows([j])[0]
    base = float(pair_matrix(kind, f, [i], [j])[0, 0])
    seq = []
    for k in range(halvings + 1):
        eta = eta_probe / 2 ** k
        zs = np.flatnonzero((dj < eta) & f.mask)
        zs = zs[zs != i]
        vals = _pairs_row(kind, f, i, zs) if zs.size else np.zeros(0)
        seq.append(float(np.max(np.abs(vals - base))) if vals.size else 0.0)
    increase = max((b - a for a, b in zip(seq[:-1], seq[1:])), default=0.0)
    return CheckReport("p4", increase <= 1e-12, max(increase, 0.0), 1e-12,
                       {"i": int(i), "j": int(j), "eta_probe": eta_probe,
                        "oscillation": seq})


CHECKS = {
    "chasles": check_chasles,
    "customs": check_customs,
    "hmono": check_h_monotone,
    "prop1": check_prop_alpha_zero,
    "geom": check_geometrical,
    "p4": check_p4_continuity,
}
