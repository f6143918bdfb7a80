"""Minimal extensions and the local correction operator.

Scalar data are extended with the classical upper and lower envelopes

    upper(x) = min_y f(y) + L d(x, y),    lower(x) = max_y f(y) - L d(x, y),

with ``L`` the Lipschitz constant of the data; their average is the
default minimal extension.  Two-point jet data are extended with the
explicit piecewise-quadratic construction of :func:`biponctual_solve`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (ConstraintOverlap, DegenerateField, EmptyConstraints,
                     UnsupportedExtension)
from .functionals import (FunctionalKind, Jet, JetField, ScalarField,
                          gamma1_raw, phi_total)
from .geometry import DEFAULT_CB, discrete_boundary, interior

_CHUNK = 1024
SIGN_TOL = 1e-9
ENDPOINT_SNAP = 1e-10


# -- scalar envelopes ----------------------------------------------------------

def _envelopes(dom, src, vals, targets, L):
    targets = np.asarray(targets, dtype=int)
    upper = np.empty(targets.size)
    lower = np.empty(targets.size)
    for s in range(0, targets.size, _CHUNK):
        D = dom.dist_block(targets[s:s + _CHUNK], src)
        upper[s:s + _CHUNK] = (vals[None, :] + L * D).min(axis=1)
        lower[s:s + _CHUNK] = (vals[None, :] - L * D).max(axis=1)
    # where the envelopes touch, round-off can cross them by an ulp
    np.minimum(lower, upper, out=lower)
    return upper, lower


def scalar_extension(dom, src, vals, targets, method="average", L=None):
    """Extend values ``vals`` given on indices ``src`` to ``targets``.

    ``L`` defaults to the Lipschitz constant of the source data.  Targets
    that belong to ``src`` keep their source value exactly.
    """
    src = np.asarray(src, dtype=int)
    vals = np.asarray(vals, dtype=float)
    if src.size == 0:
        raise EmptyConstraints("cannot extend from an empty set")
    if L is None:
        L = phi_total(FunctionalKind.LIP, ScalarField(dom, dict(zip(src.tolist(), vals))))
    upper, lower = _envelopes(dom, src, vals, targets, L)
    if method == "upper":
        out = upper
    elif method == "lower":
        out = lower
    elif method == "average":
        out = 0.5 * (upper + lower)
    else:
        raise ValueError(f"unknown extension method {method!r}")
    lookup = dict(zip(src.tolist(), vals.tolist()))
    for k, t in enumerate(np.asarray(targets, dtype=int)):
        if int(t) in lookup:
            out[k] = lookup[int(t)]
    return out


def _extend_field(f, targets, method):
    E = f.indices
    if E.size == 0:
        raise EmptyConstraints("field has no defined values")
    targets = np.asarray(targets, dtype=int)
    vals = scalar_extension(f.domain, E, f.values_at(E), targets, method)
    return f.with_values(targets, vals)


def mcshane_upper(f, targets):
    """Largest minimal extension of ``f`` onto ``targets``."""
    return _extend_field(f, targets, "upper")


def whitney_lower(f, targets):
    """Smallest minimal extension of ``f`` onto ``targets``."""
    return _extend_field(f, targets, "lower")


def minimal_extension_scalar(f, targets):
    return _extend_field(f, targets, "average")


# -- biponctual jet extension --------------------------------------------------

@dataclass(frozen=True)
class BiponctualSolution:
    """Minimal C^{1,1} extension data for jets at two points.

    ``c`` is the point where every minimal extension takes the same jet
    ``tilde_c``; ``s`` is the sign in the defining identities.
    """

    x: np.ndarray
    jet_x: Jet
    y: np.ndarray
    jet_y: Jet
    M: float
    s: int
    c: np.ndarray
    tilde_c: Jet
    case_tag: str
    A: float
    B: float

    def identity_residuals(self):
        """Residuals of the three identities characterising ``c`` and ``tilde_c``."""
        x, y, c, s, M = self.x, self.y, self.c, self.s, self.M
        px_c = float(self.jet_x.at(x, c))
        py_c = float(self.jet_y.at(y, c))
        nx2 = float(np.sum((x - c) ** 2))
        ny2 = float(np.sum((y - c) ** 2))
        r_m = M - 2 * s * (px_c - py_c) / (nx2 + ny2)
        r_c = np.linalg.norm(c - (0.5 * (x + y) + s * (self.jet_x.grad - self.jet_y.grad) / (2 * M)))
        r_v = (px_c - s * M / 2 * nx2) - (py_c + s * M / 2 * ny2)
        r_g = np.linalg.norm((self.jet_x.grad + s * M * (x - c))
                             - (self.jet_y.grad - s * M * (y - c)))
        return {"M": abs(r_m), "c": float(r_c), "value": abs(r_v), "grad": float(r_g)}

    def value_and_grad(self, Z):
        """Extension value and gradient at each row of ``Z``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        c, s, M = self.c, self.s, self.M
        w = Z - c
        ex, ey = self.x - c, self.y - c
        nx2, ny2 = float(ex @ ex), float(ey @ ey)
        base = self.tilde_c.value + w @ self.tilde_c.grad
        gbase = np.broadcast_to(self.tilde_c.grad, Z.shape)
        p = w @ ex
        q = w @ ey
        if nx2 > 0:
            tx = -s * M / 2 * p ** 2 / nx2
            gx = (-s * M * p / nx2)[:, None] * ex[None]
        else:
            tx, gx = np.zeros(len(Z)), np.zeros_like(Z)
        if ny2 > 0:
            ty = s * M / 2 * q ** 2 / ny2
            gy = (s * M * q / ny2)[:, None] * ey[None]
        else:
            ty, gy = np.zeros(len(Z)), np.zeros_like(Z)
        if self.case_tag == "A_zero":
            return base + tx + ty, gbase + gx + gy
        # regions in the listed order; ties go to the first match
        conds = [(p >= 0) & (q <= 0), (p <= 0) & (q >= 0), (p <= 0) & (q <= 0)]
        val = np.select(conds, [base + tx, base + ty, base], base + tx + ty)
        grad = np.select([k[:, None] for k in conds],
                         [gbase + gx, gbase + gy, gbase], gbase + gx + gy)
        return val, grad

    def __call__(self, Z):
        return self.value_and_grad(Z)


def biponctual_solve(x, jet_x, y, jet_y):
    """Solve the two-point jet extension problem.

    Raises
    ------
    DegenerateField
        If both jets are the same polynomial (the functional vanishes).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    A, B, M = gamma1_raw(x, jet_x, y, jet_y)
    if not M > 0:
        raise DegenerateField("jets agree as polynomials; c is undefined")
    g = jet_x.grad - jet_y.grad
    m = 0.5 * (x + y)
    fits = {}
    for s in (1, -1):
        c = m + s * g / (2 * M)
        px_c = float(jet_x.at(x, c))
        py_c = float(jet_y.at(y, c))
        den = float(np.sum((x - c) ** 2) + np.sum((y - c) ** 2))
        fits[s] = (abs(M - 2 * s * (px_c - py_c) / den) / max(1.0, M), c, px_c)
    ok = [s for s in (1, -1) if fits[s][0] <= SIGN_TOL]
    s = ok[0] if ok else min((1, -1), key=lambda k: fits[k][0])
    _, c, px_c = fits[s]
    # c on an endpoint makes one quadratic term 0/0; snap so it drops out
    span = float(np.linalg.norm(y - x))
    for end in (x, y):
        if np.linalg.norm(c - end) <= ENDPOINT_SNAP * span:
            c = end.copy()
            px_c = float(jet_x.at(x, c))
    tilde = Jet(px_c - s * M / 2 * float(np.sum((x - c) ** 2)),
                jet_x.grad + s * M * (x - c))
    tag = "A_zero" if abs(A) <= 1e-12 * M else "A_nonzero"
    return BiponctualSolution(x, jet_x, y, jet_y, float(M), s, c, tilde, tag, A, B)


def biponctual_eval(sol, z):
    val, _ = sol.value_and_grad(z)
    return float(val[0]) if np.ndim(z) == 1 else val


def jets_at_points(F, Z):
    """Values and gradients of an evaluator ``F(Z) -> (values, grads)``."""
    vals, grads = F(np.atleast_2d(np.asarray(Z, dtype=float)))
    return np.asarray(vals, dtype=float), np.asarray(grads, dtype=float)


def jets_of_function(F, dom, sample):
    """Jet field of first-order Taylor data of ``F`` on domain indices ``sample``."""
    sample = np.asarray(sample, dtype=int)
    vals, grads = jets_at_points(F, dom.points[sample])
    return JetField(dom, {int(i): Jet(v, g) for i, v, g in zip(sample, vals, grads)})


class _Polynomial:
    """Evaluator for a single affine jet, used when extension is trivial."""

    def __init__(self, base, jet):
        self.base = np.asarray(base, dtype=float)
        self.jet = jet

    def __call__(self, Z):
        Z = np.atleast_2d(Z)
        return self.jet.at(self.base, Z), np.broadcast_to(self.jet.grad, Z.shape).copy()


def jet_extender(dom, src, jets):
    """Evaluator for the minimal extension of jets on at most two points."""
    src = [int(i) for i in src]
    if len(src) == 1:
        return _Polynomial(dom.points[src[0]], jets[0])
    if len(src) == 2:
        try:
            return biponctual_solve(dom.points[src[0]], jets[0], dom.points[src[1]], jets[1])
        except DegenerateField:
            return _Polynomial(dom.points[src[0]], jets[0])
    raise UnsupportedExtension(
        f"Gamma^1 minimal extension is only implemented for 1 or 2 data points, got {len(src)}")


def minimal_extension_jets(f, targets):
    E = f.indices
    if E.size == 0:
        raise EmptyConstraints("field has no defined jets")
    targets = np.setdiff1d(np.asarray(targets, dtype=int), E)
    if targets.size == 0:
        return f.with_jets([], [], np.empty((0, f.domain.dim)))
    F = jet_extender(f.domain, E, [f.jet(i) for i in E])
    vals, grads = jets_at_points(F, f.domain.points[targets])
    return f.with_jets(targets, vals, grads)


def minimal_extension(kind, f, targets):
    kind = FunctionalKind.parse(kind)
    if kind is FunctionalKind.LIP:
        return minimal_extension_scalar(f, targets)
    return minimal_extension_jets(f, targets)


# -- correction operator -------------------------------------------------------

def correction_H(kind, U, omega, c_b=DEFAULT_CB):
    """Replace ``U`` inside ``omega`` by the minimal extension of its boundary trace.

    The returned field equals ``U`` off the interior of ``omega``.  For the
    scalar functional the boundary Lipschitz constant (not the global one)
    drives the envelopes, so the interior functional value never exceeds the
    boundary value.  For jets only boundaries of one or two points are
    supported.
    """
    kind = FunctionalKind.parse(kind)
    dom = U.domain
    inner = interior(dom, omega)
    overlap = inner[dom.constraint_mask[inner]]
    if overlap.size:
        raise ConstraintOverlap(
            f"region interior contains constraint point(s) {overlap[:5].tolist()}")
    bnd = discrete_boundary(dom, omega, c_b)
    if kind is FunctionalKind.LIP:
        vals = scalar_extension(dom, bnd, U.values_at(bnd), inner)
        return U.with_values(inner, vals)
    F = jet_extender(dom, bnd, [U.jet(i) for i in bnd])
    vals, grads = jets_at_points(F, dom.points[inner])
    return U.with_jets(inner, vals, grads)
