"""Lipschitz-type functionals for scalar fields and first-order jet fields.

Two concrete functionals are provided:

* ``LIP``: the pairwise slope ``|f(x) - f(y)| / d(x, y)``.
* ``GAMMA1``: the jet-field functional, evaluated through the closed form
  ``sqrt(A**2 + B**2) + |A|`` with

  ``A = (2 (f_x - f_y) + (Df_x + Df_y) . (y - x)) / |x - y|**2``
  ``B = |Df_x - Df_y| / |x - y|``.

  Its defining supremum over evaluation points is kept as
  :func:`gamma1_sup_oracle` for testing only.

Set values are exact maxima over all distinct pairs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPoints, EmptyBoundary, TooFewPoints
from .geometry import DEFAULT_CB, region_boundary

# returned by psi_localized when no pair satisfies the admissibility rules
NO_ADMISSIBLE_PAIR = float("-inf")

_CHUNK = 256


class FunctionalKind(enum.Enum):
    LIP = "lip"
    GAMMA1 = "gamma1"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown functional {value!r}; use 'lip' or 'gamma1'") from None


@dataclass(frozen=True)
class Jet:
    """Affine polynomial ``a -> value + grad . (a - base)`` attached to a point."""

    value: float
    grad: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.grad, dtype=float)).copy()
        g.setflags(write=False)
        object.__setattr__(self, "grad", g)
        object.__setattr__(self, "value", float(self.value))

    def at(self, base, a):
        """Evaluate the polynomial based at ``base`` at the point(s) ``a``."""
        a = np.asarray(a, dtype=float)
        return self.value + (a - np.asarray(base, dtype=float)) @ self.grad

    def rebased(self, base, new_base):
        """Same polynomial written around ``new_base``."""
        return Jet(self.at(base, new_base), self.grad)


class _Field:
    """Shared storage: per-point data on a subset of the domain."""

    def __init__(self, domain, mask):
        self.domain = domain
        self._mask = mask

    @property
    def indices(self):
        return np.flatnonzero(self._mask)

    @property
    def mask(self):
        return self._mask.copy()

    def is_defined(self, idx):
        return bool(np.all(self._mask[np.asarray(idx, dtype=int)]))

    @property
    def is_total(self):
        return bool(self._mask.all())

    def _check_defined(self, idx):
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        self.domain._check_index(idx)
        missing = idx[~self._mask[idx]]
        if missing.size:
            raise KeyError(f"field undefined at point(s) {missing[:5].tolist()}")
        return idx


class ScalarField(_Field):
    """Real values on a subset of a :class:`DiscreteDomain`."""

    kind = FunctionalKind.LIP

    def __init__(self, domain, values):
        vals = np.full(domain.n, np.nan)
        mask = np.zeros(domain.n, dtype=bool)
        if isinstance(values, dict):
            for k, v in values.items():
                k = int(k)
                domain._check_index([k])
                vals[k] = float(v)
                mask[k] = True
        else:
            arr = np.asarray(values, dtype=float)
            if arr.shape != (domain.n,):
                raise ValueError("array values must have one entry per domain point")
            vals[:] = arr
            mask[:] = ~np.isnan(arr)
        if not np.all(np.isfinite(vals[mask])):
            raise ValueError("field values must be finite")
        super().__init__(domain, mask)
        self._vals = vals

    def values_at(self, idx):
        return self._vals[self._check_defined(idx)]

    @property
    def values(self):
        """Full-length array, NaN where undefined."""
        return self._vals.copy()

    def with_values(self, idx, new):
        out = ScalarField(self.domain, self._vals)
        idx = np.asarray(idx, dtype=int)
        out._vals[idx] = np.asarray(new, dtype=float)
        out._mask[idx] = True
        return out

    def restrict(self, idx):
        idx = self._check_defined(idx)
        return ScalarField(self.domain, {int(i): self._vals[i] for i in idx})

    def as_dict(self):
        return {int(i): float(self._vals[i]) for i in self.indices}

    def equals(self, other):
        return (np.array_equal(self._mask, other._mask)
                and np.array_equal(self._vals[self._mask], other._vals[other._mask]))


class JetField(_Field):
    """First-order jets (value and gradient) on a subset of the domain.

    ``values`` is a dict ``{index: Jet}``, or a full-length value array
    (NaN marks undefined points) with ``grads`` of shape ``(n, d)``; the
    pair may also be passed as one ``(values, grads)`` tuple.
    """

    kind = FunctionalKind.GAMMA1

    def __init__(self, domain, values, grads=None):
        if grads is None and isinstance(values, tuple) and len(values) == 2:
            values, grads = values
        d = domain.dim
        vals = np.full(domain.n, np.nan)
        G = np.full((domain.n, d), np.nan)
        mask = np.zeros(domain.n, dtype=bool)
        if isinstance(values, dict):
            for k, jet in values.items():
                k = int(k)
                domain._check_index([k])
                if not isinstance(jet, Jet):
                    jet = Jet(*jet)
                if jet.grad.shape != (d,):
                    raise ValueError(
                        f"jet at point {k} has gradient dimension {jet.grad.size}, "
                        f"domain dimension is {d}")
                vals[k] = jet.value
                G[k] = jet.grad
                mask[k] = True
        else:
            vals[:] = np.asarray(values, dtype=float)
            G[:] = np.asarray(grads, dtype=float).reshape(domain.n, d)
            mask[:] = ~np.isnan(vals)
        if not (np.all(np.isfinite(vals[mask])) and np.all(np.isfinite(G[mask]))):
            raise ValueError("jet values and gradients must be finite")
        super().__init__(domain, mask)
        self._vals = vals
        self._grads = G

    def jet(self, i):
        self._check_defined([i])
        return Jet(self._vals[i], self._grads[i])

    def values_at(self, idx):
        return self._vals[self._check_defined(idx)]

    def grads_at(self, idx):
        return self._grads[self._check_defined(idx)]

    @property
    def values(self):
        return self._vals.copy()

    @property
    def grads(self):
        return self._grads.copy()

    def with_jets(self, idx, vals, grads):
        out = JetField(self.domain, self._vals, self._grads)
        out._mask[:] = self._mask
        idx = np.asarray(idx, dtype=int)
        out._vals[idx] = np.asarray(vals, dtype=float)
        out._grads[idx] = np.asarray(grads, dtype=float).reshape(len(idx), -1)
        out._mask[idx] = True
        return out

    def restrict(self, idx):
        idx = self._check_defined(idx)
        return JetField(self.domain, {int(i): self.jet(i) for i in idx})

    def as_dict(self):
        return {int(i): self.jet(i) for i in self.indices}

    def equals(self, other):
        m = self._mask
        return (np.array_equal(m, other._mask)
                and np.array_equal(self._vals[m], other._vals[m])
                and np.array_equal(self._grads[m], other._grads[m]))


# -- raw-coordinate Gamma^1 math ---------------------------------------------

def gamma1_ab_arrays(Xi, fi, Gi, Xj, fj, Gj):
    """Pairwise A and B for jets at points ``Xi`` (rows) and ``Xj`` (columns).

    Pairs at distance zero get A = B = 0.
    """
    u = Xj[None, :, :] - Xi[:, None, :]
    dist2 = np.einsum("ijk,ijk->ij", u, u)
    # summing the gradients first makes A exactly antisymmetric under a swap
    gsum = Gi[:, None, :] + Gj[None, :, :]
    num = 2.0 * (fi[:, None] - fj[None, :]) + np.einsum("ijk,ijk->ij", gsum, u)
    dG = Gi[:, None, :] - Gj[None, :, :]
    gnorm = np.sqrt(np.einsum("ijk,ijk->ij", dG, dG))
    zero = dist2 == 0
    safe = np.where(zero, 1.0, dist2)
    A = np.where(zero, 0.0, num / safe)
    B = np.where(zero, 0.0, gnorm / np.sqrt(safe))
    return A, B


def gamma1_closed_form(A, B):
    return np.sqrt(A * A + B * B) + np.abs(A)


def gamma1_raw(x, jx, y, jy):
    """(A, B, Gamma^1) for two jets at raw coordinates ``x`` and ``y``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.array_equal(x, y):
        raise CoincidentPoints("Gamma^1 pair needs distinct points")
    A, B = gamma1_ab_arrays(x[None], np.array([jx.value]), jx.grad[None],
                            y[None], np.array([jy.value]), jy.grad[None])
    a, b = float(A[0, 0]), float(B[0, 0])
    return a, b, float(gamma1_closed_form(a, b))


def gamma1_matrix_raw(X, f, G):
    """Full pairwise Gamma^1 matrix for jets at raw coordinates."""
    A, B = gamma1_ab_arrays(X, f, G, X, f, G)
    return gamma1_closed_form(A, B)


# -- domain-indexed API -------------------------------------------------------

def pair_matrix(kind, f, I, J):
    """Matrix of pairwise functional values; same-index entries are 0."""
    kind = FunctionalKind.parse(kind)
    I = f._check_defined(I)
    J = f._check_defined(J)
    dom = f.domain
    if kind is FunctionalKind.LIP:
        if not isinstance(f, ScalarField):
            raise TypeError("Lip functional needs a ScalarField")
        D = dom.dist_block(I, J)
        diff = np.abs(f._vals[I][:, None] - f._vals[J][None, :])
        same = I[:, None] == J[None, :]
        if np.any((D == 0) & ~same):
            raise CoincidentPoints("two distinct indices at distance zero")
        return np.where(same, 0.0, diff / np.where(same, 1.0, D))
    if not isinstance(f, JetField):
        raise TypeError("Gamma^1 functional needs a JetField")
    if dom.metric_kind != "euclidean":
        raise ValueError("Gamma^1 is defined for the Euclidean metric only")
    P = dom.points
    A, B = gamma1_ab_arrays(P[I], f._vals[I], f._grads[I], P[J], f._vals[J], f._grads[J])
    return gamma1_closed_form(A, B)


def _pair_checked(f, i, j):
    if i == j:
        raise CoincidentPoints(f"pair ({i}, {j}) has coincident points")
    f._check_defined([i, j])


def lip_pair(f, i, j):
    _pair_checked(f, i, j)
    return float(pair_matrix(FunctionalKind.LIP, f, [i], [j])[0, 0])


def a_functional(f, i, j):
    _pair_checked(f, i, j)
    P = f.domain.points
    A, _ = gamma1_ab_arrays(P[[i]], f._vals[[i]], f._grads[[i]],
                            P[[j]], f._vals[[j]], f._grads[[j]])
    return float(A[0, 0])


def b_functional(f, i, j):
    _pair_checked(f, i, j)
    P = f.domain.points
    _, B = gamma1_ab_arrays(P[[i]], f._vals[[i]], f._grads[[i]],
                            P[[j]], f._vals[[j]], f._grads[[j]])
    return float(B[0, 0])


def gamma1_pair(f, i, j):
    _pair_checked(f, i, j)
    return float(pair_matrix(FunctionalKind.GAMMA1, f, [i], [j])[0, 0])


def phi_pair(kind, f, i, j):
    _pair_checked(f, i, j)
    return float(pair_matrix(kind, f, [i], [j])[0, 0])


def phi_set(kind, f, D):
    """Exact supremum of the pairwise functional over distinct pairs of ``D``."""
    D = np.unique(np.asarray(D, dtype=int))
    if D.size < 2:
        raise TooFewPoints("a set value needs at least two points")
    best = 0.0
    for s in range(0, D.size, _CHUNK):
        best = max(best, float(pair_matrix(kind, f, D[s:s + _CHUNK], D).max()))
    return best


def phi_total(kind, f):
    """Functional value over the whole domain of ``f`` (0 for a single point)."""
    idx = f.indices
    return phi_set(kind, f, idx) if idx.size >= 2 else 0.0


def gamma1_sup_raw(x, jx, y, jy, grid_radius, grid_step, mode="line"):
    """Grid maximisation of the defining quotient of Gamma^1.

    ``2 |P_x(a) - P_y(a)| / (|x - a|**2 + |y - a|**2)`` is maximised over a
    regular grid of evaluation points ``a`` centred at ``(x + y) / 2``.

    ``mode="full"`` uses the tensor grid in all ``d`` coordinates.
    ``mode="line"`` uses the 1-D grid along ``Df_x - Df_y`` through the
    midpoint: the numerator depends on ``a`` only through its projection on
    that direction, while the denominator equals ``2 |a - m|**2`` plus a
    constant, so the supremum over the whole space is attained on that
    line.  Both modes give lower bounds of the true supremum.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.array_equal(x, y):
        raise CoincidentPoints("Gamma^1 pair needs distinct points")
    m = 0.5 * (x + y)
    ticks = np.arange(-np.floor(grid_radius / grid_step),
                      np.floor(grid_radius / grid_step) + 1) * grid_step
    if mode == "line":
        g = jx.grad - jy.grad
        gn = np.linalg.norm(g)
        if gn == 0:
            pts = m[None]
        else:
            pts = m[None] + ticks[:, None] * (g / gn)[None]
    elif mode == "full":
        mesh = np.meshgrid(*([ticks] * x.size), indexing="ij")
        pts = m[None] + np.stack([t.ravel() for t in mesh], axis=1)
    else:
        raise ValueError(f"unknown oracle mode {mode!r}")
    num = np.abs(jx.at(x, pts) - jy.at(y, pts))
    den = np.sum((pts - x) ** 2, axis=1) + np.sum((pts - y) ** 2, axis=1)
    return float(2.0 * np.max(num / den))


def gamma1_sup_oracle(f, i, j, grid_radius, grid_step, mode="line"):
    _pair_checked(f, i, j)
    P = f.domain.points
    return gamma1_sup_raw(P[i], f.jet(i), P[j], f.jet(j), grid_radius, grid_step, mode)


def psi_localized(kind, f, V, alpha, c_b=DEFAULT_CB):
    """Localised functional over pairs rooted deep inside the region ``V``.

    A pair (x, y) is admissible when x lies in ``V`` at distance at least
    ``alpha`` from the discrete boundary of ``V`` and the open ball
    ``B(x; d(x, y))`` contains only points of ``V``.  The point y itself may
    sit outside ``V``.  Returns :data:`NO_ADMISSIBLE_PAIR` if nothing
    qualifies.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    dom = f.domain
    V = np.unique(np.asarray(V, dtype=int))
    if V.size == 0:
        raise ValueError("V must be nonempty")
    inside = np.zeros(dom.n, dtype=bool)
    inside[V] = True
    try:
        bnd = region_boundary(dom, V, c_b)
    except EmptyBoundary:
        bnd = np.empty(0, dtype=int)
    Drows = dom.dist_rows(V)
    depth = Drows[:, bnd].min(axis=1) if bnd.size else np.full(V.size, np.inf)
    outside = ~inside
    reach = Drows[:, outside].min(axis=1) if outside.any() else np.full(V.size, np.inf)
    roots = np.flatnonzero((depth >= alpha) & f._mask[V])
    best = NO_ADMISSIBLE_PAIR
    targets = f.indices
    for r in roots:
        x = V[r]
        dx = Drows[r, targets]
        ys = targets[(dx > 0) & (dx <= reach[r])]
        if ys.size:
            best = max(best, float(pair_matrix(kind, f, [x], ys).max()))
    return best
