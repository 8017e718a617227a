"""Smooth self-covering maps of the torus T^d, d in {1, 2}.

Every map works on arrays of points with a trailing coordinate axis of
length ``dim``; a single point is an array of shape ``(dim,)``. Points are
kept in the half-open fundamental domain [0, 1)^d.

Families
--------
LinearMap      p -> A p (mod 1), A an integer matrix with |det A| >= 2
CircleExpand   x -> k x + eps sin(2 pi x) (mod 1)
SkewCosine     (x, y) -> (m x, y + a cos(2 pi x)) (mod 1)
SkewGeneral    (x, y) -> (h(x), y + tau(x)) (mod 1), h a CircleExpand and
               tau a real trigonometric polynomial
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateJacobian, RootFindFailure, TreeOverflow

TWO_PI = 2.0 * np.pi
SNAP = 1e-15
JACOBIAN_FLOOR = 1e-12
ROOT_TOL = 1e-13
DEFAULT_NODE_BUDGET = 10**7


def reduce_mod1(x):
    """Reduce coordinates to [0, 1); values within SNAP below 1 become 0."""
    r = np.mod(np.asarray(x, dtype=float), 1.0)
    return np.where(r >= 1.0 - SNAP, 0.0, r)


def torus_distance(p, q):
    """Max-norm distance on the torus between broadcastable point arrays."""
    d = np.abs(reduce_mod1(np.asarray(p) - np.asarray(q)))
    return np.max(np.minimum(d, 1.0 - d), axis=-1)


def det2(D):
    """Determinant of stacked 1x1 or 2x2 matrices by the explicit formula.

    LU-based determinants introduce rounding for triangular matrices such as
    the skew differentials; the explicit product keeps ``m * 1 - 0 * c`` exact.
    """
    D = np.asarray(D)
    if D.shape[-1] == 1:
        return D[..., 0, 0]
    return D[..., 0, 0] * D[..., 1, 1] - D[..., 0, 1] * D[..., 1, 0]


class TorusMap:
    """Interface shared by all covering maps.

    Subclasses implement ``lift``, ``differential`` and ``preimages_many``
    for arrays of points and set ``dim`` and ``degree``.
    """

    dim: int
    degree: int

    # Axes along which b^mu(q, xi) does not depend on q. Either the map
    # commutes with translations along the axis, or its differential is
    # constant. Both properties survive iteration.
    b_invariant_axes: tuple = ()

    def as_points(self, p) -> np.ndarray:
        a = np.asarray(p, dtype=float)
        if self.dim == 1 and (a.ndim == 0 or a.shape[-1] != 1):
            a = a[..., None]
        if a.shape[-1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates, got shape {a.shape}")
        return a

    def lift(self, p) -> np.ndarray:
        raise NotImplementedError

    def eval(self, p) -> np.ndarray:
        return reduce_mod1(self.lift(self.as_points(p)))

    def differential(self, p) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, p) -> np.ndarray:
        J = det2(self.differential(p))
        if np.any(np.abs(J) < JACOBIAN_FLOOR):
            raise DegenerateJacobian(f"|Jf| < {JACOBIAN_FLOOR} for {self!r}")
        return J

    def preimages_many(self, q) -> np.ndarray:
        """Preimages of each row of ``q`` (shape (M, d)) as (M, degree, d)."""
        raise NotImplementedError

    def preimages(self, q) -> np.ndarray:
        q = self.as_points(q).reshape(1, self.dim)
        return self.preimages_many(q)[0]

    def stretch(self) -> np.ndarray:
        """Per-axis bound on sum_j |d f_j / d x_i| over the torus.

        Used to size quadrature grids; the default samples the differential.
        """
        n = 4096 if self.dim == 1 else 128
        axes = [np.arange(n) / n] * self.dim
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        D = np.abs(self.differential(grid))
        return 1.05 * D.max(axis=0).sum(axis=0) + 1e-9


def _int_matrix(A) -> tuple:
    arr = np.asarray(A)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] not in (1, 2):
        raise ValueError("A must be a 1x1 or 2x2 matrix")
    if not np.all(arr == np.round(arr)):
        raise ValueError("A must have integer entries")
    return tuple(tuple(int(v) for v in row) for row in arr)


@dataclass(frozen=True)
class LinearMap(TorusMap):
    A: tuple

    def __post_init__(self):
        A = _int_matrix(self.A)
        object.__setattr__(self, "A", A)
        M = np.array(A, dtype=float)
        det = int(round(np.linalg.det(M)))
        if abs(det) < 2:
            raise ValueError(f"|det A| must be >= 2, got {det}")
        object.__setattr__(self, "_M", M)
        object.__setattr__(self, "_Minv", np.linalg.inv(M))
        object.__setattr__(self, "_cosets", self._coset_representatives(abs(det)))

    @property
    def dim(self):
        return len(self.A)

    @property
    def degree(self):
        return len(self._cosets)

    @property
    def b_invariant_axes(self):
        return tuple(range(self.dim))

    def _coset_representatives(self, D):
        # A^{-1} v mod 1 lies in (1/D) Z^d and is D-periodic in each v_i.
        Minv = np.linalg.inv(np.array(self.A, dtype=float))
        seen = {}
        for v in itertools.product(range(D), repeat=len(self.A)):
            key = tuple(np.round(np.mod(Minv @ np.array(v, float), 1.0) * D).astype(int) % D)
            seen.setdefault(key, v)
        return np.array(sorted(seen.values()), dtype=float)

    def lift(self, p):
        return p @ self._M.T

    def differential(self, p):
        p = self.as_points(p)
        return np.broadcast_to(self._M, p.shape[:-1] + self._M.shape).copy()

    def preimages_many(self, q):
        q = np.asarray(q, dtype=float)
        pts = (q[:, None, :] + self._cosets[None, :, :]) @ self._Minv.T
        return reduce_mod1(pts)

    def stretch(self):
        return np.abs(self._M).sum(axis=0)


@dataclass(frozen=True)
class CircleExpand(TorusMap):
    """x -> k x + eps sin(2 pi x) mod 1, strictly increasing lift."""

    k: int
    eps: float = 0.0

    dim = 1

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ValueError("k must be an integer >= 2")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "eps", float(self.eps))
        if self.k - TWO_PI * abs(self.eps) <= 0:
            raise ValueError("need k - 2 pi |eps| > 0 for a monotone lift")

    @property
    def degree(self):
        return self.k

    @property
    def b_invariant_axes(self):
        return (0,) if self.eps == 0.0 else ()

    def lift_scalar(self, x):
        return self.k * x + self.eps * np.sin(TWO_PI * x)

    def deriv_scalar(self, x):
        return self.k + TWO_PI * self.eps * np.cos(TWO_PI * x)

    def lift(self, p):
        return self.lift_scalar(p)

    def differential(self, p):
        p = self.as_points(p)
        return self.deriv_scalar(p)[..., None]

    def invert_scalar(self, q):
        """All lift preimages of the scalars ``q``; returns shape q.shape + (k,)."""
        q = np.asarray(q, dtype=float)
        t = q[..., None] + np.arange(self.k)
        if self.eps == 0.0:
            return reduce_mod1(t / self.k)
        return reduce_mod1(_monotone_solve(self.lift_scalar, self.deriv_scalar, t, self.k, abs(self.eps)))

    def preimages_many(self, q):
        q = np.asarray(q, dtype=float)
        return self.invert_scalar(q[:, 0])[..., None]

    def stretch(self):
        return np.array([self.k + TWO_PI * abs(self.eps)])


def _monotone_solve(H, dH, t, k, amp, max_iter=200):
    """Solve H(x) = t on [0, 1] for an increasing lift with |H - kx| <= amp.

    Bisection on the bracket [(t - amp)/k, (t + amp)/k] seeds a safeguarded
    Newton iteration.
    """
    lo = np.clip((t - amp) / k, 0.0, 1.0)
    hi = np.clip((t + amp) / k, 0.0, 1.0)
    for _ in range(6):
        mid = 0.5 * (lo + hi)
        below = H(mid) < t
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        r = H(x) - t
        lo = np.where(r < 0, x, lo)
        hi = np.where(r > 0, x, hi)
        step = r / dH(x)
        x_new = x - step
        outside = (x_new <= lo) | (x_new >= hi)
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        done = np.abs(x_new - x) < 0.1 * ROOT_TOL
        x = x_new
        if np.all(done):
            break
    # certify the root to ROOT_TOL by a strict sign change around it; a lift
    # that is flat to rounding there cannot be resolved
    below, above = H(x - ROOT_TOL), H(x + ROOT_TOL)
    ok = (below <= t) & (t <= above) & (below < above)
    if not np.all(ok):
        bad = int(np.argmin(ok)) if np.ndim(ok) else 0
        raise RootFindFailure(
            f"branch root for target {float(np.ravel(t)[bad])!r} not resolved to {ROOT_TOL:g}")
    return x


class _SkewProduct(TorusMap):
    """(x, y) -> (h(x), y + tau(x)); the y-fiber map is a bijection."""

    dim = 2
    b_invariant_axes = (1,)

    def _h(self, x):
        raise NotImplementedError

    def _dh(self, x):
        raise NotImplementedError

    def _h_inverse(self, qx):
        raise NotImplementedError

    def tau(self, x):
        raise NotImplementedError

    def dtau(self, x):
        raise NotImplementedError

    def lift(self, p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([self._h(x), y + self.tau(x)], axis=-1)

    def differential(self, p):
        p = self.as_points(p)
        x = p[..., 0]
        D = np.zeros(p.shape[:-1] + (2, 2))
        D[..., 0, 0] = self._dh(x)
        D[..., 1, 0] = self.dtau(x)
        D[..., 1, 1] = 1.0
        return D

    def preimages_many(self, q):
        q = np.asarray(q, dtype=float)
        xs = self._h_inverse(q[:, 0])
        ys = reduce_mod1(q[:, 1:2] - self.tau(xs))
        return np.stack([xs, ys], axis=-1)


@dataclass(frozen=True)
class SkewCosine(_SkewProduct):
    """(x, y) -> (m x, y + a cos 2 pi x) mod 1; a = m is the classic example."""

    m: int
    a: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError("m must be an integer >= 2")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "a", float(self.a))

    @property
    def degree(self):
        return self.m

    def _h(self, x):
        return self.m * x

    def _dh(self, x):
        return np.full_like(x, float(self.m))

    def _h_inverse(self, qx):
        return reduce_mod1((qx[..., None] + np.arange(self.m)) / self.m)

    def tau(self, x):
        return self.a * np.cos(TWO_PI * x)

    def dtau(self, x):
        return -TWO_PI * self.a * np.sin(TWO_PI * x)

    def stretch(self):
        return np.array([self.m + TWO_PI * abs(self.a), 1.0])


@dataclass(frozen=True)
class SkewGeneral(_SkewProduct):
    """Skew product over a circle expansion with a trigonometric fiber shift.

    ``tau(x) = sum_j tau_cos[j] cos(2 pi j x) + tau_sin[j] sin(2 pi j x)``.
    """

    h: CircleExpand
    tau_cos: tuple = (0.0,)
    tau_sin: tuple = ()

    def __post_init__(self):
        if not isinstance(self.h, CircleExpand):
            raise TypeError("h must be a CircleExpand")
        object.__setattr__(self, "tau_cos", tuple(float(c) for c in self.tau_cos))
        object.__setattr__(self, "tau_sin", tuple(float(s) for s in self.tau_sin))

    @property
    def degree(self):
        return self.h.k

    def _h(self, x):
        return self.h.lift_scalar(x)

    def _dh(self, x):
        return self.h.deriv_scalar(x)

    def _h_inverse(self, qx):
        return self.h.invert_scalar(qx)

    def tau(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for j, c in enumerate(self.tau_cos):
            out = out + c * np.cos(TWO_PI * j * x)
        for j, s in enumerate(self.tau_sin):
            out = out + s * np.sin(TWO_PI * j * x)
        return out

    def dtau(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for j, c in enumerate(self.tau_cos):
            out = out - TWO_PI * j * c * np.sin(TWO_PI * j * x)
        for j, s in enumerate(self.tau_sin):
            out = out + TWO_PI * j * s * np.cos(TWO_PI * j * x)
        return out

    def stretch(self):
        slope = sum(TWO_PI * j * (abs(c) + abs(s)) for j, (c, s) in enumerate(
            itertools.zip_longest(self.tau_cos, self.tau_sin, fillvalue=0.0)))
        return np.array([self.h.stretch()[0] + slope, 1.0])


@dataclass(frozen=True)
class ComposedMap(TorusMap):
    """p -> outer(inner(p))."""

    outer: TorusMap
    inner: TorusMap

    def __post_init__(self):
        if self.outer.dim != self.inner.dim:
            raise ValueError("maps live on tori of different dimension")

    @property
    def dim(self):
        return self.outer.dim

    @property
    def degree(self):
        return self.outer.degree * self.inner.degree

    def lift(self, p):
        return self.outer.lift(reduce_mod1(self.inner.lift(p)))

    def differential(self, p):
        p = self.as_points(p)
        return self.outer.differential(self.inner.eval(p)) @ self.inner.differential(p)

    def preimages_many(self, q):
        first = self.outer.preimages_many(q)
        M = first.shape[0]
        second = self.inner.preimages_many(first.reshape(-1, self.dim))
        return second.reshape(M, self.degree, self.dim)


@dataclass(frozen=True)
class IteratedMap(TorusMap):
    """The n-fold iterate of ``base``; preimages form the depth-n tree."""

    base: TorusMap
    n: int
    node_budget: int = field(default=DEFAULT_NODE_BUDGET, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.base.degree ** self.n > self.node_budget:
            raise TreeOverflow(
                f"degree^n = {self.base.degree}^{self.n} exceeds node budget {self.node_budget}")

    @property
    def dim(self):
        return self.base.dim

    @property
    def degree(self):
        return self.base.degree ** self.n

    @property
    def b_invariant_axes(self):
        return self.base.b_invariant_axes

    def lift(self, p):
        out = p
        for i in range(self.n):
            out = self.base.lift(out if i == 0 else reduce_mod1(out))
        return out

    def orbit(self, p):
        """[p, f(p), ..., f^{n-1}(p)] as a list of arrays."""
        pts = [self.as_points(p)]
        for _ in range(self.n - 1):
            pts.append(self.base.eval(pts[-1]))
        return pts

    def differential(self, p):
        D = None
        for pt in self.orbit(p):
            Di = self.base.differential(pt)
            D = Di if D is None else Di @ D
        return D

    def preimages_many(self, q):
        q = np.asarray(q, dtype=float)
        M = q.shape[0]
        level = q
        for _ in range(self.n):
            level = self.base.preimages_many(level.reshape(-1, self.dim))
        return level.reshape(M, self.degree, self.dim)

    def stretch(self):
        return self.base.stretch() ** self.n


def iterate(f: TorusMap, n: int, node_budget: int = DEFAULT_NODE_BUDGET) -> TorusMap:
    """f^n. ``iterate(f, 1)`` is an IteratedMap that behaves exactly like f."""
    return IteratedMap(f, int(n), node_budget)


def compose(outer: TorusMap, inner: TorusMap) -> ComposedMap:
    return ComposedMap(outer, inner)


def make_map(spec: dict) -> TorusMap:
    """Build a map from a plain description such as ``{"family": "skew_cosine", "m": 8, "a": 8}``."""
    spec = dict(spec)
    family = spec.pop("family", None)
    builders = {
        "linear": lambda A: LinearMap(A),
        "circle_expand": lambda k, eps=0.0: CircleExpand(k, eps),
        "skew_cosine": lambda m, a=None: SkewCosine(m, m if a is None else a),
        "skew_general": lambda k, eps=0.0, tau_cos=(0.0,), tau_sin=(): SkewGeneral(
            CircleExpand(k, eps), tuple(tau_cos), tuple(tau_sin)),
    }
    if family not in builders:
        raise ValueError(f"unknown map family {family!r}; expected one of {sorted(builders)}")
    try:
        return builders[family](**spec)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {family}: {exc}") from None


def describe_map(f: TorusMap) -> dict:
    if isinstance(f, LinearMap):
        return {"family": "linear", "A": [list(r) for r in f.A]}
    if isinstance(f, CircleExpand):
        return {"family": "circle_expand", "k": f.k, "eps": f.eps}
    if isinstance(f, SkewCosine):
        return {"family": "skew_cosine", "m": f.m, "a": f.a}
    if isinstance(f, SkewGeneral):
        return {"family": "skew_general", "k": f.h.k, "eps": f.h.eps,
                "tau_cos": list(f.tau_cos), "tau_sin": list(f.tau_sin)}
    if isinstance(f, IteratedMap):
        return {"family": "iterate", "base": describe_map(f.base), "n": f.n}
    if isinstance(f, ComposedMap):
        return {"family": "compose", "outer": describe_map(f.outer), "inner": describe_map(f.inner)}
    raise TypeError(type(f))

