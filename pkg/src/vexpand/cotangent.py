"""Covector pull-back cocycle and the preimage-averaged weights b^mu, B^mu.

For a covering map f and a nonzero covector (q, xi) the weight is

    b^mu((q, xi); f) = sum_{f(p) = q} (|xi| / |eta_p|)^mu / |Jf(p)|,
    eta_p = Df(p)^T xi,

and B^mu(f) is its supremum over all nonzero covectors. b is invariant under
xi -> beta xi, so suprema are taken over base points times projective
directions theta in [0, pi).
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.ndimage import maximum_filter

from .dynamics import (
    IteratedMap,
    SkewCosine,
    TorusMap,
    compose,
    det2,
    iterate,
    reduce_mod1,
)
from .errors import CertFailed, GridBudgetExceeded, NonPositiveExponent

FEKETE_MARGIN = 1e-6
REFINE_TOL = 1e-4
POLISH_ROUNDS = 12
POLISH_POINTS = 4          # sub-grid half-width in points per free coordinate
SEED_ELEMENTS = 2 * 10**7
DEFAULT_BUDGET = 5 * 10**9
CHUNK_ELEMENTS = 2 * 10**6


@dataclass(frozen=True)
class Covector:
    base: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base, dtype=float))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if base.shape != xi.shape:
            raise ValueError("base and xi must have the same dimension")
        if not np.any(xi != 0):
            raise ValueError("covector must be nonzero")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "xi", xi)

    def normalized(self) -> "Covector":
        return Covector(self.base, self.xi / np.linalg.norm(self.xi))

    def as_dict(self):
        return {"base": self.base.tolist(), "xi": self.xi.tolist()}


@dataclass(frozen=True)
class GridSpec:
    """Product grid: ``spatial`` points i/spatial per axis, ``directions``
    angles j*pi/directions on the projective fiber (ignored when d = 1)."""

    spatial: int
    directions: int = 1

    def __post_init__(self):
        if self.spatial < 1 or self.directions < 1:
            raise ValueError("grid resolutions must be positive")

    def refined(self) -> "GridSpec":
        return GridSpec(2 * self.spatial, 2 * self.directions)

    def as_tuple(self):
        return (self.spatial, self.directions)


@dataclass
class WeightEstimate:
    mu: float
    n: int
    value: float
    argmax: Covector
    grid: tuple
    refinement_history: list = field(default_factory=list)
    collapsed_axes: tuple = ()
    # heuristic Lipschitz upper estimate, only in certified mode
    upper: Optional[float] = None
    # raw grid maximum before local polishing (None when not polished)
    grid_value: Optional[float] = None

    def as_dict(self):
        return {
            "mu": self.mu,
            "n": self.n,
            "value": self.value,
            "argmax": self.argmax.as_dict(),
            "grid": list(self.grid),
            "refinement_history": [[list(g), v] for g, v in self.refinement_history],
            "collapsed_axes": list(self.collapsed_axes),
            "upper_heuristic": self.upper,
            "grid_value": self.grid_value,
        }


@dataclass
class RateEstimate:
    mu: float
    per_n: list
    fekete_min: float
    classification: str
    estimates: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {
            "mu": self.mu,
            "exponent": 2 * self.mu,
            "per_n": [{"n": n, "B": B, "root": r} for n, B, r in self.per_n],
            "fekete_min": self.fekete_min,
            "classification": self.classification,
            "estimates": [e.as_dict() for e in self.estimates],
        }


def pullback_covector(f: TorusMap, p, xi) -> np.ndarray:
    """eta = Df(p)^T xi: the covector at p that f-dagger sends to (f(p), xi)."""
    D = f.differential(p)
    xi = np.asarray(xi, dtype=float)
    return np.einsum("...ji,...j->...i", D, xi)


def _neg_power(sq_norm, mu):
    """|v|^(-mu) from |v|^2, with exact fast paths for common exponents."""
    half = 0.5 * mu
    if half == 0.0:
        return np.ones_like(sq_norm)
    if half == 0.5:
        return 1.0 / np.sqrt(sq_norm)
    if half == 1.0:
        return 1.0 / sq_norm
    if half == 0.25:
        return 1.0 / np.sqrt(np.sqrt(sq_norm))
    return sq_norm ** (-half)


def b_mu(f: TorusMap, mu: float, cov: Covector, metric_scale: float = 1.0) -> float:
    """b^mu((q, xi); f) summed over the preimages of the base point.

    ``metric_scale`` replaces the flat metric by a constant multiple of it;
    the cotangent norms rescale by a common factor and the Jacobian is
    unchanged, so the value does not move.
    """
    base = f.as_points(cov.base)
    pre = f.preimages(base)
    eta = pullback_covector(f, pre, cov.xi)
    jac = np.abs(f.jacobian(pre))
    s = 1.0 / math.sqrt(metric_scale)
    xi_norm = s * np.linalg.norm(cov.xi)
    eta_norm = s * np.linalg.norm(eta, axis=-1)
    return float(np.sum((xi_norm / eta_norm) ** mu / jac))


def factorized_b(f: TorusMap, g: TorusMap, mu: float, cov: Covector) -> float:
    """b^mu((q, xi); f o g) evaluated level by level.

    Sums over (p, eta) in the f-dagger preimages of (q, xi) the factor
    (|xi|/|eta|)^mu / |Jf(p)| times b^mu((p, eta); g).
    """
    if f.dim != g.dim:
        raise ValueError("maps act on different tori")
    pre = f.preimages(cov.base)
    eta = pullback_covector(f, pre, cov.xi)
    jac = np.abs(f.jacobian(pre))
    xi_norm = np.linalg.norm(cov.xi)
    total = 0.0
    for p, e, J in zip(pre, eta, jac):
        outer = (xi_norm / np.linalg.norm(e)) ** mu / J
        total += outer * b_mu(g, mu, Covector(p, e))
    return float(total)


def direction_grid(dim: int, directions: int) -> tuple[np.ndarray, np.ndarray]:
    """(thetas, unit covectors) sampling the projective fiber."""
    if dim == 1:
        return np.zeros(1), np.ones((1, 1))
    theta = np.arange(directions) * (np.pi / directions)
    return theta, np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def base_grid(dim: int, spatial: int, collapsed=()) -> tuple[np.ndarray, tuple]:
    """Points i/spatial per axis; collapsed axes are pinned to 0."""
    axes = [np.zeros(1) if i in collapsed else np.arange(spatial) / spatial for i in range(dim)]
    shape = tuple(len(a) for a in axes)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    return pts, shape


def _levels(f: TorusMap):
    if isinstance(f, IteratedMap):
        return f.base, f.n
    return f, 1


def sweep(f: TorusMap, mu: float, bases: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """b^mu at every (base, unit direction) pair, shape (len(bases), len(dirs)).

    Iterates are walked one tree level at a time, carrying eta and the
    accumulated 1/|Jf^n| down the exact preimage tree.
    """
    step, levels = _levels(f)
    d = f.dim
    M, ndir = len(bases), len(dirs)
    pts = np.asarray(bases, dtype=float)
    eta = None
    invj = np.ones(M)
    for _ in range(levels):
        pre = step.preimages_many(pts)
        k = pre.shape[1]
        pts = pre.reshape(-1, d)
        D = step.differential(pts)
        invj = np.repeat(invj, k) / np.abs(det2(D))
        if eta is None:
            # first level: all leaves share the unit directions
            if d == 1:
                eta = D[:, 0, 0][:, None, None] * dirs[None, :, :]
            else:
                e0 = D[:, None, 0, 0] * dirs[None, :, 0] + D[:, None, 1, 0] * dirs[None, :, 1]
                e1 = D[:, None, 0, 1] * dirs[None, :, 0] + D[:, None, 1, 1] * dirs[None, :, 1]
                eta = np.stack([e0, e1], axis=-1)
        else:
            eta = np.repeat(eta, k, axis=0)
            if d == 1:
                eta = D[:, None, 0:1, 0] * eta
            else:
                e0 = D[:, None, 0, 0] * eta[..., 0] + D[:, None, 1, 0] * eta[..., 1]
                e1 = D[:, None, 0, 1] * eta[..., 0] + D[:, None, 1, 1] * eta[..., 1]
                eta = np.stack([e0, e1], axis=-1)
    sq = np.einsum("lki,lki->lk", eta, eta)
    contrib = invj[:, None] * _neg_power(sq, mu)
    return contrib.reshape(M, -1, ndir).sum(axis=1)


def sweep_grid(f, mu, bases, dirs, threads=None) -> np.ndarray:
    """Chunked (and optionally threaded) ``sweep``; output order is fixed."""
    per_base = f.degree * len(dirs)
    chunk = max(1, CHUNK_ELEMENTS // per_base)
    starts = range(0, len(bases), chunk)
    work = lambda s: sweep(f, mu, bases[s:s + chunk], dirs)
    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts, axis=0)


def _lipschitz_slack(values, shape, dim, spatial, ndir, collapsed):
    """Heuristic: largest finite-difference slope times the cell diameter."""
    grid = values.reshape(shape + (values.shape[-1],))
    steps = []
    for axis in range(dim):
        if axis in collapsed or shape[axis] < 2:
            continue
        steps.append((axis, 1.0 / spatial))
    if dim == 2 and ndir > 1:
        steps.append((dim, np.pi / ndir))
    if not steps:
        return 0.0
    slope = max(np.max(np.abs(np.roll(grid, -1, axis=a) - grid)) / h for a, h in steps)
    diameter = math.sqrt(sum(h * h for _, h in steps))
    return float(slope * diameter)


def _resonant_seeds(fn, mu, bases, count):
    """Best covectors among the directions that one preimage contracts most.

    A single term of b peaks where xi is the smallest left singular vector of
    Df(p); such peaks can be far narrower than a grid cell. Returns a list of
    (value, base index, theta), empty when the pairwise cost is too high.
    """
    deg = fn.degree
    if fn.dim != 2 or len(bases) * deg * deg > SEED_ELEMENTS:
        return []
    pre = fn.preimages_many(bases)                               # (M, deg, 2)
    D = fn.differential(pre.reshape(-1, 2)).reshape(len(bases), deg, 2, 2)
    U, _, _ = np.linalg.svd(D)
    seeds = U[..., :, 1]                                         # (M, deg, 2)
    theta = np.mod(np.arctan2(seeds[..., 1], seeds[..., 0]), np.pi)
    xi = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    eta = np.einsum("mpji,msj->mspi", D, xi)                     # seed s, leaf p
    invj = 1.0 / np.abs(det2(D))
    vals = np.sum(invj[:, None, :] * _neg_power(np.einsum("mspi,mspi->msp", eta, eta), mu), axis=2)
    flat = vals.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))[:count]
    return [(float(flat[k]), k // deg, float(theta.ravel()[k])) for k in order]


def _polish(fn, mu, values, bases, shape, theta, collapsed, spatial, count):
    """Zoom into the ``count`` best discrete local maxima of the grid, plus
    the ``count`` best resonant directions at grid base points.

    Each candidate is re-sampled on a shrinking sub-grid over its free base
    coordinates and the direction angle. Returns (value, base, xi) of the best
    covector visited, which is still a genuine sample of b.
    """
    ndir = values.shape[1]
    grid = values.reshape(shape + (ndir,))
    peaks = grid >= maximum_filter(grid, size=3, mode="wrap")
    flat = np.flatnonzero(peaks.ravel())
    order = flat[np.lexsort((flat, -values.ravel()[flat]))][:count]
    starts = [(float(values.ravel()[k]), int(k) // ndir, float(theta[int(k) % ndir])) for k in order]
    starts += _resonant_seeds(fn, mu, bases, count)
    free = [a for a in range(fn.dim) if a not in collapsed and shape[a] > 1]
    use_theta = fn.dim == 2 and ndir > 1
    offs = np.arange(-POLISH_POINTS, POLISH_POINTS + 1) / POLISH_POINTS
    best = (-np.inf, None, None)
    for val, i, th in starts:
        base = bases[i].astype(float).copy()
        hb, ht = 1.0 / spatial, np.pi / ndir
        for _ in range(POLISH_ROUNDS):
            if free:
                axes = [base[a] + hb * offs if a in free else np.array([base[a]]) for a in range(fn.dim)]
                pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, fn.dim)
                pts = reduce_mod1(pts)
            else:
                pts = base[None, :]
            ths = th + ht * offs if use_theta else np.array([th])
            dirs = np.stack([np.cos(ths), np.sin(ths)], axis=-1) if fn.dim == 2 else np.ones((1, 1))
            vals = sweep(fn, mu, pts, dirs)
            k = int(np.argmax(vals))
            a, b = divmod(k, vals.shape[1])
            if vals[a, b] > val:
                val, base, th = float(vals[a, b]), pts[a], float(ths[b])
            hb, ht = hb / POLISH_POINTS, ht / POLISH_POINTS
        if val > best[0]:
            xi = np.array([math.cos(th), math.sin(th)]) if fn.dim == 2 else np.ones(1)
            best = (val, base, xi)
    return best


def B_mu(f: TorusMap, mu: float, n: int = 1, grid: GridSpec = GridSpec(64, 64), *,
         refine: bool = False, max_refinements: int = 4, certified: bool = False,
         polish: int = 0, budget: int = DEFAULT_BUDGET,
         threads: Optional[int] = None) -> WeightEstimate:
    """Grid supremum of b^mu over covectors for f^n.

    The sampled supremum is a lower bound for B^mu(f^n). Refinement doubles
    both resolutions on nested grids, so the history never decreases. Axes
    along which b does not depend on the base point are evaluated once.
    With ``polish > 0`` that many grid local maxima are zoomed into; peaks
    narrower than a grid cell are then resolved and the value stays a lower
    bound.
    """
    fn = f if n == 1 else iterate(f, n)
    collapsed = tuple(fn.b_invariant_axes)
    history = []
    g = grid
    best = None
    for level in range(max_refinements + 1 if refine else 1):
        bases, shape = base_grid(fn.dim, g.spatial, collapsed)
        theta, dirs = direction_grid(fn.dim, g.directions)
        work = len(bases) * len(dirs) * fn.degree
        if work > budget:
            if best is not None:
                break
            raise GridBudgetExceeded(f"{work} leaf evaluations exceed budget {budget}")
        values = sweep_grid(fn, mu, bases, dirs, threads)
        idx = int(np.argmax(values))
        i, j = divmod(idx, values.shape[1])
        value = float(values[i, j])
        history.append((g.as_tuple(), value))
        prev = best
        best = (value, bases[i], dirs[j], g, values, shape)
        if prev is not None and abs(value - prev[0]) < REFINE_TOL:
            break
        g = g.refined()
    value, b_pt, xi, g, values, shape = best
    upper = grid_value = None
    if certified:
        upper = value + _lipschitz_slack(values, shape, fn.dim, g.spatial, values.shape[1], collapsed)
    if polish > 0:
        grid_value = value
        theta, _ = direction_grid(fn.dim, g.directions)
        bases, _ = base_grid(fn.dim, g.spatial, collapsed)
        p_val, p_base, p_xi = _polish(fn, mu, values, bases, shape, theta, collapsed, g.spatial, polish)
        if p_val > value:
            value, b_pt, xi = p_val, p_base, p_xi
    return WeightEstimate(mu=float(mu), n=int(n), value=value, argmax=Covector(b_pt, xi),
                          grid=g.as_tuple(), refinement_history=history,
                          collapsed_axes=collapsed, upper=upper, grid_value=grid_value)


def virtual_expansion_rate(f: TorusMap, mu: float, n_max: int, grid: GridSpec = GridSpec(64, 64),
                           *, margin: float = FEKETE_MARGIN, threads=None, **kw) -> RateEstimate:
    """Fekete rate min_n B^{2 mu}(f^n)^{1/n} over n = 1..n_max."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    per_n, estimates = [], []
    for n in range(1, n_max + 1):
        est = B_mu(f, 2 * mu, n, grid, threads=threads, **kw)
        estimates.append(est)
        per_n.append((n, est.value, est.value ** (1.0 / n)))
    fekete_min = min(r for _, _, r in per_n)
    cls = "virtually_expanding" if fekete_min < 1.0 - margin else "inconclusive"
    return RateEstimate(mu=float(mu), per_n=per_n, fekete_min=fekete_min,
                        classification=cls, estimates=estimates)


def submultiplicativity_check(f: TorusMap, mu: float, n: int, m: int, grid: GridSpec) -> dict:
    """Compare B(f^{n+m}) with B(f^n) * B(f^m) on grids.

    ``f^{n+m} = f^n o f^m``, so at the maximizing covector c of the long
    iterate b(c; f^{n+m}) <= b(c; f^n) * max b(c'; f^m) over the intermediate
    covectors c' of c. Those intermediates are added to the f^m candidates.
    """
    long = B_mu(f, mu, n + m, grid)
    short_n = B_mu(f, mu, n, grid)
    short_m = B_mu(f, mu, m, grid)
    outer = iterate(f, n)
    cov = long.argmax
    pre = outer.preimages(cov.base)
    eta = pullback_covector(outer, pre, cov.xi)
    inner = iterate(f, m)
    injected = max(b_mu(inner, mu, Covector(p, e)) for p, e in zip(pre, eta))
    rhs = short_n.value * max(short_m.value, injected)
    return {"lhs": long.value, "rhs": rhs, "B_n": short_n.value, "B_m": short_m.value,
            "injected_max": injected}


def japanese(s):
    """<s> = sqrt(1 + s^2)."""
    return np.sqrt(1.0 + np.square(s))


def default_radii():
    return [2.0**j * 2.0 * np.pi for j in range(17)]


def _generalized_values(f, mu_func, radius, bases, theta, dirs):
    """Sum over preimages of W(x, xi) / (|Jf(y)| W(y, eta)) on the grid.

    ``radius=None`` is the homogeneous limit: <|.|> is replaced by |.| at |xi| = 1.
    """
    d = f.dim
    M, ndir = len(bases), len(dirs)
    pre = f.preimages_many(bases)
    k = pre.shape[1]
    y = pre.reshape(-1, d)
    D = f.differential(y)
    J = np.abs(det2(D))
    r = 1.0 if radius is None else float(radius)
    xi = r * dirs
    eta = np.einsum("lji,tj->lti", D, xi)
    eta_norm = np.linalg.norm(eta, axis=-1)
    if d == 1:
        theta_eta = np.zeros_like(eta_norm)
    else:
        theta_eta = np.mod(np.arctan2(eta[..., 1], eta[..., 0]), np.pi)
    mu_x = np.broadcast_to(mu_func(bases[:, None, :], theta[None, :]), (M, ndir))
    mu_y = np.broadcast_to(mu_func(y[:, None, :], theta_eta), (M * k, ndir))
    if np.any(mu_x <= 0) or np.any(mu_y <= 0):
        warnings.warn("exponent function takes non-positive values; the density "
                      "argument for the invariant measures does not apply", NonPositiveExponent)
    scale = (lambda s: s) if radius is None else japanese
    w_x = scale(r) ** mu_x
    w_y = scale(eta_norm) ** mu_y
    terms = 1.0 / (J[:, None] * w_y)
    return w_x * terms.reshape(M, k, ndir).sum(axis=1)


def generalized_B(f: TorusMap, mu_func: Callable, radii=None, grid: GridSpec = GridSpec(64, 64),
                  *, homogeneous: bool = True, details: bool = False):
    """Sup of the direction-dependent weight over base points, directions and radii.

    ``mu_func(points, theta)`` returns the exponent at base points (array with
    trailing coordinate axis) and projective angles; it must broadcast.
    """
    radii = default_radii() if radii is None else list(radii)
    bases, _ = base_grid(f.dim, grid.spatial)
    theta, dirs = direction_grid(f.dim, grid.directions)
    per_radius = {}
    for r in radii:
        per_radius[float(r)] = float(_generalized_values(f, mu_func, r, bases, theta, dirs).max())
    if homogeneous:
        per_radius["inf"] = float(_generalized_values(f, mu_func, None, bases, theta, dirs).max())
    value = max(per_radius.values())
    return (value, per_radius) if details else value


# --- certificate for the skew example (x, y) -> (m x, y + m cos 2 pi x) ---

CONE_ETA_FLOOR = 5.0 * np.pi
CHECK_TOL = 1e-9


def cone_ratio_bound() -> float:
    """sqrt((1 + (2 pi)^2) / (1 + (4 pi)^2)) ~ 0.50470."""
    return math.sqrt((1 + (2 * np.pi) ** 2) / (1 + (4 * np.pi) ** 2))


def total_weight_bound(mu: float) -> float:
    """((1 + (2 pi)^2) / (1 + (3 pi)^2))^(mu/2); ~ 0.67129 at mu = 1."""
    return ((1 + (2 * np.pi) ** 2) / (1 + (3 * np.pi) ** 2)) ** (mu / 2)


@dataclass
class CertReport:
    m: int
    mu: float
    grid: tuple
    ratio_bound: float
    total_bound: float
    max_cone_ratio: float
    min_cone_eta: float
    max_cone_sum: float
    max_violating_count: int
    fitted_C: float
    fitted_C_mu: float
    inverse_norm_max: float
    max_total: float
    argmax_sample: dict
    horizontal_value: float
    verdict: bool
    first_failure: Optional[dict] = None
    # per-sample arrays of shape (q_samples, directions)
    totals: np.ndarray = field(default=None, repr=False)
    violating_counts: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k not in ("totals", "violating_counts")}
        out["grid"] = list(self.grid)
        out["verdict"] = "pass" if self.verdict else "fail"
        return out


def _cert_chunk(m, mu, qx, xi_x):
    """Per-sample certificate quantities for base abscissae qx and xi = (xi_x, 1)."""
    x = (qx[:, None] + np.arange(m)[None, :]) / m                 # (Q, m)
    s = 2 * np.pi * np.sin(2 * np.pi * x)
    offset = xi_x[None, None, :] - s[:, :, None]                  # xi_x - 2 pi sin 2 pi x
    eta_x = m * offset
    cone = np.abs(offset) >= CONE_ETA_FLOOR / m
    ratio = np.sqrt(1 + xi_x[None, None, :] ** 2) / np.sqrt(1 + eta_x**2)
    term = ratio**mu / m
    cone_sum = np.where(cone, term, 0.0).sum(axis=1)
    viol_sum = np.where(cone, 0.0, term).sum(axis=1)
    viol_count = (~cone).sum(axis=1)
    cone_ratio = np.where(cone, ratio, -np.inf).max(axis=1)
    cone_eta = np.where(cone, np.abs(eta_x), np.inf).min(axis=1)
    return cone_sum, viol_sum, viol_count, cone_ratio, cone_eta


def appendix_certify(m: int, mu: float, grid: GridSpec = GridSpec(512, 1024), *,
                     strict: bool = True) -> CertReport:
    """Numerically replay the cone/cardinality argument bounding B^mu < 1.

    Works with xi normalized to xi_y = 1, sampled as xi_x = cot(theta) for
    theta = j pi / directions, j = 1..directions-1; xi_y = 0 is handled
    separately. b does not depend on the base ordinate y, so only the
    abscissa is sampled. With ``strict`` a violated sub-inequality raises
    CertFailed; otherwise it is recorded in the report.
    """
    if int(m) != m or m < 2:
        raise ValueError("m must be an integer >= 2")
    m = int(m)
    f = SkewCosine(m, m)
    qx = np.arange(grid.spatial) / grid.spatial
    theta = np.arange(1, grid.directions) * (np.pi / grid.directions)
    xi_x = np.cos(theta) / np.sin(theta)
    R4, T3 = cone_ratio_bound(), total_weight_bound(mu)

    chunk = max(1, CHUNK_ELEMENTS // (m * len(xi_x)))
    parts = [_cert_chunk(m, mu, qx[s:s + chunk], xi_x) for s in range(0, len(qx), chunk)]
    cone_sum, viol_sum, viol_count, cone_ratio, cone_eta = (np.concatenate(p) for p in zip(*parts))
    total = cone_sum + viol_sum

    # operator norm of (Df^T)^{-1} = [[1/m, 2 pi sin], [0, 1]] over the circle
    xs = np.arange(4096) / 4096
    inv = np.zeros((len(xs), 2, 2))
    inv[:, 0, 0] = 1.0 / m
    inv[:, 0, 1] = 2 * np.pi * np.sin(2 * np.pi * xs)
    inv[:, 1, 1] = 1.0
    inverse_norm_max = float(np.linalg.norm(inv, ord=2, axis=(1, 2)).max())

    horizontal = max(b_mu(f, mu, Covector([q, 0.0], [1.0, 0.0])) for q in qx[:: max(1, len(qx) // 16)])

    checks = [
        ("cone_eta_floor", cone_eta < CONE_ETA_FLOOR - CHECK_TOL, cone_eta),
        ("cone_ratio_bound", cone_ratio > R4 + CHECK_TOL, cone_ratio),
        ("cone_sum_bound", cone_sum > R4**mu + CHECK_TOL, cone_sum),
        ("total_bound", total >= T3, total),
    ]
    first_failure = None
    for name, bad, vals in checks:
        if np.any(bad):
            i, j = np.unravel_index(int(np.argmax(bad)), bad.shape)
            first_failure = {"check": name, "q_x": float(qx[i]), "xi_x": float(xi_x[j]),
                             "value": float(vals[i, j])}
            break
    if first_failure is None and not horizontal < 1.0:
        first_failure = {"check": "horizontal_line", "value": horizontal}

    i, j = np.unravel_index(int(np.argmax(total)), total.shape)
    sqrt_m = math.sqrt(m)
    report = CertReport(
        m=m, mu=float(mu), grid=grid.as_tuple(), ratio_bound=R4, total_bound=T3,
        max_cone_ratio=float(cone_ratio[np.isfinite(cone_ratio)].max(initial=0.0)),
        min_cone_eta=float(cone_eta[np.isfinite(cone_eta)].min(initial=np.inf)),
        max_cone_sum=float(cone_sum.max()),
        max_violating_count=int(viol_count.max()),
        fitted_C=float(viol_count.max() / sqrt_m),
        fitted_C_mu=float(viol_sum.max() * sqrt_m),
        inverse_norm_max=inverse_norm_max,
        max_total=float(total.max()),
        argmax_sample={"q_x": float(qx[i]), "xi_x": float(xi_x[j])},
        horizontal_value=float(horizontal),
        verdict=first_failure is None,
        first_failure=first_failure,
        totals=total, violating_counts=viol_count,
    )
    if strict and first_failure is not None:
        raise CertFailed(first_failure["check"], first_failure)
    return report


__all__ = [
    "Covector", "GridSpec", "WeightEstimate", "RateEstimate", "CertReport",
    "pullback_covector", "b_mu", "factorized_b", "B_mu", "virtual_expansion_rate",
    "submultiplicativity_check", "generalized_B", "appendix_certify", "compose",
    "sweep", "sweep_grid", "direction_grid", "base_grid", "japanese", "default_radii",
    "cone_ratio_bound", "total_weight_bound",
]
