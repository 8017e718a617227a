"""Fourier-Galerkin truncation of the Perron-Frobenius operator on T^d.

Mode k carries the cotangent frequency xi = 2 pi k. The transfer matrix acts
on Fourier coefficients,

    (Pu)^(k) = sum_l M[k, l] u^(l),   M[k, l] = int exp(2 pi i (l.p - k.f(p))) dp,

and its entries are computed by equispaced tensor quadrature, one FFT per row.
"""
from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .dynamics import TorusMap, _SkewProduct, describe_map
from .errors import AliasingRisk, EigenSolverFailure, NoUnitEigenvalue

CHOP = 1e-14
STABLE_MODULUS_TOL = 1e-4
STABLE_POSITION_TOL = 1e-3
BULK_SLACK = 0.05
UNIT_TOL = 1e-6


def mode_indices(K: int, dim: int) -> np.ndarray:
    """Integer modes with |k_i| <= K in C order, shape ((2K+1)^dim, dim)."""
    r = np.arange(-K, K + 1)
    return np.array(list(itertools.product(r, repeat=dim)), dtype=int).reshape(-1, dim)


def japanese(s):
    return np.sqrt(1.0 + np.square(s))


def sobolev_weights(K: int, dim: int, mu: float) -> np.ndarray:
    """w(k) = sqrt(1 + <2 pi |k|>^(2 mu)); all ones for mu < 0 (L^2 convention)."""
    k = mode_indices(K, dim)
    if mu < 0:
        return np.ones(len(k))
    return np.sqrt(1.0 + japanese(2 * np.pi * np.linalg.norm(k, axis=1)) ** (2 * mu))


@dataclass
class TrigPoly:
    """Band-limited function sum_k c_k exp(2 pi i k.x), |k_i| <= K."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        n = c.shape[0]
        if n % 2 == 0 or any(s != n for s in c.shape) or c.ndim not in (1, 2):
            raise ValueError("coeffs must have shape (2K+1,)*d with d in {1, 2}")
        self.coeffs = c

    @property
    def K(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def dim(self) -> int:
        return self.coeffs.ndim

    @classmethod
    def zeros(cls, K, dim=1):
        return cls(np.zeros((2 * K + 1,) * dim, dtype=complex))

    @classmethod
    def constant(cls, K, dim=1, value=1.0):
        u = cls.zeros(K, dim)
        u.coeffs[(K,) * dim] = value
        return u

    @classmethod
    def from_modes(cls, K, dim, modes: dict):
        u = cls.zeros(K, dim)
        for k, c in modes.items():
            k = (k,) if np.isscalar(k) else tuple(k)
            u.coeffs[tuple(K + np.array(k))] += c
        return u

    @classmethod
    def from_vector(cls, v, K, dim):
        return cls(np.asarray(v).reshape((2 * K + 1,) * dim))

    @classmethod
    def from_function(cls, func, K, dim=1, N=None):
        """Truncated Fourier series of ``func`` sampled on an N^d grid."""
        N = N or max(8 * K, 64)
        axes = [np.arange(N) / N] * dim
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(func(pts if dim > 1 else pts[..., 0]), dtype=complex)
        c = np.fft.fftn(vals) / N**dim
        idx = np.arange(-K, K + 1) % N
        return cls(c[np.ix_(*([idx] * dim))])

    def vector(self) -> np.ndarray:
        return self.coeffs.ravel()

    def modes(self) -> np.ndarray:
        return mode_indices(self.K, self.dim)

    @property
    def mean(self) -> complex:
        return self.coeffs[(self.K,) * self.dim]

    def evaluate(self, points) -> np.ndarray:
        """Values at points given with a trailing coordinate axis (or scalars if d = 1)."""
        x = np.asarray(points, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        phase = np.exp(2j * np.pi * (x @ self.modes().T))
        return phase @ self.vector()

    def grid_values(self, n: int) -> np.ndarray:
        axes = [np.arange(n) / n] * self.dim
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return self.evaluate(pts)

    def is_real(self, tol=1e-12) -> bool:
        flipped = self.coeffs[(slice(None, None, -1),) * self.dim]
        return bool(np.max(np.abs(self.coeffs - np.conj(flipped))) <= tol)

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.vector()))

    def bin_averages(self, bins: int) -> np.ndarray:
        """Exact averages over the cells of a bins^d partition."""
        k = np.arange(-self.K, self.K + 1)
        a = np.arange(bins) / bins
        # (1/h) int_a^{a+h} e^{2 pi i k x} dx
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(k == 0, 1.0, (np.exp(2j * np.pi * k / bins) - 1) / (2j * np.pi * k / bins))
        E = np.exp(2j * np.pi * np.outer(a, k)) * factor[None, :]
        out = self.coeffs
        for axis in range(self.dim):
            out = np.tensordot(E, out, axes=([1], [axis]))
            out = np.moveaxis(out, 0, axis)
        return out

    def __add__(self, other):
        return TrigPoly(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return TrigPoly(self.coeffs - other.coeffs)

    def __mul__(self, s):
        return TrigPoly(self.coeffs * s)

    __rmul__ = __mul__


def h_mu_norm(u: TrigPoly, mu: float) -> float:
    """sqrt(sum_k (1 + <2 pi |k|>^(2 mu)) |u^(k)|^2); plain L^2 norm for mu < 0."""
    if mu < 0:
        return u.l2_norm()
    w = sobolev_weights(u.K, u.dim, mu)
    return float(np.sqrt(np.sum(w**2 * np.abs(u.vector()) ** 2)))


def apply_P_pointwise(f: TorusMap, u, q) -> np.ndarray:
    """Pu(q) = sum over f(p) = q of u(p) / |Jf(p)|, for a callable u."""
    q = f.as_points(q)
    single = q.ndim == 1
    Q = q.reshape(-1, f.dim)
    pre = f.preimages_many(Q)                          # (M, deg, d)
    flat = pre.reshape(-1, f.dim)
    vals = np.asarray(u(flat if f.dim > 1 else flat[:, 0])).reshape(pre.shape[:2])
    jac = np.abs(f.jacobian(flat)).reshape(pre.shape[:2])
    out = np.sum(vals / jac, axis=1)
    return out[0] if single else out


@dataclass
class TransferMatrix:
    K: int
    dim: int
    entries: np.ndarray
    N: tuple
    map_descriptor: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def modes(self) -> np.ndarray:
        return mode_indices(self.K, self.dim)

    def index(self, k) -> int:
        k = np.atleast_1d(k)
        return int(np.ravel_multi_index(tuple(k + self.K), (2 * self.K + 1,) * self.dim))

    def entry(self, k, l) -> complex:
        return self.entries[self.index(k), self.index(l)]

    def apply(self, u: TrigPoly) -> TrigPoly:
        if u.K != self.K or u.dim != self.dim:
            raise ValueError("TrigPoly cutoff/dimension does not match the matrix")
        return TrigPoly.from_vector(self.entries @ u.vector(), self.K, self.dim)


def shift_matrix(f: TorusMap, K: int):
    """Exact matrix delta(l, A^T k) for maps with constant integer differential.

    Returns None for maps without that structure.
    """
    from .dynamics import CircleExpand, LinearMap

    if isinstance(f, LinearMap):
        A = np.array(f.A)
    elif isinstance(f, CircleExpand) and f.eps == 0.0:
        A = np.array([[f.k]])
    else:
        return None
    modes = mode_indices(K, f.dim)
    lookup = {tuple(k): i for i, k in enumerate(modes)}
    E = np.zeros((len(modes), len(modes)), dtype=complex)
    for i, k in enumerate(modes):
        j = lookup.get(tuple(A.T @ k))
        if j is not None:
            E[i, j] = 1.0
    return E


def _reach(stretch: float, K: int) -> float:
    # frequency content of exp(-2 pi i k.f) along an axis; the cube-root term
    # covers the Airy-type Bessel tail past |n| = z
    z = K * stretch
    return z + 12.0 * z ** (1.0 / 3.0) + 20.0


def quadrature_size(f: TorusMap, K: int) -> tuple:
    """Per-axis grid size: power of two >= 2 (reach + K) + 8."""
    stretch = np.atleast_1d(f.stretch())
    sizes = []
    for i in range(f.dim):
        need = 2 * (_reach(float(stretch[i]), K) + K) + 8
        sizes.append(int(2 ** math.ceil(math.log2(need))))
    return tuple(sizes)


def _minimal_rule(f: TorusMap, K: int) -> tuple:
    """N >= 2 (K L + K) + 8 with L the lift stretch rounded up."""
    stretch = np.atleast_1d(f.stretch())
    return tuple(int(2 * (K * math.ceil(s - 1e-9) + K) + 8) for s in stretch)


def _assemble_rows_generic(f, K, N, rows):
    grids = [np.arange(n) / n for n in N]
    pts = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1)
    F = f.lift(pts)                                       # (N1, ..., Nd, d)
    idx = [np.arange(-K, K + 1) % n for n in N]
    out = np.empty((len(rows), (2 * K + 1) ** f.dim), dtype=complex)
    for r, k in enumerate(rows):
        g = np.exp(-2j * np.pi * (F @ k))
        c = np.fft.ifftn(g)
        out[r] = c[np.ix_(*idx)].ravel()
    return out


def _assemble_skew(f: _SkewProduct, K, Nx, threads=None):
    """The y-integral is exactly delta(k_y, l_y); only x needs quadrature."""
    x = np.arange(Nx) / Nx
    h = f._h(x)
    tau = f.tau(x)
    idx = np.arange(-K, K + 1) % Nx
    n1 = 2 * K + 1
    E = np.zeros((n1, n1, n1, n1), dtype=complex)        # [kx, ky, lx, ly]
    ks = np.arange(-K, K + 1)

    def row_block(iy):
        ky = ks[iy]
        g = np.exp(-2j * np.pi * (np.outer(ks, h) + ky * tau[None, :]))
        c = np.fft.ifft(g, axis=1)
        E[:, iy, :, iy] = c[:, idx]

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(row_block, range(n1)))
    else:
        for iy in range(n1):
            row_block(iy)
    return E.reshape(n1 * n1, n1 * n1)


def assemble_transfer_matrix(f: TorusMap, K: int, N=None, *, chop: float = CHOP,
                             threads: Optional[int] = None) -> TransferMatrix:
    """Galerkin matrix of P on modes |k_i| <= K.

    ``N`` (int or per-axis tuple) overrides the quadrature size; a value below
    the oversampling rule triggers an AliasingRisk warning. Entries smaller
    than ``chop`` are quadrature round-off and are set to zero.
    """
    auto = quadrature_size(f, K)
    if N is None:
        N = auto
    else:
        N = tuple(np.broadcast_to(np.atleast_1d(N), (f.dim,)).astype(int))
        rule = _minimal_rule(f, K)
        if any(n < r for n, r in zip(N, rule)):
            warnings.warn(f"quadrature size {N} below oversampling rule {rule}", AliasingRisk)
    if isinstance(f, _SkewProduct):
        entries = _assemble_skew(f, K, N[0], threads)
        N = (N[0], 2 * K + 1)
    else:
        modes = mode_indices(K, f.dim)
        batches = np.array_split(modes, max(1, min(len(modes), (threads or 1) * 4)))
        work = lambda rows: _assemble_rows_generic(f, K, N, rows)
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(work, batches))
        else:
            parts = [work(b) for b in batches]
        entries = np.concatenate(parts, axis=0)
    if chop:
        entries.real[np.abs(entries.real) < chop] = 0.0
        entries.imag[np.abs(entries.imag) < chop] = 0.0
    return TransferMatrix(K=K, dim=f.dim, entries=entries, N=tuple(int(n) for n in N),
                          map_descriptor=describe_map(f))


@dataclass
class Spectrum:
    values: np.ndarray
    vectors: np.ndarray           # right eigenvectors of W M W^{-1}, columns
    weights: np.ndarray
    mu: float

    def unweighted_vectors(self) -> np.ndarray:
        return self.vectors / self.weights[:, None]


def _spectral_order(values):
    # modulus descending, then real part descending; modulus rounded so that
    # exact ties are decided by the real part
    return np.lexsort((-values.real, -np.round(np.abs(values), 12)))


def leading_spectrum(tm: TransferMatrix, mu: float, count: Optional[int] = None) -> Spectrum:
    """Eigenpairs of W M W^{-1}, W = diag(w(k)), largest moduli first."""
    n = tm.size
    count = n if count is None else int(count)
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}]")
    w = sobolev_weights(tm.K, tm.dim, mu)
    A = (w[:, None] * tm.entries) / w[None, :]
    try:
        vals, vecs = scipy.linalg.eig(A, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverFailure(str(exc)) from exc
    order = _spectral_order(vals)[:count]
    return Spectrum(values=vals[order], vectors=vecs[:, order], weights=w, mu=float(mu))


def match_eigenvalues(small: np.ndarray, large: np.ndarray) -> np.ndarray:
    """For each value in ``small``, the index of its nearest neighbor in ``large``."""
    if len(large) == 0:
        return np.full(len(small), -1)
    dist = np.abs(small[:, None] - large[None, :])
    return np.argmin(dist, axis=1)


def _is_match(a, b):
    return abs(abs(a) - abs(b)) < STABLE_MODULUS_TOL and abs(a - b) < STABLE_POSITION_TOL


@dataclass
class EssentialRadiusReport:
    mu: float
    K_list: list
    bound: float
    fekete_min: float
    eigenvalues: np.ndarray          # at the largest cutoff, spectral order
    stable: np.ndarray               # bool flags for ``eigenvalues``
    bulk_radius: float
    persists: bool
    bulk_below_bound: bool
    rate: object = field(repr=False, default=None)
    note: str = ("heuristic: eigenvalues matched across consecutive cutoffs are 'stable', "
                 "the rest form the truncation bulk")

    @property
    def consistent(self) -> bool:
        return self.persists and self.bulk_below_bound

    def stable_values(self):
        return self.eigenvalues[self.stable]

    def as_dict(self, max_listed: int = 32):
        listed = []
        for lam, s in list(zip(self.eigenvalues, self.stable))[:max_listed]:
            listed.append({"re": float(lam.real), "im": float(lam.imag),
                           "modulus": float(abs(lam)), "stable": bool(s)})
        return {
            "mu": self.mu, "K_list": list(self.K_list), "bound": self.bound,
            "fekete_min": self.fekete_min, "bulk_radius": self.bulk_radius,
            "persists": self.persists, "bulk_below_bound": self.bulk_below_bound,
            "consistent": self.consistent, "leading": listed, "note": self.note,
            "rate": self.rate.as_dict() if self.rate is not None else None,
        }

    def csv_rows(self):
        for lam, s in zip(self.eigenvalues, self.stable):
            yield (float(lam.real), float(lam.imag), float(abs(lam)), int(bool(s)))


def essential_radius_report(f: TorusMap, mu: float, K_list, n_max: int, grid, *, N=None,
                            threads=None, spectra=None) -> EssentialRadiusReport:
    """Compare truncated spectra across cutoffs with the bound sqrt(min_n B^{2 mu}(f^n)^{1/n})."""
    from .cotangent import virtual_expansion_rate

    K_list = sorted(int(K) for K in K_list)
    if len(K_list) < 2:
        raise ValueError("need at least two cutoffs")
    rate = virtual_expansion_rate(f, mu, n_max, grid, threads=threads)
    bound = math.sqrt(rate.fekete_min)
    if spectra is None:
        spectra = [leading_spectrum(assemble_transfer_matrix(f, K, N, threads=threads), mu).values
                   for K in K_list]
    persists = True
    for small, large in zip(spectra, spectra[1:]):
        nearest = match_eigenvalues(small, large)
        for lam, j in zip(small, nearest):
            if abs(lam) > bound and abs(lam - large[j]) >= STABLE_POSITION_TOL:
                persists = False
    last, prev = spectra[-1], spectra[-2]
    back = match_eigenvalues(last, prev)
    stable = np.array([_is_match(lam, prev[j]) for lam, j in zip(last, back)], dtype=bool)
    bulk = np.abs(last[~stable])
    bulk_radius = float(bulk.max()) if bulk.size else 0.0
    return EssentialRadiusReport(
        mu=float(mu), K_list=K_list, bound=bound, fekete_min=rate.fekete_min,
        eigenvalues=last, stable=stable, bulk_radius=bulk_radius, persists=persists,
        bulk_below_bound=bulk_radius < bound + BULK_SLACK, rate=rate)


def invariant_density(tm: TransferMatrix, *, with_eigenvalue: bool = False):
    """Eigenvector of the eigenvalue nearest 1, scaled to mean 1."""
    vals, vecs = scipy.linalg.eig(tm.entries)
    i = int(np.argmin(np.abs(vals - 1.0)))
    if abs(vals[i] - 1.0) > UNIT_TOL:
        raise NoUnitEigenvalue(f"closest eigenvalue to 1 is {vals[i]}")
    v = vecs[:, i]
    zero = tm.index(np.zeros(tm.dim, dtype=int))
    if abs(v[zero]) < 1e-14:
        raise NoUnitEigenvalue("unit eigenvector has zero mean")
    density = TrigPoly.from_vector(v / v[zero], tm.K, tm.dim)
    return (density, complex(vals[i])) if with_eigenvalue else density


def density_diagnostics(u: TrigPoly, n: int = 512) -> dict:
    vals = u.grid_values(n if u.dim == 1 else min(n, 128))
    return {"mean": float(u.mean.real), "min_value": float(vals.real.min()),
            "max_value": float(vals.real.max()), "max_imag": float(np.abs(vals.imag).max())}


def cesaro_average(tm: TransferMatrix, u: TrigPoly, m: int) -> TrigPoly:
    """(1/m) sum_{j < m} M^j u."""
    if m < 1:
        raise ValueError("m must be >= 1")
    v = u.vector().astype(complex)
    acc = np.zeros_like(v)
    for _ in range(m):
        acc += v
        v = tm.entries @ v
    return TrigPoly.from_vector(acc / m, tm.K, tm.dim)


def smoothed_indicator(K: int, lo: float = 0.25, hi: float = 0.75, width: float = 0.02) -> TrigPoly:
    """Indicator of [lo, hi] on the circle, Gaussian-smoothed in Fourier space."""
    k = np.arange(-K, K + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(k == 0, hi - lo,
                     (np.exp(-2j * np.pi * k * lo) - np.exp(-2j * np.pi * k * hi)) / (2j * np.pi * k))
    c = c * np.exp(-0.5 * (2 * np.pi * k * width) ** 2)
    return TrigPoly(c)
