"""Independent checks for the weight and transfer-operator pipelines.

Nothing here calls the code path it is meant to validate: the Bessel oracle
never touches the FFT assembly, orbit histograms never touch the Galerkin
matrix, and the dense supremum sampler evaluates full-depth differentials
instead of walking the preimage tree level by level.

Random numbers come from numpy's Philox4x64 counter-based generator, which
gives identical streams on every platform for a given seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import TorusMap, reduce_mod1
from .errors import BesselRangeError

SERIES_RADIUS = 12.0
MAX_BESSEL_ARG = 1e5
ORBIT_JITTER = 2.0**-40
CHUNK_POINTS = 1024


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


# --- Bessel functions of the first kind, integer order ---

def _bessel_series(nmax: int, z: float) -> np.ndarray:
    out = np.empty(nmax + 1)
    half = 0.5 * z
    q = -half * half
    for n in range(nmax + 1):
        # leading term (z/2)^n / n! in log form to avoid overflow
        term = math.exp(n * math.log(half) - math.lgamma(n + 1)) if half > 0 else float(n == 0)
        total, k = term, 0
        while abs(term) > 1e-18 * max(abs(total), 1e-300):
            k += 1
            term *= q / (k * (k + n))
            total += term
            if k > 500:
                break
        out[n] = total
    return out


def _bessel_miller(nmax: int, z: float) -> np.ndarray:
    start = int(max(nmax, z) + 15.0 * z ** (1.0 / 3.0) + 40)
    start += start % 2
    vals = np.zeros(start + 2)
    vals[start] = 1e-30
    for k in range(start, 0, -1):
        vals[k - 1] = (2.0 * k / z) * vals[k] - vals[k + 1]
        if abs(vals[k - 1]) > 1e250:
            vals[k - 1:] *= 1e-250
    norm = vals[0] + 2.0 * vals[2:start + 1:2].sum()
    return vals[: nmax + 1] / norm


def bessel_jn(nmax: int, z: float) -> np.ndarray:
    """J_0(z), ..., J_nmax(z) for real z.

    Power series for |z| <= 12, normalized backward recurrence otherwise.
    """
    if not math.isfinite(z) or abs(z) > MAX_BESSEL_ARG or nmax > 10**6:
        raise BesselRangeError(f"argument {z} / order {nmax} outside supported range")
    if z == 0.0:
        out = np.zeros(nmax + 1)
        out[0] = 1.0
        return out
    a = abs(z)
    vals = _bessel_series(nmax, a) if a <= SERIES_RADIUS else _bessel_miller(nmax, a)
    if z < 0:
        vals = vals * (-1.0) ** np.arange(nmax + 1)
    return vals


def bessel_j(n, z: float) -> np.ndarray:
    """J_n(z) for an array of (possibly negative) integer orders n."""
    n = np.asarray(n, dtype=int)
    table = bessel_jn(int(np.abs(n).max(initial=0)), z)
    sign = np.where((n < 0) & (n % 2 == 1), -1.0, 1.0)
    return sign * table[np.abs(n)]


def bessel_matrix_oracle(m: int, a: float, K: int) -> np.ndarray:
    """Closed-form Galerkin matrix of (x, y) -> (m x, y + a cos 2 pi x).

    With z = 2 pi a k_y and n = m k_x - l_x, Jacobi-Anger gives
    M[(k_x, k_y), (l_x, l_y)] = delta(k_y, l_y) (-i)^n J_n(z).
    Modes are ordered as in ``spectral.mode_indices(K, 2)``.
    """
    ks = np.arange(-K, K + 1)
    n1 = len(ks)
    E = np.zeros((n1, n1, n1, n1), dtype=complex)
    phase = np.array([1, -1j, -1, 1j])
    for iy, ky in enumerate(ks):
        z = 2.0 * math.pi * a * ky
        n = m * ks[:, None] - ks[None, :]
        E[:, iy, :, iy] = phase[n % 4] * bessel_j(n, z)
    return E.reshape(n1 * n1, n1 * n1)


# --- Birkhoff histograms ---

@dataclass
class Histogram:
    bins: int
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if int(self.counts.sum()) != self.total:
            raise ValueError("counts do not sum to total")

    @property
    def dim(self):
        return self.counts.ndim

    def density(self) -> np.ndarray:
        cell = 1.0 / self.bins**self.dim
        return self.counts / (self.total * cell)

    def binomial_sigma(self) -> np.ndarray:
        """Standard deviation of each bin density under an independent binomial model."""
        cell = 1.0 / self.bins**self.dim
        p = self.counts / self.total
        return np.sqrt(p * (1 - p) / self.total) / cell

    def merge(self, other: "Histogram") -> "Histogram":
        return Histogram(self.bins, self.counts + other.counts, self.total + other.total)

    def csv_rows(self):
        centers = (np.arange(self.bins) + 0.5) / self.bins
        dens = self.density()
        for idx in np.ndindex(*dens.shape):
            yield tuple(float(centers[i]) for i in idx) + (float(dens[idx]),)


def _orbit_chunk(f: TorusMap, n_points, n_iter, burn_in, bins, seed, chunk):
    rng = _rng(seed, chunk)
    x = rng.random((n_points, f.dim))
    counts = np.zeros(bins**f.dim, dtype=np.int64)
    for t in range(n_iter):
        # the jitter refreshes bits lost to expansion, so each orbit is a
        # tiny-noise pseudo-orbit rather than collapsing onto a dyadic cycle
        x = reduce_mod1(f.eval(x) + rng.random(x.shape) * ORBIT_JITTER)
        if t >= burn_in:
            cells = np.minimum((x * bins).astype(np.int64), bins - 1)
            flat = np.ravel_multi_index(tuple(cells.T), (bins,) * f.dim)
            counts += np.bincount(flat, minlength=counts.size)
    return counts


def birkhoff_histogram(f: TorusMap, n_points: int, n_iter: int, burn_in: int, bins: int,
                       seed: int) -> Histogram:
    """Occupation histogram of orbit points after ``burn_in`` steps.

    Each orbit takes ``n_iter`` steps in total; the last ``n_iter - burn_in``
    are recorded. Initial points are uniform; each block of 1024 orbits draws
    from its own Philox stream keyed by (seed, block).
    """
    if n_iter <= burn_in:
        raise ValueError("n_iter must exceed burn_in")
    counts = np.zeros(bins**f.dim, dtype=np.int64)
    for chunk, start in enumerate(range(0, n_points, CHUNK_POINTS)):
        size = min(CHUNK_POINTS, n_points - start)
        counts += _orbit_chunk(f, size, n_iter, burn_in, bins, seed, chunk)
    total = n_points * (n_iter - burn_in)
    return Histogram(bins, counts.reshape((bins,) * f.dim), int(total))


def l1_distance(hist: Histogram, bin_averages: np.ndarray) -> float:
    """L^1 distance between the histogram density and a density's cell averages."""
    cell = 1.0 / hist.bins**hist.dim
    return float(np.sum(np.abs(hist.density() - np.real(bin_averages))) * cell)


# --- dense random sampling of the weight supremum ---

def dense_sup_crosscheck(f: TorusMap, mu: float, n: int, samples: int, seed: int, *,
                         running: bool = False, chunk: int = 4096):
    """Max of b^mu(f^n) over uniformly random base points and directions.

    Each covector is evaluated from the full preimage set of f^n and the
    chain-rule differential of f^n at every leaf. With ``running`` the
    running maximum per sample is returned as well.
    """
    from .dynamics import iterate

    fn = f if n == 1 else iterate(f, n)
    rng = _rng(seed)
    q = rng.random((samples, f.dim))
    theta = rng.random(samples) * np.pi
    if f.dim == 1:
        xi = np.ones((samples, 1))
    else:
        xi = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    values = np.empty(samples)
    step = max(1, chunk // max(1, fn.degree // 64))
    for s in range(0, samples, step):
        Q, X = q[s:s + step], xi[s:s + step]
        pre = fn.preimages_many(Q)
        D = fn.differential(pre)                                   # (B, deg, d, d)
        eta = np.einsum("bkji,bj->bki", D, X)
        jac = np.abs(np.linalg.det(D)) if f.dim == 2 else np.abs(D[..., 0, 0])
        values[s:s + step] = np.sum(np.linalg.norm(eta, axis=-1) ** (-mu) / jac, axis=1)
    best = float(values.max())
    if running:
        return best, np.maximum.accumulate(values)
    return best


def pointwise_matrix_delta(f: TorusMap, tm, u, points) -> float:
    """Max |(M u)(q) - sum_{f(p)=q} u(p)/|Jf(p)|| over the given points."""
    from .spectral import apply_P_pointwise

    image = tm.apply(u)
    lhs = image.evaluate(points)
    rhs = apply_P_pointwise(f, u.evaluate, points)
    return float(np.max(np.abs(lhs - rhs)))
