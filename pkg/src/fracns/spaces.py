"""Discrete estimators of the norms the analysis lives in.

All estimators are Riemann sums on the grid: a sample of |f| owns one
cell of volume h^3, the decreasing rearrangement is the sorted sample
table, and weighted/local norms use the minimum-image distance.  They are
1-homogeneous in the samples exactly, which the tests rely on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidExponents
from .spectral import (
    Grid,
    RealVectorField,
    scalar_to_real,
    scalar_to_spectral,
    spectral_gradient,
)


def _samples(field) -> np.ndarray:
    """Flatten a field (vector, scalar array) to pointwise magnitudes."""
    if isinstance(field, RealVectorField):
        return field.magnitude().ravel()
    arr = np.asarray(field)
    if arr.ndim == 4 and arr.shape[0] == 3:
        return np.sqrt(np.sum(arr**2, axis=0)).ravel()
    return np.abs(arr).ravel()


def distribution_function(field, lam: float, cell_volume: float) -> float:
    """Volume of {|f| > lam} on the grid (strict inequality)."""
    if lam < 0:
        raise ValueError("level must be nonnegative")
    vals = _samples(field)
    return float(cell_volume * np.count_nonzero(vals > lam))


@dataclass
class RearrangementTable:
    """Sorted |samples| (nonincreasing); step function with cell-volume steps."""

    values: np.ndarray
    cell_volume: float

    def __call__(self, t):
        """Evaluate f*(t) = inf{lam >= 0 : d_f(lam) <= t}."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.floor(t / self.cell_volume).astype(np.int64)
        out = np.where(
            idx < len(self.values),
            self.values[np.minimum(idx, len(self.values) - 1)],
            0.0,
        )
        return out if out.ndim else float(out)


def rearrangement(field, cell_volume: float) -> RearrangementTable:
    vals = np.sort(_samples(field))[::-1]
    return RearrangementTable(vals, cell_volume)


def lorentz_quasinorm(field, p: float, q: float, cell_volume: float) -> float:
    """Discrete Lorentz (p, q) quasinorm of a field.

    q = inf: sup over rearrangement steps of t^{1/p} f*(t), the sup on each
    step taken from the right (this makes the Chebyshev bound
    lam * d_f(lam)^{1/p} <= ||f||_{p,inf} exact on step functions).
    q < inf: ((q/p) * integral t^{q/p-1} f*(t)^q dt)^{1/q} evaluated exactly
    on the step function, which reduces to the plain L^p norm at q = p.
    """
    if p < 1:
        raise InvalidExponents(f"need p >= 1, got {p}")
    if q < 1:
        raise InvalidExponents(f"need q >= 1 (or inf), got {q}")
    vals = np.sort(_samples(field))[::-1]
    nz = np.count_nonzero(vals)
    if nz == 0:
        return 0.0
    vals = vals[:nz]
    t_right = cell_volume * np.arange(1, nz + 1, dtype=np.float64)
    if np.isinf(q):
        return float(np.max(vals * t_right ** (1.0 / p)))
    t_left = t_right - cell_volume
    increments = t_right ** (q / p) - t_left ** (q / p)
    return float(np.sum(vals**q * increments) ** (1.0 / q))


def lp_norm(field, p: float, cell_volume: float) -> float:
    vals = _samples(field)
    if np.isinf(p):
        return float(np.max(vals))
    return float((cell_volume * np.sum(vals**p)) ** (1.0 / p))


def weighted_sup_norm(field, theta: float, grid: Grid, origin=None) -> float:
    """sup over grid cells of |x - origin|^theta |f(x)| (periodic distance).

    The origin cell itself is excluded: the weight vanishes there and the
    value carries no information about the singular comparison.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    origin = grid.center if origin is None else np.asarray(origin, dtype=np.float64)
    r = grid.radius_from(origin).ravel()
    vals = _samples(field)
    keep = r > 0
    return float(np.max(r[keep] ** theta * vals[keep]))


def morrey_norm(field, p: float, radii, centers, grid: Grid) -> float:
    """max over (center, R) of R^{3/p} (mean of |f|^2 over the ball)^{1/2}."""
    return _morrey(field, radii, centers, grid, exponent=2, p=p)


def _morrey(field, radii, centers, grid: Grid, exponent: int, p: float) -> float:
    if p <= 2 and exponent == 2:
        raise InvalidExponents(f"Morrey exponent must satisfy p > 2, got {p}")
    vals = _samples(field).reshape(grid.n, grid.n, grid.n)
    best = 0.0
    for c in centers:
        r = grid.radius_from(np.asarray(c, dtype=np.float64))
        for R in radii:
            if R > grid.box_length / 4 * (1 + 1e-12):
                raise ValueError(f"radius {R} exceeds box_length/4")
            ball = r <= R
            count = int(np.count_nonzero(ball))
            if count == 0:
                warnings.warn(f"ball of radius {R} contains no grid cell; skipped")
                continue
            mean = np.sum(vals[ball] ** exponent) / count
            best = max(best, R ** (3.0 / p) * mean ** (1.0 / exponent))
    return float(best)


def young_check(f, g, grid: Grid, p, p1, p2, q, q1, q2) -> float:
    """Measured ratio ||f*g||_{p,q} / (||f||_{p1,q1} ||g||_{p2,q2}).

    The convolution is computed spectrally with the h^3 quadrature weight.
    Exponents must satisfy 1 + 1/p = 1/p1 + 1/p2 and 1/q <= 1/q1 + 1/q2.
    """
    tol = 1e-9
    if abs(1.0 + 1.0 / p - (1.0 / p1 + 1.0 / p2)) > tol:
        raise InvalidExponents("scaling relation 1 + 1/p = 1/p1 + 1/p2 violated")
    inv = lambda x: 0.0 if np.isinf(x) else 1.0 / x
    if inv(q) > inv(q1) + inv(q2) + tol:
        raise InvalidExponents("secondary relation 1/q <= 1/q1 + 1/q2 violated")

    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    conv = scalar_to_real(scalar_to_spectral(f) * scalar_to_spectral(g)) * grid.cell_volume
    h3 = grid.cell_volume
    num = lorentz_quasinorm(conv, p, q, h3)
    den = lorentz_quasinorm(f, p1, q1, h3) * lorentz_quasinorm(g, p2, q2, h3)
    if den == 0.0:
        raise DegenerateInput("zero factor in the convolution inequality")
    return float(num / den)


def holder_modulus_check(f, grid: Grid, p: float, n_pairs: int = 2000, seed: int = 0) -> float:
    """sup over sampled pairs of |f(x)-f(y)| / (||grad f||_{M^{1,p}} |x-y|^{1-3/p}).

    The gradient is spectral; its Morrey-type norm uses exponent 1 over a
    default radius/center sweep.  A zero gradient norm is degenerate.
    """
    if p <= 3:
        raise InvalidExponents(f"Holder modulus check needs p > 3, got {p}")
    f = np.asarray(f, dtype=np.float64)
    grad_hat = spectral_gradient(scalar_to_spectral(f), grid)
    grad = np.stack([scalar_to_real(grad_hat[i]) for i in range(3)])
    gmag = np.sqrt(np.sum(grad**2, axis=0))

    L = grid.box_length
    radii = [L / 16, L / 8, L / 4]
    centers = [grid.center]
    gnorm = _morrey(gmag, radii, centers, grid, exponent=1, p=p)
    if gnorm <= 0.0:
        raise DegenerateInput("gradient Morrey norm vanishes")

    rng = np.random.default_rng(seed)
    n3 = grid.n**3
    ia = rng.integers(0, n3, size=n_pairs)
    ib = rng.integers(0, n3, size=n_pairs)
    keep = ia != ib
    ia, ib = ia[keep], ib[keep]
    flat = f.ravel()
    coords = np.stack(
        np.meshgrid(grid.x_axis, grid.x_axis, grid.x_axis, indexing="ij"), axis=-1
    ).reshape(-1, 3)
    d = np.abs(coords[ia] - coords[ib])
    d = np.minimum(d, L - d)
    dist = np.sqrt(np.sum(d**2, axis=1))
    ratios = np.abs(flat[ia] - flat[ib]) / (gnorm * dist ** (1.0 - 3.0 / p))
    return float(np.max(ratios))
