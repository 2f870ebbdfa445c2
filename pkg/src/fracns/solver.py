"""Fixed-point construction of steady states and its diagnostics.

The steady problem is solved by iterating

    u_{n+1} = u_0 + B(u_n, u_n),   u_0 = (-Lap)^{-alpha/2} P f,

with B the lifted advection map from :mod:`fracns.spectral`.  Smallness
is never hard-coded: the contraction product 4 * delta * C_B is measured
(delta = weak-Lorentz size of the lifted force, C_B the empirical
bilinear constant) and reported alongside the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Diverged, InvalidGrid, NotConverged
from .spaces import lorentz_quasinorm
from .spectral import (
    FracParams,
    Grid,
    SpectralVectorField,
    apply_bilinear,
    fractional_power,
    l2_norm,
    leray_project,
    projected_advection,
    to_real,
)


@dataclass(frozen=True)
class SolverConfig:
    params: FracParams
    tol_rel: float = 1e-12
    max_iter: int = 200
    divergence_factor: float = 1e3

    def __post_init__(self):
        if not (0.0 < self.tol_rel < 1.0):
            raise ValueError("tol_rel must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.divergence_factor <= 1.0:
            raise ValueError("divergence_factor must exceed 1")


@dataclass
class SolverDiagnostics:
    iterations: int
    residual_history: list = field(default_factory=list)  # successive-change norms
    difference_ratios: list = field(default_factory=list)
    lorentz_history: list = field(default_factory=list)
    lifted_force_lorentz_norm: float = 0.0
    empirical_bilinear_constant: float = 0.0
    contraction_product: float = 0.0
    two_ball_ok: bool = True
    solution_lorentz_norm: float = 0.0


@dataclass
class SteadySolution:
    velocity: SpectralVectorField
    pressure: np.ndarray  # scalar spectral field, mean-free
    diagnostics: SolverDiagnostics


def weak_lorentz_norm(u: SpectralVectorField, alpha: float) -> float:
    """Discrete L^{3/(alpha-1), inf} estimator of |u| (the scale-invariant size)."""
    p = 3.0 / (alpha - 1.0)
    mag = to_real(u).magnitude()
    return lorentz_quasinorm(mag, p, np.inf, u.grid.cell_volume)


def lift_force(f: SpectralVectorField, params: FracParams) -> SpectralVectorField:
    """u_0 = (-Lap)^{-alpha/2} P f; rejects forces with nonzero mean."""
    return fractional_power(leray_project(f), -params.alpha)


def solve_steady(f: SpectralVectorField, config: SolverConfig) -> SteadySolution:
    """Iterate the quadratic fixed-point map until the relative L^2 change
    drops below ``tol_rel``.

    Raises ``Diverged`` when an iterate exceeds ``divergence_factor`` times
    the size of the lifted force (smallness violated), and ``NotConverged``
    when the iteration budget runs out.
    """
    params = config.params
    alpha = params.alpha
    u0 = lift_force(f, params)
    u0_l2 = l2_norm(u0)
    diag = SolverDiagnostics(iterations=0)
    diag.lifted_force_lorentz_norm = weak_lorentz_norm(u0, alpha)

    if u0_l2 == 0.0:
        pressure = recover_pressure(u0, f, params)
        diag.residual_history.append(0.0)
        return SteadySolution(u0, pressure, diag)

    u = u0.copy()
    prev_diff = None
    for it in range(1, config.max_iter + 1):
        bu = apply_bilinear(u, params)
        new = SpectralVectorField(u.grid, u0.data + bu.data)
        new_l2 = l2_norm(new)
        diff = l2_norm(SpectralVectorField(u.grid, new.data - u.data))
        diag.iterations = it
        diag.residual_history.append(diff)
        diag.lorentz_history.append(weak_lorentz_norm(new, alpha))
        if new_l2 > config.divergence_factor * u0_l2:
            raise Diverged(
                f"iterate norm {new_l2:.3e} exceeded {config.divergence_factor:.1e} x "
                f"||u0|| after {it} iterations"
            )
        if prev_diff is not None and prev_diff > 1e-13 * new_l2 and prev_diff > 0:
            diag.difference_ratios.append(diff / prev_diff)
        prev_diff = diff
        u = new
        if diff <= config.tol_rel * new_l2:
            break
    else:
        raise NotConverged(
            f"no convergence to tol_rel={config.tol_rel} in {config.max_iter} iterations"
        )

    # measured contraction data
    u_lorentz = weak_lorentz_norm(u, alpha)
    bu = apply_bilinear(u, params)
    b_lorentz = weak_lorentz_norm(bu, alpha)
    diag.solution_lorentz_norm = u_lorentz
    if u_lorentz > 0:
        diag.empirical_bilinear_constant = b_lorentz / u_lorentz**2
    diag.contraction_product = (
        4.0 * diag.lifted_force_lorentz_norm * diag.empirical_bilinear_constant
    )
    diag.two_ball_ok = u_lorentz <= 2.0 * diag.lifted_force_lorentz_norm * (1.0 + 1e-6)

    pressure = recover_pressure(u, f, params)
    return SteadySolution(u, pressure, diag)


def residual(u: SpectralVectorField, f: SpectralVectorField, params: FracParams) -> float:
    """Discrete L^2 norm of (-Lap)^{alpha/2} u + P div(u (x) u) - P f."""
    diss = fractional_power(u, params.alpha)
    adv = projected_advection(u, dealias=params.dealias)
    pf = leray_project(f)
    r = diss.data + adv.data - pf.data
    r[:, 0, 0, 0] = 0.0
    return l2_norm(SpectralVectorField(u.grid, r))


def recover_pressure(u: SpectralVectorField, f: SpectralVectorField, params: FracParams) -> np.ndarray:
    """Pressure from velocity and force, as a mean-free scalar spectral field.

    Taking the divergence of the momentum balance and inverting the
    Laplacian gives P = -(xi xi^T : W + i xi . f) / |xi|^2, with W the
    transform of the (dealiased) product u (x) u.
    """
    import scipy.fft as sfft

    g = u.grid
    vin = u.data * g.dealias_mask if params.dealias else u.data
    phys = sfft.ifftn(vin, axes=(1, 2, 3)).real

    quad = np.zeros((g.n, g.n, g.n), dtype=np.complex128)
    for j in range(3):
        for k in range(3):
            w_hat = sfft.fftn(phys[j] * phys[k])
            quad += g.xi[j] * g.xi[k] * w_hat
    div_f = 1j * (g.xi[0] * f.data[0] + g.xi[1] * f.data[1] + g.xi[2] * f.data[2])
    num = -(quad + div_f)
    num *= g.nyquist_free
    k2 = np.where(g.k2 == 0.0, 1.0, g.k2)
    p_hat = num / k2
    if params.dealias:
        p_hat *= g.dealias_mask
    p_hat[0, 0, 0] = 0.0
    return p_hat


def rescale_pair(u: SpectralVectorField, f: SpectralVectorField, alpha: float, lam: int):
    """Realize (u_lam, f_lam) on the grid with box L/lam and the same mode count.

    u_lam(x) = lam^{alpha-1} u(lam x) and f_lam(x) = lam^{2alpha-1} f(lam x);
    with N unchanged the frequency lattices align mode for mode, so the
    rescaling is exact at coefficient level.
    """
    g = u.grid
    g2 = Grid(g.n, g.box_length / lam)
    u2 = SpectralVectorField(g2, lam ** (alpha - 1.0) * u.data)
    f2 = SpectralVectorField(g2, lam ** (2.0 * alpha - 1.0) * f.data)
    return u2, f2


def _residual_terms(u, f, params):
    diss = fractional_power(u, params.alpha)
    adv = projected_advection(u, dealias=params.dealias)
    pf = leray_project(f)
    return diss, adv, pf


def scaling_check(
    u: SpectralVectorField,
    f: SpectralVectorField,
    params: FracParams,
    lam: int,
    include_bilinear: bool = True,
) -> float:
    """Max relative discrepancy between the residual field of the rescaled
    pair and lam^{2alpha-1} times the original residual field.

    The discrepancy is normalized by the largest coefficient among the
    rescaled residual's constituent terms, so it measures covariance of
    the discrete operators rather than the (possibly tiny) residual itself.
    """
    if lam < 2 or u.grid.n % lam != 0:
        raise InvalidGrid(f"lambda must be an integer >= 2 dividing n, got {lam}")
    alpha = params.alpha

    diss, adv, pf = _residual_terms(u, f, params)
    r1 = diss.data - pf.data + (adv.data if include_bilinear else 0.0)

    u2, f2 = rescale_pair(u, f, alpha, lam)
    diss2, adv2, pf2 = _residual_terms(u2, f2, params)
    r2 = diss2.data - pf2.data + (adv2.data if include_bilinear else 0.0)

    scale = max(
        np.max(np.abs(diss2.data)),
        np.max(np.abs(adv2.data)) if include_bilinear else 0.0,
        np.max(np.abs(pf2.data)),
    )
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(r2 - lam ** (2.0 * alpha - 1.0) * r1)) / scale)
