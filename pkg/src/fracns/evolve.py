"""Mild-solution time integrator for the fractional parabolic system.

Used as a stationarity and uniqueness oracle for the steady solver: a
converged steady state is an exact fixed point of the exponential
integrator below, so any drift measures discretization inconsistency.
Also hosts the semigroup-estimate checks (smoothing rate, kernel masses).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import InvalidTimeStep, NumericalBlowup
from .solver import SteadySolution
from .spectral import (
    FracParams,
    Grid,
    SpectralVectorField,
    l2_norm,
    leray_project,
    projected_advection,
    to_real,
)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)  # SpectralVectorField snapshots
    drift_history: list = field(default_factory=list)  # rel. L2 distance to v(0)
    linf_history: list = field(default_factory=list)


def stable_dt(v0: SpectralVectorField, safety: float = 0.5) -> float:
    """Advective step bound 0.5 h / max|v| (the linear part is exact)."""
    vmax = float(np.max(to_real(v0).magnitude()))
    if vmax == 0.0:
        return np.inf
    return safety * v0.grid.spacing / vmax


def _phi1(z: np.ndarray) -> np.ndarray:
    out = np.ones_like(z)
    small = np.abs(z) < 1e-7
    zs = z[~small]
    out[~small] = np.expm1(zs) / zs
    out[small] = 1.0 + z[small] / 2.0
    return out


def _phi2(z: np.ndarray) -> np.ndarray:
    out = np.full_like(z, 0.5)
    small = np.abs(z) < 1e-5
    zs = z[~small]
    out[~small] = (np.expm1(zs) - zs) / (zs * zs)
    out[small] = 0.5 + z[small] / 6.0
    return out


def evolve_mild(
    v0: SpectralVectorField,
    f: SpectralVectorField,
    params: FracParams,
    T: float,
    dt: float,
    store_every: int | None = None,
) -> Trajectory:
    """Second-order exponential integrator for the mild formulation.

    Each step treats the dissipation semigroup exactly and the Duhamel
    integral of P f - P div(v (x) v) with a trapezoidal (two-stage)
    quadrature.  Divergence-free and Hermitian structure are preserved at
    multiplier level.
    """
    if dt <= 0 or T <= 0:
        raise InvalidTimeStep("need positive T and dt")
    bound = stable_dt(v0)
    if dt > bound:
        raise InvalidTimeStep(
            f"dt={dt} exceeds the advective stability bound {bound:.3e}"
        )
    g = v0.grid
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        n_steps = int(np.ceil(T / dt))
    if store_every is None:
        store_every = max(1, n_steps // 16)

    z = -dt * g.kmag**params.alpha
    E = np.exp(z)
    p1 = dt * _phi1(z)
    p2 = dt * _phi2(z)

    pf = leray_project(f).data
    pf[:, 0, 0, 0] = 0.0

    def nonlinear(vdata):
        adv = projected_advection(SpectralVectorField(g, vdata), dealias=params.dealias)
        return pf - adv.data

    traj = Trajectory()
    traj.times.append(0.0)
    traj.states.append(v0.copy())
    traj.drift_history.append(0.0)
    traj.linf_history.append(float(np.max(to_real(v0).magnitude())))

    v0_l2 = l2_norm(v0)
    f_l2 = l2_norm(SpectralVectorField(g, pf))
    guard = 1e6 * max(v0_l2, f_l2, 1e-300)

    v = v0.data.copy()
    t = 0.0
    for step in range(1, n_steps + 1):
        n_v = nonlinear(v)
        a = E * v + p1 * n_v
        n_a = nonlinear(a)
        v = a + p2 * (n_a - n_v)
        v[:, 0, 0, 0] = 0.0
        t = step * dt

        state = SpectralVectorField(g, v)
        norm = l2_norm(state)
        if not np.isfinite(norm) or norm > guard:
            raise NumericalBlowup(f"trajectory norm {norm:.3e} at t={t:.3g}")
        drift = (
            l2_norm(SpectralVectorField(g, v - v0.data)) / v0_l2 if v0_l2 > 0 else norm
        )
        traj.drift_history.append(drift)
        traj.linf_history.append(float(np.max(to_real(state).magnitude())))
        if step % store_every == 0 or step == n_steps:
            traj.times.append(t)
            traj.states.append(state.copy())
        else:
            traj.times.append(t)
    return traj


def stationarity_check(
    solution: SteadySolution,
    f: SpectralVectorField,
    params: FracParams,
    T: float = 1.0,
    dt: float = 0.01,
) -> float:
    """Evolve the steady state under its own force; max relative L2 drift."""
    traj = evolve_mild(solution.velocity, f, params, T, dt, store_every=10**9)
    return float(np.max(traj.drift_history))


def smoothing_check(f, p: float, alpha: float, times, grid: Grid) -> dict:
    """sup over times of t^{3/(alpha p)} ||exp(-t(-Lap)^{alpha/2}) f||_inf,
    and its ratio to the discrete L^p norm of f."""
    from .spaces import lp_norm

    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim == 3:
        comps = arr[None]
    else:
        comps = arr
    hats = np.stack([sfft.fftn(c) for c in comps])
    sup = 0.0
    for t in times:
        if not (0.0 < t <= 10.0):
            raise ValueError("sample times must lie in (0, 10]")
        mult = np.exp(-t * grid.kmag**alpha)
        smoothed = np.stack([sfft.ifftn(h * mult).real for h in hats])
        mag = np.sqrt(np.sum(smoothed**2, axis=0))
        sup = max(sup, t ** (3.0 / (alpha * p)) * float(np.max(mag)))
    fnorm = lp_norm(np.sqrt(np.sum(comps**2, axis=0)), p, grid.cell_volume)
    return {"sup_weighted": sup, "lp_norm": fnorm, "ratio": sup / fnorm if fnorm else np.inf}


def kernel_l1_check(alpha: float, times, n: int = 128, box: float = 8.0) -> dict:
    """Scaled L^1 masses of the semigroup kernel, its gradient, and the
    projected-divergence kernel tensor, per sample time.

    Columns: ||p(t)||_1, t^{1/alpha} ||grad p(t)||_1, t^{1/alpha} ||K(t)||_1.
    Self-similarity makes each column time-independent in the continuum.
    """
    grid = Grid(n, box)
    h3 = grid.cell_volume
    inv_k2 = 1.0 / np.where(grid.k2 == 0.0, 1.0, grid.k2)
    rows = {"t": [], "p_mass": [], "grad_p_mass_scaled": [], "K_mass_scaled": []}
    for t in times:
        mult = np.exp(-t * grid.kmag**alpha)
        p_ker = sfft.ifftn(mult).real / h3
        rows["t"].append(t)
        rows["p_mass"].append(h3 * float(np.sum(np.abs(p_ker))))

        grads = np.stack(
            [sfft.ifftn(1j * grid.xi[a] * grid.nyquist_free * mult).real / h3 for a in range(3)]
        )
        gmag = np.sqrt(np.sum(grads**2, axis=0))
        rows["grad_p_mass_scaled"].append(t ** (1.0 / alpha) * h3 * float(np.sum(gmag)))

        acc = np.zeros((grid.n, grid.n, grid.n))
        for i in range(3):
            for j in range(i, 3):
                proj = (1.0 if i == j else 0.0) - grid.xi[i] * grid.xi[j] * inv_k2
                for k in range(3):
                    sym = proj * (1j * grid.xi[k]) * grid.nyquist_free * mult
                    sym[0, 0, 0] = 0.0
                    val = sfft.ifftn(sym).real / h3
                    acc += val**2 if i == j else 2.0 * val**2
        kmag_field = np.sqrt(acc)
        rows["K_mass_scaled"].append(t ** (1.0 / alpha) * h3 * float(np.sum(kmag_field)))
    return {k: np.asarray(v) for k, v in rows.items()}
