"""Idealized Shack-Hartmann sensor and closed-loop controller benchmark.

The sensor reads the true average phase gradient over each lenslet
subaperture (noiseless, no spot centroiding).  Two slope-to-command
reconstructors are available:

* ``modal`` (default): slopes are fit to a low-order Zernike expansion and
  the fitted aberration is projected onto the mirror's influence basis.
  This is the classical sensed-modes pathway and is robust to the
  high-spatial-frequency screen content the mirror cannot correct.
* ``zonal``: Tikhonov pseudo-inverse of the actuator poke matrix.  Exact
  for mirror-generated wavefronts (see the calibration round-trip test),
  but as an integrator fixed point it also chases the slopes of the
  uncorrectable fitting error, which costs several tenths of Strehl on
  strong screens; it is kept for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dm as dm_mod
from . import sensing
from .dm import ActuatorCommand, DMConfig, clamp_command
from .optics import (ConfigurationError, OpticalConfig, ScalarField,
                     apply_phase, circular_aperture, power_map,
                     propagate_to_focus, SamplingGrid)
from .turbulence import PhaseScreen


@dataclass(frozen=True)
class LensletConfig:
    """Lenslet array geometry: ``n_across`` lenslets span the pupil diameter."""

    n_across: int = 12
    min_fill: float = 0.5  # subaperture active if >= this fraction is in the pupil

    def __post_init__(self):
        if self.n_across < 2:
            raise ConfigurationError("need at least 2 lenslets across the pupil")


class SlopeGeometry:
    """Precomputed subaperture pixel masks for one (grid, aperture) pair."""

    def __init__(self, grid: SamplingGrid, aperture_diameter: float,
                 cfg: LensletConfig):
        self.grid = grid
        self.cfg = cfg
        yy, xx = grid.mesh()
        inside = grid.radius() <= aperture_diameter / 2
        sub = aperture_diameter / cfg.n_across
        centers = (np.arange(cfg.n_across) - (cfg.n_across - 1) / 2.0) * sub
        masks, active = [], []
        for iy, cy in enumerate(centers):
            for ix, cx in enumerate(centers):
                cell = (np.abs(yy - cy) <= sub / 2) & (np.abs(xx - cx) <= sub / 2)
                total = int(cell.sum())
                if total and (cell & inside).sum() / total >= cfg.min_fill:
                    masks.append(cell & inside)
                    active.append((iy, ix))
        self.masks = masks
        self.active = active
        self.n_slopes = 2 * len(masks)


def measure_slopes(residual: PhaseScreen, geometry: SlopeGeometry) -> np.ndarray:
    """Average finite-difference phase gradient per active subaperture.

    Returns (2 * n_active,) as [dy_0, dx_0, dy_1, dx_1, ...] in rad/m.
    """
    gy, gx = np.gradient(residual.values, geometry.grid.step)
    out = np.empty(geometry.n_slopes)
    for k, mask in enumerate(geometry.masks):
        out[2 * k] = gy[mask].mean()
        out[2 * k + 1] = gx[mask].mean()
    return out


def _noll_indices(j: int) -> tuple[int, int]:
    """Zernike (n, m) for Noll index j >= 1."""
    n = 0
    j1 = j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1) ** j * ((n % 2) + 2 * ((j1 + ((n + 1) % 2)) // 2))
    return n, m


def zernike(n: int, m: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Noll-normalized Zernike polynomial on the unit disc."""
    radial = np.zeros_like(rho)
    for k in range((n - abs(m)) // 2 + 1):
        coeff = ((-1) ** k * math.factorial(n - k)
                 / (math.factorial(k)
                    * math.factorial((n + abs(m)) // 2 - k)
                    * math.factorial((n - abs(m)) // 2 - k)))
        radial += coeff * rho ** (n - 2 * k)
    if m == 0:
        return np.sqrt(n + 1.0) * radial
    if m > 0:
        return np.sqrt(2.0 * (n + 1)) * radial * np.cos(m * theta)
    return np.sqrt(2.0 * (n + 1)) * radial * np.sin(-m * theta)


def zernike_basis(grid: SamplingGrid, aperture_diameter: float,
                  n_modes: int) -> np.ndarray:
    """(n_modes, n, n) Zernike phases, Noll j = 2 .. n_modes+1 (piston skipped)."""
    yy, xx = grid.mesh()
    rho = grid.radius() / (aperture_diameter / 2)
    theta = np.arctan2(yy, xx)
    inside = rho <= 1.0
    modes = []
    for j in range(2, 2 + n_modes):
        n, m = _noll_indices(j)
        modes.append(zernike(n, m, rho, theta) * inside)
    return np.stack(modes)


@dataclass(frozen=True)
class Reconstructor:
    """Calibrated slope-to-command map for the closed loop.

    ``interaction_matrix`` is the measured poke response (slopes x
    actuators); ``control_matrix`` maps residual slopes to the command
    correction (actuators x slopes) under the configured reconstruction
    mode.
    """

    interaction_matrix: np.ndarray
    control_matrix: np.ndarray
    regularization: float
    mode: str
    geometry: SlopeGeometry = field(repr=False)
    dm_cfg: DMConfig = field(repr=False)


#: Zernike modes in the default modal reconstructor: complete radial
#: orders through 9.  Fewer modes leave correctable low-order power;
#: more than the mirror can fit injects spurious commands.
DEFAULT_MODAL_MODES = 54

#: Tikhonov factor (relative to the largest singular value) for slope fits.
SLOPE_TIKHONOV = 1e-3

#: Ridge (relative to the largest Gram eigenvalue) when projecting target
#: phases onto the influence basis; keeps commands for barely-fittable
#: modes bounded.
DM_FIT_RIDGE = 1e-2


def _tikhonov_pinv(matrix: np.ndarray, rel: float) -> np.ndarray:
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    alpha = rel * s[0]
    return (vt.T * (s / (s ** 2 + alpha ** 2))) @ u.T


def calibrate(dm_cfg: DMConfig, lenslet_cfg: LensletConfig,
              optics: OpticalConfig, mode: str = "modal",
              poke: float = 0.05, n_modes: int = DEFAULT_MODAL_MODES,
              slope_tikhonov: float = SLOPE_TIKHONOV,
              fit_ridge: float = DM_FIT_RIDGE) -> Reconstructor:
    """Poke every actuator, build the interaction and control matrices.

    The interaction matrix is always measured from unit pokes (slope
    response divided by the poke amplitude).  The control matrix depends on
    ``mode``; see the module docstring.
    """
    grid = optics.pupil_sampling
    geometry = SlopeGeometry(grid, optics.aperture_diameter, lenslet_cfg)
    n_act = dm_mod.N_ACTUATORS

    interaction = np.empty((geometry.n_slopes, n_act))
    for j in range(n_act):
        u = np.zeros(n_act)
        u[j] = poke
        surface = dm_mod.surface_from_command(ActuatorCommand(u), dm_cfg, grid)
        phase = dm_mod.phase_from_surface(surface, optics.wavelength, grid)
        interaction[:, j] = measure_slopes(phase, geometry) / poke

    if mode == "zonal":
        control = _tikhonov_pinv(interaction, slope_tikhonov)
    elif mode == "modal":
        modes = zernike_basis(grid, optics.aperture_diameter, n_modes)
        templates = np.stack(
            [measure_slopes(PhaseScreen(grid, z), geometry) for z in modes], axis=1)
        estimator = _tikhonov_pinv(templates, slope_tikhonov)

        inside = grid.radius() <= optics.aperture_diameter / 2
        basis = dm_mod.phase_basis(dm_cfg, grid, optics.wavelength, inside)
        basis = basis - basis.mean(axis=1, keepdims=True)
        gram = basis @ basis.T
        eigvals = np.linalg.eigvalsh(gram)
        ridge = fit_ridge * eigvals[-1]
        target = np.stack([z[inside] - z[inside].mean() for z in modes], axis=1)
        dm_fit = np.linalg.solve(gram + ridge * np.eye(n_act), basis @ target)
        control = dm_fit @ estimator
    else:
        raise ConfigurationError(f"unknown reconstruction mode: {mode!r}")

    if not np.all(np.isfinite(control)):
        raise ConfigurationError("calibration produced a singular control matrix")
    return Reconstructor(interaction, control, slope_tikhonov, mode, geometry, dm_cfg)


class _LoopOptics:
    """Cached aperture/propagation pieces for Strehl evaluation in the loop."""

    def __init__(self, optics: OpticalConfig):
        self.optics = optics
        self.aperture = circular_aperture(optics.pupil_sampling, optics.aperture_diameter)
        self.mask = np.abs(self.aperture.amplitude) > 0
        ideal = propagate_to_focus(self.aperture, optics)
        n = optics.focal_sampling.n_samples
        self.ideal_peak = float(power_map(ideal)[n // 2, n // 2])

    def direct_strehl(self, residual: PhaseScreen) -> float:
        focal = propagate_to_focus(apply_phase(self.aperture, residual.values), self.optics)
        return sensing.strehl_direct(power_map(focal), self.ideal_peak)


def closed_loop_run(screen: PhaseScreen, recon: Reconstructor,
                    optics: OpticalConfig, gain: float = 0.5,
                    n_iter: int = 20) -> list[tuple[ActuatorCommand, float]]:
    """Integrator loop u <- clamp(u - gain * C * slopes(residual)).

    Returns the per-iteration (command, direct Strehl) trajectory; the final
    entry is the closed-loop benchmark value for this screen.
    """
    if not 0 < gain <= 1:
        raise ConfigurationError("gain must lie in (0, 1]")
    if n_iter < 1:
        raise ConfigurationError("need at least one iteration")
    loop_optics = _LoopOptics(optics)
    grid = optics.pupil_sampling
    u = np.zeros(dm_mod.N_ACTUATORS)
    trajectory = []
    for _ in range(n_iter):
        surface = dm_mod.surface_from_command(ActuatorCommand(u), recon.dm_cfg, grid)
        residual = screen + dm_mod.phase_from_surface(surface, optics.wavelength, grid)
        slopes = measure_slopes(residual, recon.geometry)
        u = clamp_command(u - gain * (recon.control_matrix @ slopes)).values
        surface = dm_mod.surface_from_command(ActuatorCommand(u), recon.dm_cfg, grid)
        residual = screen + dm_mod.phase_from_surface(surface, optics.wavelength, grid)
        trajectory.append((ActuatorCommand(u.copy()), loop_optics.direct_strehl(residual)))
    return trajectory


def export_matrix_csv(path, matrix: np.ndarray) -> None:
    """Plain CSV dump (row = slope index, column = actuator index)."""
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")
