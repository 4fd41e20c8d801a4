"""64-actuator deformable mirror: command vector to surface to phase.

The mirror is an 8x8 square of actuators at pitch D/8 (corner actuators
fall just outside the circular pupil but stay active so the action space is
exactly 64-dimensional).  The default face-sheet model sums unit-peak
Gaussian influence functions; a piston-segment mode is available for
comparison.  Commands are dimensionless in [-1, 1] and scale to the
physical stroke limit (surface meters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optics import ConfigurationError, SamplingGrid
from .turbulence import PhaseScreen

ACTUATORS_PER_SIDE = 8
N_ACTUATORS = ACTUATORS_PER_SIDE ** 2


@dataclass(frozen=True)
class DMConfig:
    """Geometry and stroke of the deformable mirror.

    Args:
        pitch: actuator spacing in meters (aperture diameter / 8).
        stroke_limit: surface displacement in meters for a command of 1.
        influence_sigma: Gaussian influence width in meters; the default
            0.7 * pitch gives ~36% inter-actuator surface coupling, in the
            usual range for continuous face-sheet mirrors and close to the
            best smooth-aberration fit for this actuator count.
        segmented: piston-segment influence instead of Gaussian.
    """

    pitch: float = 0.5 / ACTUATORS_PER_SIDE
    stroke_limit: float = 1e-6
    influence_sigma: float = 0.7 * 0.5 / ACTUATORS_PER_SIDE
    segmented: bool = False

    def __post_init__(self):
        if not self.stroke_limit > 0:
            raise ConfigurationError("stroke_limit must be positive")
        if not self.pitch > 0:
            raise ConfigurationError("pitch must be positive")
        if not self.influence_sigma > 0:
            raise ConfigurationError("influence_sigma must be positive")


@dataclass(frozen=True)
class ActuatorCommand:
    """64 actuator positions in normalized units, clamped to [-1, 1]."""

    values: np.ndarray
    had_nan: bool = False

    def __post_init__(self):
        if self.values.shape != (N_ACTUATORS,):
            raise ConfigurationError(
                f"command must have {N_ACTUATORS} entries, got {self.values.shape}")


def zero_command() -> ActuatorCommand:
    return ActuatorCommand(np.zeros(N_ACTUATORS))


def clamp_command(raw: np.ndarray) -> ActuatorCommand:
    """Elementwise clamp to [-1, 1]; NaNs become 0 and are flagged."""
    raw = np.asarray(raw, dtype=float).reshape(N_ACTUATORS)
    nan_mask = np.isnan(raw)
    values = np.where(nan_mask, 0.0, raw)
    values = np.clip(values, -1.0, 1.0)
    return ActuatorCommand(values, had_nan=bool(nan_mask.any()))


def actuator_positions(cfg: DMConfig) -> np.ndarray:
    """(64, 2) array of (y, x) actuator centers, row-major over the 8x8 grid."""
    idx = np.arange(ACTUATORS_PER_SIDE) - (ACTUATORS_PER_SIDE - 1) / 2.0
    yy, xx = np.meshgrid(idx, idx, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1) * cfg.pitch


_basis_cache: dict = {}


def influence_basis(cfg: DMConfig, grid: SamplingGrid) -> np.ndarray:
    """(64, n, n) unit-peak surface response of each actuator."""
    key = (cfg.pitch, cfg.influence_sigma, cfg.segmented, grid.n_samples, grid.extent)
    basis = _basis_cache.get(key)
    if basis is not None:
        return basis
    yy, xx = grid.mesh()
    pos = actuator_positions(cfg)
    if cfg.segmented:
        half = cfg.pitch / 2
        basis = np.stack([
            ((np.abs(yy - py) <= half) & (np.abs(xx - px) <= half)).astype(float)
            for py, px in pos])
    else:
        s2 = 2.0 * cfg.influence_sigma ** 2
        basis = np.stack([
            np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / s2) for py, px in pos])
    basis.setflags(write=False)
    _basis_cache[key] = basis
    return basis


def surface_from_command(cmd: ActuatorCommand, cfg: DMConfig,
                         grid: SamplingGrid) -> np.ndarray:
    """Mirror surface in meters: sum of command-weighted influence functions."""
    basis = influence_basis(cfg, grid)
    n = grid.n_samples
    return (cmd.values @ basis.reshape(N_ACTUATORS, -1)).reshape(n, n) * cfg.stroke_limit


def phase_from_surface(surface: np.ndarray, wavelength: float,
                       grid: SamplingGrid) -> PhaseScreen:
    """Reflection phase of a mirror surface: 2 * (2*pi/lambda) * surface."""
    if not wavelength > 0:
        raise ConfigurationError("wavelength must be positive")
    return PhaseScreen(grid, 2.0 * (2.0 * np.pi / wavelength) * surface)


def phase_gain(cfg: DMConfig, wavelength: float) -> float:
    """Peak phase in radians produced by a unit command on one actuator."""
    return 2.0 * (2.0 * np.pi / wavelength) * cfg.stroke_limit


def phase_basis(cfg: DMConfig, grid: SamplingGrid, wavelength: float,
                mask: np.ndarray) -> np.ndarray:
    """(64, n_mask) phase response of each actuator inside the aperture mask."""
    basis = influence_basis(cfg, grid)
    flat = basis.reshape(N_ACTUATORS, -1)[:, mask.ravel()]
    return flat * phase_gain(cfg, wavelength)


def least_squares_projection(screen: PhaseScreen, cfg: DMConfig,
                             wavelength: float, mask: np.ndarray) -> ActuatorCommand:
    """Best-fit command canceling a screen over the aperture, then clamped.

    Solves the piston-free normal equations for min var(screen + dm_phase)
    restricted to masked pixels; this is the mirror's fitting-error ceiling
    and serves as the reference command for learned policies.
    """
    b = phase_basis(cfg, grid=screen.grid, wavelength=wavelength, mask=mask)
    b = b - b.mean(axis=1, keepdims=True)
    phi = screen.values[mask]
    phi = phi - phi.mean()
    gram = b @ b.T
    ridge = 1e-12 * np.trace(gram) / N_ACTUATORS
    raw = np.linalg.solve(gram + ridge * np.eye(N_ACTUATORS), -b @ phi)
    return clamp_command(raw)
