"""Sampled complex optical fields and far-field (Fraunhofer) propagation.

Conventions used throughout the package:

* Arrays are indexed ``[iy, ix]``; physical coordinates are
  ``y = (iy - n//2) * step`` and ``x = (ix - n//2) * step``, so the optical
  axis sits at sample index ``(n//2, n//2)``.
* Pupil-plane grids measure their extent in meters.  Focal-plane grids
  measure it in diffraction widths (units of lambda*f/D); the effective
  focal length is folded into that scaling, so no physical ``f`` appears
  anywhere.
* Total power of a field is ``sum(|amplitude|^2) * cell_area``, with the
  cell area taken in the grid's own units.  The focal transform conserves
  this quantity (see :func:`propagate_to_focus`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class PlaneKind(Enum):
    PUPIL = "pupil"
    FOCAL = "focal"


class ConfigurationError(ValueError):
    """Invalid geometry or configuration parameters."""


class DimensionError(ValueError):
    """Operands defined on incompatible grids."""


class InputError(ValueError):
    """Rejected input values (non-finite data, empty collections)."""


@dataclass(frozen=True)
class SamplingGrid:
    """Square sampling grid for one optical plane.

    Args:
        n_samples: samples per side; at least 16 and even so the center
            convention (axis at index n/2) is exact.
        extent: full side length (meters for pupil planes, diffraction
            widths for focal planes).
        plane_kind: which plane this grid discretizes.
    """

    n_samples: int
    extent: float
    plane_kind: PlaneKind = PlaneKind.PUPIL

    def __post_init__(self):
        if self.n_samples < 16 or self.n_samples % 2 != 0:
            raise ConfigurationError(
                f"n_samples must be even and >= 16, got {self.n_samples}")
        if not self.extent > 0:
            raise ConfigurationError(f"extent must be positive, got {self.extent}")

    @property
    def step(self) -> float:
        return self.extent / self.n_samples

    @property
    def cell_area(self) -> float:
        return self.step ** 2

    def coords(self) -> np.ndarray:
        """1-D coordinates along either axis, zero at index n//2."""
        n = self.n_samples
        return (np.arange(n) - n // 2) * self.step

    def mesh(self):
        """(Y, X) coordinate arrays indexed [iy, ix]."""
        c = self.coords()
        return np.meshgrid(c, c, indexing="ij")

    def radius(self) -> np.ndarray:
        yy, xx = self.mesh()
        return np.hypot(yy, xx)


@dataclass(frozen=True)
class ScalarField:
    """Complex amplitude sampled on a grid; power is |amplitude|^2."""

    grid: SamplingGrid
    amplitude: np.ndarray

    def __post_init__(self):
        n = self.grid.n_samples
        if self.amplitude.shape != (n, n):
            raise DimensionError(
                f"amplitude shape {self.amplitude.shape} does not match grid {n}x{n}")

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.grid.cell_area)

    def with_amplitude(self, amplitude: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, amplitude)


def default_pupil_grid(aperture_diameter: float = 0.5,
                       n_samples: int = 128,
                       padding: float = 1.1) -> SamplingGrid:
    """Pupil grid with a little margin around the aperture."""
    return SamplingGrid(n_samples, padding * aperture_diameter, PlaneKind.PUPIL)


def default_focal_grid(n_samples: int = 64, extent_widths: float = 16.0) -> SamplingGrid:
    """Focal grid in diffraction-width units, centered on the axis."""
    return SamplingGrid(n_samples, extent_widths, PlaneKind.FOCAL)


def full_band_focal_grid(pupil_grid: SamplingGrid, aperture_diameter: float) -> SamplingGrid:
    """Focal grid that critically tiles the pupil sampling's full band.

    On this grid the far-field transform is exactly unitary (power is
    conserved for arbitrary fields, not just band-limited ones).
    """
    n = pupil_grid.n_samples
    return SamplingGrid(n, n * aperture_diameter / pupil_grid.extent, PlaneKind.FOCAL)


@dataclass(frozen=True)
class OpticalConfig:
    """Wavelength, aperture and sampling for the whole optical train."""

    wavelength: float = 1550e-9
    aperture_diameter: float = 0.5
    pupil_sampling: SamplingGrid = field(default_factory=default_pupil_grid)
    focal_sampling: SamplingGrid = field(default_factory=default_focal_grid)

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ConfigurationError("wavelength must be positive")
        if not self.aperture_diameter > 0:
            raise ConfigurationError("aperture diameter must be positive")
        if self.pupil_sampling.plane_kind is not PlaneKind.PUPIL:
            raise ConfigurationError("pupil_sampling must be a pupil grid")
        if self.focal_sampling.plane_kind is not PlaneKind.FOCAL:
            raise ConfigurationError("focal_sampling must be a focal grid")

    def with_focal(self, focal: SamplingGrid) -> "OpticalConfig":
        return replace(self, focal_sampling=focal)


def circular_aperture(grid: SamplingGrid, diameter: float) -> ScalarField:
    """Binary transmission mask, 1 where r <= diameter/2.

    Raises ConfigurationError if the aperture does not fit on the grid.
    """
    if diameter > grid.extent:
        raise ConfigurationError(
            f"aperture diameter {diameter} exceeds grid extent {grid.extent}")
    mask = (grid.radius() <= diameter / 2).astype(complex)
    return ScalarField(grid, mask)


def apply_phase(field: ScalarField, phase_values: np.ndarray) -> ScalarField:
    """Multiply a field by exp(i*phase); leaves the power map unchanged."""
    if phase_values.shape != field.amplitude.shape:
        raise DimensionError(
            f"phase shape {phase_values.shape} does not match field "
            f"{field.amplitude.shape}")
    return field.with_amplitude(field.amplitude * np.exp(1j * phase_values))


def power_map(field: ScalarField) -> np.ndarray:
    """Pointwise |amplitude|^2."""
    return np.abs(field.amplitude) ** 2


class _FocalTransform:
    """Matrix Fourier transform between one pupil grid and one focal grid.

    The kernel is A[p, j] = exp(-2*pi*i * eta_p * xi_j) with xi the pupil
    coordinate in aperture-diameter units and eta the focal coordinate in
    diffraction widths.  The scale factor makes the transform conserve
    total power exactly when the focal grid tiles the pupil's full
    frequency band, and for band-limited fields on any focal window.
    """

    def __init__(self, pupil: SamplingGrid, focal: SamplingGrid, diameter: float):
        xi = pupil.coords() / diameter
        eta = focal.coords()
        self.kernel = np.exp(-2j * np.pi * np.outer(eta, xi))
        self.scale = pupil.step ** 2 / diameter
        self.pupil = pupil
        self.focal = focal

    def forward(self, amplitude: np.ndarray) -> np.ndarray:
        return self.scale * (self.kernel @ amplitude @ self.kernel.T)


_transform_cache: dict = {}


def _get_transform(pupil: SamplingGrid, focal: SamplingGrid, diameter: float) -> _FocalTransform:
    key = (pupil.n_samples, pupil.extent, focal.n_samples, focal.extent, diameter)
    tr = _transform_cache.get(key)
    if tr is None:
        tr = _FocalTransform(pupil, focal, diameter)
        _transform_cache[key] = tr
    return tr


def propagate_to_focus(pupil_field: ScalarField, config: OpticalConfig) -> ScalarField:
    """Far-field amplitude of a pupil field on the configured focal grid.

    Focal coordinates are in diffraction widths (lambda*f/D), so the focal
    scale is explicit in the grid rather than hidden in a focal length.
    Power (sum |a|^2 * cell area) is conserved to machine precision on a
    full-band focal grid and to the window-truncation level otherwise.
    """
    amp = pupil_field.amplitude
    if not np.all(np.isfinite(amp)):
        raise InputError("pupil field contains non-finite values")
    tr = _get_transform(pupil_field.grid, config.focal_sampling, config.aperture_diameter)
    if pupil_field.grid is not tr.pupil and pupil_field.grid != tr.pupil:
        raise DimensionError("pupil field grid does not match configuration")
    return ScalarField(config.focal_sampling, tr.forward(amp))


def synthesize_band_limited(config: OpticalConfig, rng: np.random.Generator,
                            max_width: float = 5.0,
                            envelope_waist_fraction: float = 0.25) -> ScalarField:
    """Random pupil field whose focal energy sits well inside the focal window.

    A Gaussian-apodized pupil times a random tilt of at most ``max_width``
    diffraction widths; used to exercise power conservation on windowed
    focal grids where hard-edged fields would leak energy past the window.
    """
    grid = config.pupil_sampling
    yy, xx = grid.mesh()
    waist = envelope_waist_fraction * config.aperture_diameter
    envelope = np.exp(-(xx ** 2 + yy ** 2) / waist ** 2)
    tilt = rng.uniform(-max_width, max_width, size=2)
    carrier = np.exp(2j * np.pi * (tilt[0] * yy + tilt[1] * xx) / config.aperture_diameter)
    amp = (rng.normal() + 1j * rng.normal()) * envelope * carrier
    return ScalarField(grid, amp)


def write_pgm16(path, values: np.ndarray, sidecar: dict | None = None) -> None:
    """16-bit grayscale PGM (P5, maxval 65535) with linear scaling.

    The applied min/max are recorded in ``<path>.json`` together with any
    extra sidecar entries, so the original dynamic range is recoverable.
    """
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((values - lo) / span * 65535.0).astype(">u2")
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(scaled.tobytes())
    meta = {"min": lo, "max": hi, "rows": values.shape[0], "cols": values.shape[1]}
    if sidecar:
        meta.update(sidecar)
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_pgm16(path) -> tuple[np.ndarray, dict]:
    """Read a 16-bit PGM written by :func:`write_pgm16`, restoring the scale."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise InputError(f"not a P5 PGM: {magic!r}")
        dims = fh.readline().split()
        maxval = int(fh.readline())
        if maxval != 65535:
            raise InputError("expected 16-bit PGM")
        cols, rows = int(dims[0]), int(dims[1])
        raw = np.frombuffer(fh.read(rows * cols * 2), dtype=">u2").reshape(rows, cols)
    with open(str(path) + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    values = raw.astype(float) / 65535.0 * (meta["max"] - meta["min"]) + meta["min"]
    return values, meta
