"""Static atmospheric phase screens with von Karman statistics.

Screens are produced by Fourier filtering of seeded white noise through the
phase power spectrum

    PSD(f) = 0.023 * r0^(-5/3) * (f^2 + 1/L0^2)^(-11/6)

with f in cycles per meter, plus three levels of subharmonic augmentation to
restore the low-order (tip/tilt) power that the periodic FFT grid cannot
carry.  The spectrum is sampled over a grid four times larger than the
requested pupil and cropped, which removes the structure-function bias that
a pupil-sized periodic screen would show at separations comparable to the
aperture.  Cells adjacent to the spectral origin (where the spectrum is
steep) use a 3x3 Gauss-Legendre cell average of the PSD instead of the
center value.

Randomness comes from the Philox counter-based generator keyed directly by
the 64-bit seed, with a fixed draw order (main grid first, then subharmonic
levels inside-out), so screens are bit-reproducible across platforms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .optics import ConfigurationError, InputError, PlaneKind, SamplingGrid

#: Kolmogorov structure-function coefficient: D(r) = 6.88 (r/r0)^(5/3).
KOLMOGOROV_COEFF = 6.88

_GQ_NODES = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
_GQ_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


@dataclass(frozen=True)
class TurbulenceConfig:
    """Strength and reproducibility knobs for one turbulence realization.

    Args:
        fried_parameter: coherence length r0 in meters; smaller is stronger.
        outer_scale: von Karman outer scale L0 in meters; ``inf`` gives pure
            Kolmogorov (the spectrum is then formally divergent at f=0, but
            the sampled band is finite so screens stay well defined).
        seed: 64-bit seed; screens are a pure function of (grid, config).
    """

    fried_parameter: float
    outer_scale: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if not self.fried_parameter > 0:
            raise ConfigurationError("fried_parameter must be positive")
        if not self.outer_scale > 0:
            raise ConfigurationError("outer_scale must be positive (use inf for none)")


@dataclass(frozen=True)
class PhaseScreen:
    """Real-valued phase map in radians on a pupil grid."""

    grid: SamplingGrid
    values: np.ndarray

    def __post_init__(self):
        n = self.grid.n_samples
        if self.values.shape != (n, n):
            raise ConfigurationError(
                f"values shape {self.values.shape} does not match grid {n}x{n}")
        if not np.all(np.isfinite(self.values)):
            raise InputError("phase screen contains non-finite values")

    def __add__(self, other: "PhaseScreen") -> "PhaseScreen":
        if other.grid != self.grid:
            raise ConfigurationError("cannot add screens on different grids")
        return PhaseScreen(self.grid, self.values + other.values)

    def scaled(self, factor: float) -> "PhaseScreen":
        return PhaseScreen(self.grid, self.values * factor)


def _psd(f2: np.ndarray | float, r0: float, outer_scale: float):
    f0_sq = 0.0 if np.isinf(outer_scale) else 1.0 / outer_scale ** 2
    return 0.023 * r0 ** (-5.0 / 3.0) * (f2 + f0_sq) ** (-11.0 / 6.0)


def _cell_rms_psd(fy: float, fx: float, cell: float, r0: float, outer_scale: float) -> float:
    """sqrt of the PSD averaged over a spectral cell (3x3 Gauss-Legendre)."""
    total = 0.0
    for a, wa in zip(_GQ_NODES, _GQ_WEIGHTS):
        for b, wb in zip(_GQ_NODES, _GQ_WEIGHTS):
            gy = fy + 0.5 * cell * a
            gx = fx + 0.5 * cell * b
            total += wa * wb * _psd(gy * gy + gx * gx, r0, outer_scale)
    return np.sqrt(total / 4.0)


def generate_screen(grid: SamplingGrid, cfg: TurbulenceConfig,
                    aperture_diameter: float | None = None,
                    oversize: int = 4, subharmonics: int = 3) -> PhaseScreen:
    """One seeded realization of a von Karman phase screen.

    Piston (mean phase) is removed over the circular aperture when
    ``aperture_diameter`` is given, otherwise over the whole grid.

    Args:
        grid: pupil grid the screen is returned on.
        cfg: turbulence strength and seed.
        aperture_diameter: disc over which piston is removed, meters.
        oversize: linear factor of the internal generation grid.
        subharmonics: number of low-frequency refinement levels.
    """
    if grid.plane_kind is not PlaneKind.PUPIL:
        raise ConfigurationError("phase screens live on pupil grids")
    r0, L0 = cfg.fried_parameter, cfg.outer_scale
    n_out = grid.n_samples
    n = n_out * oversize
    dx = grid.step
    rng = np.random.default_rng(np.random.Philox(key=cfg.seed))

    df = 1.0 / (n * dx)
    f = (np.arange(n) - n // 2) * df
    fy, fx = np.meshgrid(f, f, indexing="ij")
    amp = np.sqrt(_psd(fy ** 2 + fx ** 2, r0, L0))
    amp[n // 2, n // 2] = 0.0
    # steep spectrum near the origin: use cell averages for the 5x5 core
    for i in range(-2, 3):
        for j in range(-2, 3):
            if i == 0 and j == 0:
                continue
            amp[n // 2 + i, n // 2 + j] = _cell_rms_psd(i * df, j * df, df, r0, L0)

    noise = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    spectrum = noise * amp * df
    big = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(spectrum))).real * (n * n)
    lo = n // 2 - n_out // 2
    phase = big[lo:lo + n_out, lo:lo + n_out].copy()

    yy, xx = grid.mesh()
    for level in range(1, subharmonics + 1):
        dfp = df / 3.0 ** level
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                if i == 0 and j == 0:
                    continue
                mode_amp = _cell_rms_psd(i * dfp, j * dfp, dfp, r0, L0)
                c = (rng.normal() + 1j * rng.normal()) * mode_amp * dfp
                phase += (c * np.exp(2j * np.pi * (i * dfp * yy + j * dfp * xx))).real

    if aperture_diameter is not None:
        mask = grid.radius() <= aperture_diameter / 2
        phase -= phase[mask].mean()
    else:
        phase -= phase.mean()
    return PhaseScreen(grid, phase)


def structure_function(screens: list[PhaseScreen], separations: list[float],
                       aperture_diameter: float) -> list[float]:
    """Mean squared phase increment per separation, averaged over screens.

    Both grid axes contribute; only pixel pairs lying entirely inside the
    aperture are used.  Separations are rounded to whole pixels.  Ensemble
    estimates of turbulence statistics need on the order of 50+ screens;
    single screens are fine for analytic cases (ramps, constants).
    """
    if not screens:
        raise InputError("structure_function needs at least one screen")
    grid = screens[0].grid
    inside = grid.radius() <= aperture_diameter / 2
    out = []
    for sep in separations:
        k = int(round(sep / grid.step))
        if k < 1 or k >= grid.n_samples:
            raise InputError(f"separation {sep} is outside the resolvable range")
        total, count = 0.0, 0
        for screen in screens:
            v = screen.values
            d = v[k:, :] - v[:-k, :]
            m = inside[k:, :] & inside[:-k, :]
            total += float((d[m] ** 2).sum())
            count += int(m.sum())
            d = v[:, k:] - v[:, :-k]
            m = inside[:, k:] & inside[:, :-k]
            total += float((d[m] ** 2).sum())
            count += int(m.sum())
        out.append(total / count)
    return out


_MAGIC = b"AOPS"


def save_screen(path, screen: PhaseScreen) -> None:
    """Flat binary screen file: 16-byte header then row-major f64 radians.

    Header: magic ``AOPS``, u32 ``n_samples``, f64 ``extent`` in meters,
    all little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", screen.grid.n_samples))
        fh.write(struct.pack("<d", screen.grid.extent))
        fh.write(screen.values.astype("<f8").tobytes())


def load_screen(path) -> PhaseScreen:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise InputError(f"bad screen file magic: {magic!r}")
        n = struct.unpack("<I", fh.read(4))[0]
        extent = struct.unpack("<d", fh.read(8))[0]
        values = np.frombuffer(fh.read(n * n * 8), dtype="<f8").reshape(n, n).copy()
    return PhaseScreen(SamplingGrid(n, extent, PlaneKind.PUPIL), values)


def derive_seed(base_seed: int, index: int) -> int:
    """Stable per-episode/per-trial seed derivation (splitmix64 mix)."""
    z = (base_seed + (index + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)
