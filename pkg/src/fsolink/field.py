"""Complex field grids, scalar diffraction, apertures and power accounting.

The receiver-plane wavefront is carried on a square N x N grid of complex
amplitudes in sqrt(W)/m units, so the total optical power is the discrete
integral of |samples|^2.  Propagation uses the band-limited angular-spectrum
transfer function, which is exact scalar diffraction for fields that satisfy
the grid's anti-aliasing bound.
"""

import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .errors import DimensionError, InvalidFieldError, ParameterError

__all__ = [
    "GridSpec",
    "ComplexFieldGrid",
    "angular_spectrum_propagate",
    "apply_phase_screen",
    "apply_aperture",
    "total_power",
    "plane_wave",
    "gaussian_field",
    "uniform_disc_field",
    "write_field_bin",
    "read_field_bin",
    "write_field_csv",
]

_GEOMETRY_RTOL = 1e-9


def _check_grid_n(n: int) -> None:
    if n < 64 or (n & (n - 1)) != 0:
        raise ParameterError(f"grid size must be a power of two >= 64, got {n}")


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a sampling grid: N points spanning extent_m per side."""

    n: int
    extent_m: float
    wavelength_m: float = 1.55e-6

    def __post_init__(self):
        _check_grid_n(self.n)
        if self.extent_m <= 0:
            raise ParameterError("extent_m must be positive")
        if self.wavelength_m <= 0:
            raise ParameterError("wavelength_m must be positive")

    @property
    def spacing_m(self) -> float:
        return self.extent_m / self.n

    def coords(self) -> np.ndarray:
        """Centered pixel coordinates; index n//2 sits exactly at 0."""
        return (np.arange(self.n) - self.n // 2) * self.spacing_m

    def radius_grid(self) -> np.ndarray:
        x = self.coords()
        return np.hypot(x[:, None], x[None, :])


@dataclass(frozen=True)
class ComplexFieldGrid:
    """Sampled complex optical field with physical extent and wavelength.

    samples are complex amplitudes in sqrt(W)/m; row index is y, column
    index is x, both centered with pixel N//2 at the optical axis.  The
    constructor takes ownership of the samples array and marks it
    read-only; pass a copy to keep a writable reference.
    """

    samples: np.ndarray
    extent_m: float
    wavelength_m: float

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] == 0:
            raise DimensionError(f"samples must be square and non-empty, got {s.shape}")
        _check_grid_n(s.shape[0])
        if self.extent_m <= 0:
            raise ParameterError("extent_m must be positive")
        if self.wavelength_m <= 0:
            raise ParameterError("wavelength_m must be positive")
        if s.dtype != np.complex128:
            object.__setattr__(self, "samples", s.astype(np.complex128))
        self.samples.setflags(write=False)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def spacing_m(self) -> float:
        return self.extent_m / self.n

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n, self.extent_m, self.wavelength_m)

    def with_samples(self, samples: np.ndarray) -> "ComplexFieldGrid":
        return ComplexFieldGrid(samples, self.extent_m, self.wavelength_m)


def _require_finite(field: ComplexFieldGrid) -> None:
    if not np.all(np.isfinite(field.samples)):
        raise InvalidFieldError("field contains non-finite samples")


def _require_same_geometry(n_a, spacing_a, n_b, spacing_b, what: str) -> None:
    if n_a != n_b:
        raise DimensionError(f"{what}: grid sizes differ ({n_a} vs {n_b})")
    if abs(spacing_a - spacing_b) > _GEOMETRY_RTOL * max(spacing_a, spacing_b):
        raise DimensionError(f"{what}: grid spacings differ ({spacing_a} vs {spacing_b})")


def total_power(field: ComplexFieldGrid) -> float:
    """Total optical power in watts: sum |samples|^2 * dx^2."""
    _require_finite(field)
    dx = field.spacing_m
    return float(np.sum(np.abs(field.samples) ** 2) * dx * dx)


def _edge_absorber(n: int, width_frac: float = 0.08) -> np.ndarray:
    """Raised-cosine window rolling off over the outer width_frac of the grid."""
    w = max(2, int(round(n * width_frac)))
    taper = 0.5 * (1 + np.cos(np.linspace(0, np.pi, w)))
    line = np.ones(n)
    line[-w:] = taper
    line[:w] = taper[::-1]
    return line[:, None] * line[None, :]


def angular_spectrum_propagate(
    field: ComplexFieldGrid,
    distance_m: float,
    absorb_edges: bool = False,
) -> ComplexFieldGrid:
    """Diffract a field over distance_m with the angular-spectrum method.

    The transfer function is H = exp(i 2 pi d sqrt(1/lambda^2 - fx^2 - fy^2))
    with evanescent components zeroed and the Matsushima band limit applied,
    so the propagator is unitary on all content it keeps.  Sampling must
    satisfy dx^2 >= lambda * d / N; a violation is allowed but warned about,
    because the band limit then clips in-band spatial frequencies.

    Args:
        field: input field.
        distance_m: propagation distance, >= 0.
        absorb_edges: multiply the input by a raised-cosine edge window
            first.  Intended for long multi-step paths; breaks exact power
            conservation by design.

    Returns:
        The propagated field on the same grid.
    """
    _require_finite(field)
    if distance_m < 0:
        raise ParameterError("distance_m must be >= 0")
    if distance_m == 0 and not absorb_edges:
        return field

    n = field.n
    dx = field.spacing_m
    lam = field.wavelength_m

    if distance_m > 0 and dx * dx < lam * distance_m / n:
        warnings.warn(
            f"angular-spectrum sampling bound violated: dx^2={dx * dx:.3e} < "
            f"lambda*d/N={lam * distance_m / n:.3e}; band limit will clip "
            "in-band frequencies",
            RuntimeWarning,
            stacklevel=2,
        )

    u = field.samples
    if absorb_edges:
        u = u * _edge_absorber(n)
    if distance_m == 0:
        return field.with_samples(u)

    f = np.fft.fftfreq(n, d=dx)
    fx2 = f[None, :] ** 2
    fy2 = f[:, None] ** 2
    kz_sq = 1.0 / lam**2 - fx2 - fy2
    propagating = kz_sq > 0

    h = np.zeros((n, n), dtype=np.complex128)
    h[propagating] = np.exp(1j * 2 * np.pi * distance_m * np.sqrt(kz_sq[propagating]))

    # Matsushima band limit: beyond f_lim the kernel phase is undersampled.
    df = 1.0 / (n * dx)
    f_lim = 1.0 / (lam * np.sqrt((2.0 * distance_m * df) ** 2 + 1.0))
    over = np.abs(f) > f_lim
    h[:, over] = 0.0
    h[over, :] = 0.0

    spectrum = _fft.fft2(np.fft.ifftshift(u))
    out = np.fft.fftshift(_fft.ifft2(spectrum * h))
    return field.with_samples(out)


def apply_phase_screen(field: ComplexFieldGrid, screen) -> ComplexFieldGrid:
    """Multiply the field pointwise by exp(i * screen.phase).

    Magnitudes are untouched, so total power is exactly preserved.
    """
    phase = np.asarray(screen.phase, dtype=np.float64)
    _require_same_geometry(
        field.n, field.spacing_m, phase.shape[0], screen.spacing_m, "apply_phase_screen"
    )
    return field.with_samples(field.samples * np.exp(1j * phase))


def apply_aperture(field: ComplexFieldGrid, diameter_m: float) -> ComplexFieldGrid:
    """Zero all samples outside the centered circular aperture."""
    if diameter_m <= 0:
        raise ParameterError("aperture diameter must be positive")
    if diameter_m > field.extent_m:
        raise ParameterError(
            f"aperture diameter {diameter_m} exceeds grid extent {field.extent_m}"
        )
    r = field.grid.radius_grid()
    return field.with_samples(np.where(r <= diameter_m / 2, field.samples, 0.0))


def plane_wave(grid: GridSpec, amplitude: float = 1.0) -> ComplexFieldGrid:
    """Uniform unit-phase field over the whole grid."""
    s = np.full((grid.n, grid.n), amplitude, dtype=np.complex128)
    return ComplexFieldGrid(s, grid.extent_m, grid.wavelength_m)


def gaussian_field(grid: GridSpec, waist_m: float, power_w: float = 1.0) -> ComplexFieldGrid:
    """Collimated Gaussian beam, exp(-r^2/w^2) amplitude, normalized on the grid."""
    if waist_m <= 0:
        raise ParameterError("waist_m must be positive")
    r = grid.radius_grid()
    s = np.exp(-(r**2) / waist_m**2).astype(np.complex128)
    norm = np.sum(np.abs(s) ** 2) * grid.spacing_m**2
    return ComplexFieldGrid(s * np.sqrt(power_w / norm), grid.extent_m, grid.wavelength_m)


def uniform_disc_field(grid: GridSpec, diameter_m: float, power_w: float = 1.0) -> ComplexFieldGrid:
    """Top-hat disc of the given diameter, normalized to power_w on the grid."""
    f = apply_aperture(plane_wave(grid), diameter_m)
    p = total_power(f)
    return f.with_samples(f.samples * np.sqrt(power_w / p))


# --- on-disk snapshot formats -------------------------------------------------

_BIN_HEADER = struct.Struct("<Qdd")  # N, extent_m, wavelength_m


def write_field_bin(field: ComplexFieldGrid, path) -> None:
    """Write a field as a little-endian binary block.

    Layout: uint64 N, float64 extent_m, float64 wavelength_m, then N*N
    row-major interleaved (re, im) float64 pairs.
    """
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(field.n, field.extent_m, field.wavelength_m))
        inter = np.empty((field.n, field.n, 2), dtype="<f8")
        inter[..., 0] = field.samples.real
        inter[..., 1] = field.samples.imag
        fh.write(inter.tobytes())


def read_field_bin(path) -> ComplexFieldGrid:
    with open(path, "rb") as fh:
        n, extent_m, wavelength_m = _BIN_HEADER.unpack(fh.read(_BIN_HEADER.size))
        raw = np.frombuffer(fh.read(), dtype="<f8").reshape(n, n, 2)
    return ComplexFieldGrid(raw[..., 0] + 1j * raw[..., 1], extent_m, wavelength_m)


def write_field_csv(field: ComplexFieldGrid, path) -> None:
    """Write a field as CSV rows: row, col, re, im."""
    with open(path, "w", newline="") as fh:
        fh.write("row,col,re,im\n")
        for i in range(field.n):
            row = field.samples[i]
            for j in range(field.n):
                fh.write(f"{i},{j},{row[j].real:.17g},{row[j].imag:.17g}\n")
