"""Hermite-Gauss mode basis, field decomposition and fiber coupling.

The receiver basis is the 15 lowest HG modes (groups m+n <= 4) with a common
waist sized so the highest-order group fits the collection aperture.  All
inner products are grid quadratures; modes are unit-power on their grid, so
squared projection magnitudes are watts directly.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_hermite

from .errors import DimensionError, ParameterError, ZeroPowerError
from .field import ComplexFieldGrid, GridSpec, gaussian_field, total_power

__all__ = [
    "MODE_ORDER",
    "mode_name",
    "modes_up_to_group",
    "hg_mode_field",
    "fit_basis_waist",
    "ModeBasis",
    "ModeCoefficients",
    "decompose",
    "smf_coupling_efficiency",
    "optimize_smf_waist",
    "ModeStatistics",
    "mode_statistics",
]

# Mode ordering by group m+n, ascending m inside a group: 00, 01, 10, 02, ...
MODE_ORDER = tuple(
    (m, g - m) for g in range(5) for m in range(g + 1)
)


def mode_name(index_pair) -> str:
    m, n = index_pair
    return f"HG{m}{n}"


def modes_up_to_group(max_group_exclusive: int) -> tuple:
    """Modes with m+n < max_group_exclusive; 2 -> 3 modes, 5 -> all 15."""
    return tuple((m, n) for (m, n) in MODE_ORDER if m + n < max_group_exclusive)


def hg_mode_field(m: int, n: int, waist_m: float, grid: GridSpec) -> ComplexFieldGrid:
    """Sampled HG_mn mode (physicists' Hermite polynomials), unit grid power.

    The mode is real up to a global phase; m indexes x (columns), n indexes
    y (rows).
    """
    if m < 0 or n < 0:
        raise ParameterError("mode orders must be >= 0")
    if waist_m <= 0:
        raise ParameterError("waist_m must be positive")
    if waist_m < 4 * grid.spacing_m:
        raise ParameterError(
            f"waist {waist_m} not resolvable on spacing {grid.spacing_m} (need >= 4 samples)"
        )
    radius = waist_m * math.sqrt(m + n + 1)
    if 2 * radius > grid.extent_m:
        raise ParameterError(
            f"mode group {m + n} spills beyond the grid: 1/e^2 radius {radius} vs "
            f"extent {grid.extent_m}"
        )
    x = grid.coords()
    gx = eval_hermite(m, np.sqrt(2.0) * x / waist_m) * np.exp(-(x**2) / waist_m**2)
    gy = eval_hermite(n, np.sqrt(2.0) * x / waist_m) * np.exp(-(x**2) / waist_m**2)
    s = np.outer(gy, gx).astype(np.complex128)
    norm = math.sqrt(np.sum(np.abs(s) ** 2) * grid.spacing_m**2)
    return ComplexFieldGrid(s / norm, grid.extent_m, grid.wavelength_m)


def fit_basis_waist(aperture_diameter_m: float, max_group: int = 4) -> float:
    """Common waist such that the highest group's 1/e^2 radius is D/2.

    The intensity radius of group g scales as w sqrt(g+1), so
    w = (D/2) / sqrt(max_group + 1).
    """
    if aperture_diameter_m <= 0:
        raise ParameterError("aperture diameter must be positive")
    if max_group < 0:
        raise ParameterError("max_group must be >= 0")
    return (aperture_diameter_m / 2) / math.sqrt(max_group + 1)


@dataclass(frozen=True)
class ModeBasis:
    """Ordered, grid-sampled HG basis with a common waist."""

    indices: tuple
    waist_m: float
    grid: GridSpec
    sampled: np.ndarray  # (K, N, N) complex, unit power each

    def __post_init__(self):
        self.sampled.setflags(write=False)

    @classmethod
    def build(cls, grid: GridSpec, waist_m: float = None, indices=MODE_ORDER,
              aperture_diameter_m: float = None) -> "ModeBasis":
        """Sample a basis; waist defaults to the aperture-fit rule."""
        indices = tuple(indices)
        if waist_m is None:
            if aperture_diameter_m is None:
                raise ParameterError("give either waist_m or aperture_diameter_m")
            max_group = max(m + n for m, n in indices)
            waist_m = fit_basis_waist(aperture_diameter_m, max_group)
        modes = np.stack(
            [hg_mode_field(m, n, waist_m, grid).samples for m, n in indices]
        )
        return cls(indices=indices, waist_m=waist_m, grid=grid, sampled=modes)

    @property
    def size(self) -> int:
        return len(self.indices)

    def names(self) -> list:
        return [mode_name(mn) for mn in self.indices]

    def gram(self) -> np.ndarray:
        """Grid-quadrature Gram matrix; identity for a well-sampled basis."""
        flat = self.sampled.reshape(self.size, -1)
        return (flat.conj() @ flat.T) * self.grid.spacing_m**2

    def subset(self, n_modes: int) -> "ModeBasis":
        if not 0 < n_modes <= self.size:
            raise ParameterError(f"n_modes must be in 1..{self.size}")
        return ModeBasis(self.indices[:n_modes], self.waist_m, self.grid,
                         self.sampled[:n_modes])


@dataclass(frozen=True)
class ModeCoefficients:
    """Complex projection of one field onto a basis, plus unprojected power."""

    coeffs: np.ndarray  # (K,) complex, sqrt(W)
    residual_power: float  # W not captured by the basis

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128, copy=True)
        object.__setattr__(self, "coeffs", c)
        c.setflags(write=False)

    @property
    def mode_power(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2

    @property
    def total_power(self) -> float:
        return float(self.mode_power.sum() + self.residual_power)

    def fractions(self) -> np.ndarray:
        """Per-mode power fractions of the total field power."""
        return self.mode_power / self.total_power


def decompose(field: ComplexFieldGrid, basis: ModeBasis) -> ModeCoefficients:
    """Project a field on the basis by grid quadrature.

    residual_power is the field power outside the basis span and can only
    be negative by quadrature round-off (Bessel's inequality).
    """
    if field.n != basis.grid.n or not math.isclose(
        field.spacing_m, basis.grid.spacing_m, rel_tol=1e-9
    ):
        raise DimensionError("field and basis grids differ")
    dx2 = field.spacing_m**2
    coeffs = np.einsum("kij,ij->k", basis.sampled.conj(), field.samples) * dx2
    residual = total_power(field) - float(np.sum(np.abs(coeffs) ** 2))
    return ModeCoefficients(coeffs=coeffs, residual_power=residual)


def smf_coupling_efficiency(field: ComplexFieldGrid, smf_waist_m: float) -> float:
    """Fraction of field power coupled into a Gaussian fiber mode.

    The fiber is represented by its backpropagated fundamental mode in the
    field plane (ideal afocal relay): eta = |<g, f>|^2 / P_f with g the unit
    power Gaussian of the given waist.
    """
    p = total_power(field)
    if p <= 0:
        raise ZeroPowerError("coupling efficiency undefined for a zero-power field")
    g = gaussian_field(field.grid, smf_waist_m)
    overlap = np.vdot(g.samples, field.samples) * field.spacing_m**2
    return float(np.abs(overlap) ** 2 / p)


def optimize_smf_waist(aperture_field: ComplexFieldGrid, n_coarse: int = 48) -> tuple:
    """Waist maximizing the fiber coupling efficiency, with that efficiency.

    Coarse log-spaced scan over feasible waists followed by golden-section
    refinement of the best bracket.  Returns (waist_m, efficiency).
    """
    if total_power(aperture_field) <= 0:
        raise ZeroPowerError("cannot optimize the fiber waist of a zero-power field")
    lo = 4 * aperture_field.spacing_m
    hi = aperture_field.extent_m / 2
    waists = np.geomspace(lo, hi, n_coarse)
    effs = [smf_coupling_efficiency(aperture_field, w) for w in waists]
    k = int(np.argmax(effs))
    a = waists[max(k - 1, 0)]
    b = waists[min(k + 1, n_coarse - 1)]

    invphi = (math.sqrt(5.0) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc = smf_coupling_efficiency(aperture_field, c)
    fd = smf_coupling_efficiency(aperture_field, d)
    for _ in range(60):
        if b - a < 1e-6 * b:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = smf_coupling_efficiency(aperture_field, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = smf_coupling_efficiency(aperture_field, d)
    w_best = (a + b) / 2
    return float(w_best), smf_coupling_efficiency(aperture_field, w_best)


@dataclass(frozen=True)
class ModeStatistics:
    """Time-averaged relative mode powers over a coefficient series."""

    indices: tuple
    mean_fraction: np.ndarray  # per mode, fractions of total field power
    residual_fraction: float
    n_frames: int

    def group_fractions(self) -> dict:
        """Summed mean fraction per mode group m+n."""
        out = {}
        for (m, n), frac in zip(self.indices, self.mean_fraction):
            out[m + n] = out.get(m + n, 0.0) + float(frac)
        return out

    def captured_fraction(self, n_modes: int = None) -> float:
        """Mean fraction captured by the first n_modes basis modes."""
        n = len(self.indices) if n_modes is None else n_modes
        return float(np.sum(self.mean_fraction[:n]))


def mode_statistics(series, indices=MODE_ORDER) -> ModeStatistics:
    """Average per-frame relative mode powers; sums to 1 with the residual."""
    fractions = []
    residuals = []
    for mc in series:
        total = mc.total_power
        fractions.append(mc.mode_power / total)
        residuals.append(mc.residual_power / total)
    if not fractions:
        raise ParameterError("mode_statistics needs a non-empty series")
    return ModeStatistics(
        indices=tuple(indices),
        mean_fraction=np.mean(fractions, axis=0),
        residual_fraction=float(np.mean(residuals)),
        n_frames=len(fractions),
    )
