"""Spectral coherence of two-path combining: delay mismatch and WDM links.

Two paths of a combiner only interfere constructively across a whole
spectrum while the differential delay tau keeps every line near a common
phase.  The phase actuator locks the spectral centroid; a line offset
dnu from the centroid then carries a residual error 2 pi dnu tau, and the
power-weighted efficiency is (1 + Re gamma(tau)) / 2 with gamma the
normalized spectral autocorrelation about the centroid.  For two equal
lines spaced dnu this is the classic fringe (1 + cos(pi dnu tau)) / 2:
half power at |dnu tau| = 1/2 and a null at |dnu tau| = 1.
"""

import math
from dataclasses import dataclass

import numpy as np

from .comms import ReceiverModel, ber_curve, power_penalty
from .errors import ParameterError, ScanRangeError

__all__ = [
    "C_VACUUM",
    "OpticalSpectrum",
    "two_path_efficiency",
    "per_line_efficiency",
    "VodlScan",
    "vodl_scan",
    "WdmLinkResult",
    "wdm_link_run",
]

C_VACUUM = 299792458.0


@dataclass(frozen=True)
class OpticalSpectrum:
    """Discrete lines or a rectangular band, with normalized weights."""

    lines_hz: np.ndarray = None
    weights: np.ndarray = None
    band_center_hz: float = None
    band_width_hz: float = None

    def __post_init__(self):
        if (self.lines_hz is None) == (self.band_center_hz is None):
            raise ParameterError("specify either discrete lines or a band, not both")
        if self.lines_hz is not None:
            lines = np.atleast_1d(np.asarray(self.lines_hz, dtype=np.float64))
            if np.any(lines <= 0):
                raise ParameterError("line frequencies must be positive")
            if self.weights is None:
                w = np.full(lines.size, 1.0 / lines.size)
            else:
                w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
                if w.shape != lines.shape:
                    raise ParameterError("weights must match lines")
                if np.any(w < 0) or w.sum() <= 0:
                    raise ParameterError("weights must be non-negative with positive sum")
                w = w / w.sum()
            object.__setattr__(self, "lines_hz", lines)
            object.__setattr__(self, "weights", w)
        else:
            if self.band_center_hz <= 0 or self.band_width_hz < 0:
                raise ParameterError("band needs positive center and non-negative width")
            if self.band_width_hz >= 2 * self.band_center_hz:
                raise ParameterError("band width exceeds physical range")

    @classmethod
    def monochromatic(cls, frequency_hz: float) -> "OpticalSpectrum":
        return cls(lines_hz=np.array([frequency_hz]))

    @classmethod
    def two_lines(cls, center_hz: float, spacing_hz: float, weights=None) -> "OpticalSpectrum":
        lines = np.array([center_hz - spacing_hz / 2, center_hz + spacing_hz / 2])
        return cls(lines_hz=lines, weights=weights)

    @classmethod
    def rectangular(cls, center_hz: float, width_hz: float) -> "OpticalSpectrum":
        return cls(band_center_hz=center_hz, band_width_hz=width_hz)

    @classmethod
    def rectangular_wavelength(cls, center_m: float, width_m: float) -> "OpticalSpectrum":
        """Rectangular band given as wavelength center/width (e.g. 16 nm at 1560 nm)."""
        center_hz = C_VACUUM / center_m
        width_hz = C_VACUUM * width_m / center_m**2
        return cls(band_center_hz=center_hz, band_width_hz=width_hz)

    @property
    def centroid_hz(self) -> float:
        if self.lines_hz is not None:
            return float(np.sum(self.lines_hz * self.weights))
        return self.band_center_hz

    def autocorrelation(self, delay_s: float) -> complex:
        """Normalized spectral autocorrelation about the centroid."""
        if self.lines_hz is not None:
            offsets = self.lines_hz - self.centroid_hz
            return complex(np.sum(self.weights * np.exp(2j * np.pi * offsets * delay_s)))
        x = self.band_width_hz * delay_s
        return complex(np.sinc(x))


def two_path_efficiency(spectrum: OpticalSpectrum, delay_s: float) -> float:
    """Combining efficiency of two equal paths with delay mismatch delay_s.

    The common phase actuator is locked on the spectral centroid, leaving
    each line the residual error of its offset: efficiency =
    (1 + Re gamma(tau)) / 2, which is 1 at tau = 0 and symmetric in tau.
    """
    g = spectrum.autocorrelation(float(delay_s)).real
    return float(min(1.0, max(0.0, 0.5 * (1.0 + g))))


def per_line_efficiency(spectrum: OpticalSpectrum, delay_s: float) -> np.ndarray:
    """Efficiency seen by each discrete line under a centroid-locked actuator."""
    if spectrum.lines_hz is None:
        raise ParameterError("per-line efficiency needs a discrete-line spectrum")
    offsets = spectrum.lines_hz - spectrum.centroid_hz
    return np.cos(np.pi * offsets * float(delay_s)) ** 2


@dataclass(frozen=True)
class VodlScan:
    """Delay-line scan result in path-length units."""

    delay_m: np.ndarray
    efficiency: np.ndarray
    peak_delay_m: float
    half_width_m: float  # full width where the curve falls to half its peak


def vodl_scan(
    spectrum: OpticalSpectrum,
    true_mismatch_s: float,
    scan_range_m: float,
    scan_step_m: float,
) -> VodlScan:
    """Scan a variable delay line around zero and locate the coherence peak.

    The curve is two_path_efficiency(tau_scan - true_mismatch); the scan
    range must bracket the true mismatch.  The half width is reported in
    path-length units (full width at half peak; infinite for a
    monochromatic source).
    """
    if scan_step_m <= 0 or scan_range_m <= 0:
        raise ParameterError("scan range and step must be positive")
    mismatch_m = true_mismatch_s * C_VACUUM
    if abs(mismatch_m) > scan_range_m:
        raise ScanRangeError(
            f"scan range +-{scan_range_m} m does not bracket the mismatch {mismatch_m} m"
        )
    n = int(math.floor(scan_range_m / scan_step_m))
    delays_m = np.arange(-n, n + 1) * scan_step_m
    taus = delays_m / C_VACUUM - true_mismatch_s
    eff = np.array([two_path_efficiency(spectrum, t) for t in taus])
    k = int(np.argmax(eff))
    peak = eff[k]
    half = peak / 2.0
    above = eff >= half
    if above.all():
        width = math.inf
    else:
        left = k
        while left > 0 and above[left - 1]:
            left -= 1
        right = k
        while right < eff.size - 1 and above[right + 1]:
            right += 1
        width = delays_m[right] - delays_m[left]
    return VodlScan(
        delay_m=delays_m,
        efficiency=eff,
        peak_delay_m=float(delays_m[k]),
        half_width_m=float(width),
    )


@dataclass(frozen=True)
class WdmLinkResult:
    """Per-line BER curves of a two-wavelength link and their penalties."""

    line_hz: np.ndarray
    line_efficiency: np.ndarray
    rop_dbm: np.ndarray
    ber_per_line: list
    penalty_vs_single_db: list  # at target_ber, None when not crossing


def wdm_link_run(
    spectrum: OpticalSpectrum,
    delay_s: float,
    model: ReceiverModel,
    rop_grid_dbm,
    efficiency_db=None,
    target_ber: float = 1e-4,
) -> WdmLinkResult:
    """BER curves per demultiplexed line of a multi-line link.

    Each line carries an equal share of the transmitter power (half of the
    single-line case for two lines) and sees its own combining efficiency
    from the delay mismatch, which shifts its BER curve; the reference for
    the penalty is the single-wavelength run on the same fading sequence
    (the ROP axis is the power at the demodulator input, so the power split
    itself cancels and only the combining loss remains).
    """
    if spectrum.lines_hz is None:
        raise ParameterError("wdm_link_run needs a discrete-line spectrum")
    grid = np.asarray(rop_grid_dbm, dtype=np.float64)
    single = ber_curve(grid, model, efficiency_db)
    line_eff = per_line_efficiency(spectrum, delay_s)
    curves = []
    penalties = []
    for eff in line_eff:
        loss_db = -10.0 * math.log10(max(eff, 1e-300))
        ber = ber_curve(grid - loss_db, model, efficiency_db)
        curves.append(ber)
        try:
            pen = power_penalty((grid, ber), (grid, single), target_ber)
        except Exception:
            pen = None
        penalties.append(pen)
    return WdmLinkResult(
        line_hz=spectrum.lines_hz.copy(),
        line_efficiency=line_eff,
        rop_dbm=grid,
        ber_per_line=curves,
        penalty_vs_single_db=penalties,
    )
