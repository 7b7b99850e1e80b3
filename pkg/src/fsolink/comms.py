"""Parametric OOK/DPSK receiver models and fading-sequence BER statistics.

The receiver is a Gaussian-Q detector anchored at a configured sensitivity
(received optical power giving BER 1e-9); the paper-style quantities built
on it are the frame-averaged cumulated BER, the error floor produced by the
combiner's phase-wrap transients, synchronization-loss time and power
penalties between BER-vs-power curves.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from ._streams import substream
from .errors import CurveCrossingError, ParameterError

__all__ = [
    "ReceiverModel",
    "PowerTrace",
    "BerReport",
    "Q_AT_1E9",
    "ber_instant",
    "cumulated_ber",
    "ber_curve",
    "frame_rate_invariance_check",
    "sync_loss_stats",
    "power_penalty",
    "ber_floor_from_phase_jumps",
    "monte_carlo_cumulated_ber",
]

# Gaussian-Q value giving BER 1e-9: 0.5 erfc(Q/sqrt(2)) = 1e-9
Q_AT_1E9 = 6.0
DPSK_ADVANTAGE_DB = 3.0


@dataclass(frozen=True)
class ReceiverModel:
    """Receiver parameterization for one modulation format.

    sensitivity_dbm anchors the Gaussian-Q curve (BER 1e-9 at that power).
    When derive_dpsk_jointly is set and the format is DPSK, the anchor is
    the configured OOK sensitivity minus the balanced-detection advantage.
    floor_duty is the fraction of time the combiner spends in wrap
    transients; errored at coin-flip rate, it floors the BER at duty / 2.
    """

    format: str = "ook"
    bit_rate_bps: float = 1e10
    sensitivity_dbm: float = -39.0
    floor_duty: float = 0.0
    derive_dpsk_jointly: bool = True

    def __post_init__(self):
        if self.format not in ("ook", "dpsk"):
            raise ParameterError(f"format must be 'ook' or 'dpsk', got {self.format!r}")
        if not math.isfinite(self.sensitivity_dbm):
            raise ParameterError("sensitivity_dbm must be finite")
        if not 0.0 <= self.floor_duty <= 1.0:
            raise ParameterError("floor_duty must lie in [0, 1]")
        if self.bit_rate_bps <= 0:
            raise ParameterError("bit_rate_bps must be positive")

    @property
    def effective_sensitivity_dbm(self) -> float:
        if self.format == "dpsk" and self.derive_dpsk_jointly:
            return self.sensitivity_dbm - DPSK_ADVANTAGE_DB
        return self.sensitivity_dbm


@dataclass(frozen=True)
class PowerTrace:
    """Received optical power at the demodulator input, per frame."""

    time_s: np.ndarray
    rop_dbm: np.ndarray
    frame_rate_hz: float = None
    correction_bandwidth_hz: float = None

    def __post_init__(self):
        t = np.asarray(self.time_s, dtype=np.float64)
        p = np.asarray(self.rop_dbm, dtype=np.float64)
        if t.shape != p.shape or t.ndim != 1:
            raise ParameterError("time_s and rop_dbm must be 1-D arrays of equal length")
        if t.size == 0:
            raise ParameterError("power trace must be non-empty")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
            raise ParameterError("power trace must be finite")
        if np.any(np.diff(t) <= 0):
            raise ParameterError("time_s must be strictly increasing")
        object.__setattr__(self, "time_s", t)
        object.__setattr__(self, "rop_dbm", p)

    @classmethod
    def from_rop(cls, rop_dbm, frame_rate_hz: float = 1.0, **kw) -> "PowerTrace":
        rop = np.atleast_1d(np.asarray(rop_dbm, dtype=np.float64))
        t = np.arange(rop.size) / frame_rate_hz
        return cls(time_s=t, rop_dbm=rop, frame_rate_hz=frame_rate_hz, **kw)


def ber_instant(rop_dbm, model: ReceiverModel):
    """Instantaneous BER at the given received power.

    BER = floor + (1 - floor) * 0.5 erfc(Q / sqrt 2) with
    Q = 6 * 10^((rop - sensitivity) / 20) and floor = floor_duty / 2,
    clamped to 0.5.  Vectorized over rop_dbm.
    """
    rop = np.asarray(rop_dbm, dtype=np.float64)
    q = Q_AT_1E9 * 10.0 ** ((rop - model.effective_sensitivity_dbm) / 20.0)
    floor = 0.5 * model.floor_duty
    ber = floor + (1.0 - floor) * 0.5 * erfc(q / math.sqrt(2.0))
    out = np.minimum(ber, 0.5)
    return float(out) if np.isscalar(rop_dbm) else out


def cumulated_ber(trace, model: ReceiverModel) -> float:
    """Frame-averaged BER of a fading sequence: mean of BER(P(i)).

    Independent of the frame rate for a fixed power sequence.  Accepts a
    PowerTrace or a plain array of per-frame powers in dBm.
    """
    rop = trace.rop_dbm if isinstance(trace, PowerTrace) else np.asarray(trace, dtype=np.float64)
    if rop.size == 0:
        raise ParameterError("cumulated_ber needs a non-empty trace")
    return float(np.mean(ber_instant(rop, model)))


def monte_carlo_cumulated_ber(trace, model: ReceiverModel, bits_per_frame: int = 10**7,
                              seed: int = 0) -> tuple:
    """Bit-level Monte Carlo estimate of the cumulated BER.

    Draws bits_per_frame Bernoulli errors per frame at that frame's BER and
    pools the error counts.  Returns (estimate, standard_error).
    """
    rop = trace.rop_dbm if isinstance(trace, PowerTrace) else np.asarray(trace, dtype=np.float64)
    p = np.atleast_1d(ber_instant(rop, model))
    rng = substream(seed, "mc-ber")
    errors = rng.binomial(bits_per_frame, p)
    total_bits = bits_per_frame * p.size
    estimate = errors.sum() / total_bits
    var = np.sum(p * (1.0 - p) * bits_per_frame) / total_bits**2
    return float(estimate), float(math.sqrt(var))


def ber_curve(rop_grid_dbm, model: ReceiverModel, efficiency_db=None):
    """Cumulated BER versus ROP setpoint for a fading sequence.

    efficiency_db is the per-frame coupling efficiency in dB relative to its
    own mean; at setpoint R each frame sees R + efficiency_db[i].  With
    efficiency_db None the curve is the static (back-to-back) receiver
    curve.  Returns an array matching rop_grid_dbm.
    """
    grid = np.asarray(rop_grid_dbm, dtype=np.float64)
    if efficiency_db is None:
        return ber_instant(grid, model)
    eta = np.asarray(efficiency_db, dtype=np.float64)
    eta = eta - np.mean(eta)
    return np.array([float(np.mean(ber_instant(r + eta, model))) for r in grid])


def frame_rate_invariance_check(trace: PowerTrace, model: ReceiverModel, rates_hz) -> tuple:
    """Replay the same power sequence at several frame rates.

    Returns (invariant, max_relative_deviation, flagged).  flagged is True
    when the trace carries a correction bandwidth smaller than its frame
    rate, in which case the zero-order-hold premise does not apply and the
    trace is excluded from the invariance claim.
    """
    rates = list(rates_hz)
    if not rates:
        raise ParameterError("need at least one frame rate")
    flagged = (
        trace.correction_bandwidth_hz is not None
        and trace.frame_rate_hz is not None
        and trace.correction_bandwidth_hz < trace.frame_rate_hz
    )
    baseline = cumulated_ber(trace, model)
    deviations = []
    for rate in rates:
        replay = PowerTrace.from_rop(trace.rop_dbm, frame_rate_hz=rate)
        deviations.append(abs(cumulated_ber(replay, model) - baseline))
    max_dev = max(deviations) / baseline if baseline > 0 else max(deviations)
    return (max_dev <= 1e-12 and not flagged), float(max_dev), flagged


def sync_loss_stats(
    trace: PowerTrace,
    model: ReceiverModel,
    ber_threshold: float = 1e-3,
    reacquire_s: float = 0.1,
) -> float:
    """Seconds of synchronization loss per minute of link time.

    Frames whose BER exceeds ber_threshold open an outage; after the BER
    recovers the demodulator still needs reacquire_s before lock counts
    again.  The total outage time is normalized to 60 s.
    """
    if ber_threshold <= 0 or ber_threshold >= 0.5:
        raise ParameterError("ber_threshold must lie in (0, 0.5)")
    if reacquire_s < 0:
        raise ParameterError("reacquire_s must be >= 0")
    t = trace.time_s
    if t.size < 2:
        duration = 1.0
        dt = 1.0
    else:
        dt = float(np.median(np.diff(t)))
        duration = t[-1] - t[0] + dt
    if duration < 1.0:
        raise ParameterError("sync loss statistics need at least 1 s of trace")
    bad = np.atleast_1d(ber_instant(trace.rop_dbm, model)) > ber_threshold
    outage = 0.0
    lock_at = -math.inf
    in_outage_until = -math.inf
    for i, flag in enumerate(bad):
        start = t[i]
        end = t[i] + dt
        if flag:
            in_outage_until = max(in_outage_until, end + reacquire_s)
        outage += max(0.0, min(end, in_outage_until) - start)
    return float(outage / duration * 60.0)


def power_penalty(curve, reference, target_ber: float) -> float:
    """Extra power the curve needs versus the reference at target_ber.

    Both curves are (rop_dbm, ber) pairs sampled on monotone grids; the
    crossing power is log-interpolated.  Raises CurveCrossingError naming
    the side that never crosses the target.
    """

    def crossing(rop, ber, side):
        rop = np.asarray(rop, dtype=np.float64)
        ber = np.asarray(ber, dtype=np.float64)
        order = np.argsort(rop)
        rop, ber = rop[order], ber[order]
        log_b = np.log10(np.maximum(ber, 1e-300))
        log_t = math.log10(target_ber)
        below = log_b <= log_t
        if not below.any() or below[0]:
            raise CurveCrossingError(
                f"{side} curve does not cross BER {target_ber:g} inside its sampled range",
                side,
            )
        j = int(np.argmax(below))
        frac = (log_t - log_b[j - 1]) / (log_b[j] - log_b[j - 1])
        return rop[j - 1] + frac * (rop[j] - rop[j - 1])

    return float(crossing(*curve, "curve") - crossing(*reference, "reference"))


def ber_floor_from_phase_jumps(wrap_duty: float) -> float:
    """High-power BER floor from combiner wrap transients: duty / 2."""
    if not 0.0 <= wrap_duty <= 1.0:
        raise ParameterError("wrap duty must lie in [0, 1]")
    return 0.5 * wrap_duty


@dataclass(frozen=True)
class BerReport:
    """Cumulated-BER curve with the derived link statistics."""

    label: str
    rop_dbm: np.ndarray
    ber: np.ndarray
    penalty_db: dict  # target BER -> dB vs reference (None when not crossing)
    sync_loss_s_per_min: float = None
    floor_estimate: float = None

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "rop_dbm": [float(x) for x in self.rop_dbm],
            "ber": [float(x) for x in self.ber],
            "penalty_db": {str(k): v for k, v in self.penalty_db.items()},
            "sync_loss_s_per_min": self.sync_loss_s_per_min,
            "floor_estimate": self.floor_estimate,
        }
