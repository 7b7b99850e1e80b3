"""Photonic coherent combiner: a tree of 2-to-1 interferometric elements.

Each element realizes out = sqrt(rho) a + sqrt(1 - rho) e^{i theta} b, the
kept port of a lossless variable-ratio coupler, so with matched (rho, theta)
it sums the full power of its two inputs.  A balanced binary tree of n-1
elements therefore combines n coherent inputs losslessly; chip and
demultiplexer insertion losses are lumped on the output.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidFieldError, ParameterError

__all__ = [
    "CombinerTopology",
    "CombinerState",
    "combine",
    "align_state",
    "ideal_combined_power",
    "mm_coupling_efficiency_series",
]

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class CombinerTopology:
    """Wiring of the combining tree plus lumped insertion losses.

    stages is a tuple of stages; each stage is a tuple of ("pair", i, j) or
    ("pass", i) entries indexing the previous stage's outputs.  Every
    "pair" consumes one element (phase actuator + split ratio), so a valid
    tree has exactly n_inputs - 1 elements.
    """

    n_inputs: int
    stages: tuple
    pic_insertion_loss_db: float = 7.0
    demux_insertion_loss_db: float = 1.0

    def __post_init__(self):
        if self.n_inputs < 1:
            raise ParameterError("n_inputs must be >= 1")
        if self.pic_insertion_loss_db < 0 or self.demux_insertion_loss_db < 0:
            raise ParameterError("insertion losses must be >= 0")
        n_elements = sum(1 for st in self.stages for e in st if e[0] == "pair")
        if n_elements != self.n_inputs - 1:
            raise ParameterError(
                f"tree with {self.n_inputs} leaves needs {self.n_inputs - 1} elements, "
                f"got {n_elements}"
            )
        width = self.n_inputs
        for st in self.stages:
            used = sorted(
                i for e in st for i in (e[1:] if e[0] == "pair" else (e[1],))
            )
            if used != list(range(width)):
                raise ParameterError(f"stage {st} does not consume signals 0..{width - 1}")
            width = len(st)
        if width != 1:
            raise ParameterError("tree must end in a single output")

    @classmethod
    def balanced(cls, n_inputs: int, pic_insertion_loss_db: float = 7.0,
                 demux_insertion_loss_db: float = 1.0) -> "CombinerTopology":
        """Balanced pairing tree; odd signals pass through to the next stage."""
        stages = []
        width = n_inputs
        while width > 1:
            st = [("pair", 2 * k, 2 * k + 1) for k in range(width // 2)]
            if width % 2:
                st.append(("pass", width - 1))
            stages.append(tuple(st))
            width = len(st)
        return cls(
            n_inputs=n_inputs,
            stages=tuple(stages),
            pic_insertion_loss_db=pic_insertion_loss_db,
            demux_insertion_loss_db=demux_insertion_loss_db,
        )

    @property
    def n_elements(self) -> int:
        return self.n_inputs - 1

    @property
    def total_loss_db(self) -> float:
        return self.pic_insertion_loss_db + self.demux_insertion_loss_db


@dataclass(frozen=True)
class CombinerState:
    """Actuator settings: one phase in [0, 2 pi) and one ratio per element."""

    phase_commands: np.ndarray
    split_ratios: np.ndarray

    def __post_init__(self):
        ph = np.array(self.phase_commands, dtype=np.float64, copy=True)
        ra = np.array(self.split_ratios, dtype=np.float64, copy=True)
        if ph.shape != ra.shape:
            raise ParameterError("phase_commands and split_ratios must have equal length")
        if not np.all(np.isfinite(ph)):
            raise ParameterError("phase commands must be finite")
        if np.any((ra < 0) | (ra > 1)):
            raise ParameterError("split ratios must lie in [0, 1]")
        object.__setattr__(self, "phase_commands", ph)
        object.__setattr__(self, "split_ratios", ra)
        ph.setflags(write=False)
        ra.setflags(write=False)

    @classmethod
    def neutral(cls, topology: CombinerTopology) -> "CombinerState":
        n = topology.n_elements
        return cls(np.full(n, math.pi), np.full(n, 0.5))


def combine(inputs, topology: CombinerTopology, state: CombinerState):
    """Run amplitudes through the tree.

    Returns (output_amplitude, monitor_powers): the post-loss complex output
    and the pre-loss |out|^2 of every element in evaluation order.  Total
    output power never exceeds the summed input power (each element is the
    kept port of a unitary 2x2 map).
    """
    a = np.asarray(inputs, dtype=np.complex128)
    if a.shape != (topology.n_inputs,):
        raise ParameterError(
            f"expected {topology.n_inputs} input amplitudes, got shape {a.shape}"
        )
    if not np.all(np.isfinite(a)):
        raise InvalidFieldError("combiner inputs must be finite")
    if state.phase_commands.shape[0] != topology.n_elements:
        raise ParameterError("state size does not match topology")

    monitors = np.empty(topology.n_elements)
    signals = a
    k = 0
    for stage in topology.stages:
        nxt = np.empty(len(stage), dtype=np.complex128)
        for slot, entry in enumerate(stage):
            if entry[0] == "pair":
                rho = state.split_ratios[k]
                theta = state.phase_commands[k]
                out = math.sqrt(rho) * signals[entry[1]] + (
                    math.sqrt(1.0 - rho) * np.exp(1j * theta) * signals[entry[2]]
                )
                monitors[k] = abs(out) ** 2
                nxt[slot] = out
                k += 1
            else:
                nxt[slot] = signals[entry[1]]
        signals = nxt
    attenuation = 10.0 ** (-topology.total_loss_db / 20.0)
    return signals[0] * attenuation, monitors


def align_state(inputs, topology: CombinerTopology) -> CombinerState:
    """State that combines the given amplitudes losslessly.

    Per element: ratio matched to the input powers, phase equal to the
    inter-arm phase difference; the output then carries |a|^2 + |b|^2.
    """
    a = np.asarray(inputs, dtype=np.complex128)
    if a.shape != (topology.n_inputs,):
        raise ParameterError("input length does not match topology")
    phases = []
    ratios = []
    signals = a
    for stage in topology.stages:
        nxt = np.empty(len(stage), dtype=np.complex128)
        for slot, entry in enumerate(stage):
            if entry[0] == "pair":
                x, y = signals[entry[1]], signals[entry[2]]
                p = abs(x) ** 2 + abs(y) ** 2
                if p == 0:
                    rho, theta = 0.5, 0.0
                    out = 0.0 + 0.0j
                else:
                    rho = abs(x) ** 2 / p
                    theta = (np.angle(x) - np.angle(y)) % TWO_PI if abs(y) > 0 else 0.0
                    out = math.sqrt(p) * np.exp(1j * (np.angle(x) if abs(x) > 0 else np.angle(y)))
                phases.append(theta)
                ratios.append(rho)
                nxt[slot] = out
            else:
                nxt[slot] = signals[entry[1]]
        signals = nxt
    return CombinerState(np.array(phases), np.array(ratios))


def ideal_combined_power(coeffs, n_modes: int) -> float:
    """Lossless combining bound: summed power of the first n_modes inputs."""
    power = coeffs.mode_power if hasattr(coeffs, "mode_power") else np.abs(
        np.asarray(coeffs, dtype=np.complex128)
    ) ** 2
    if n_modes < 0 or n_modes > power.shape[0]:
        raise ParameterError(f"n_modes must be in 0..{power.shape[0]}")
    return float(np.sum(power[:n_modes]))


def mm_coupling_efficiency_series(
    series, n_modes: int, lossless: bool = True, topology: CombinerTopology = None
) -> np.ndarray:
    """Per-frame multimode coupling efficiency relative to aperture power.

    lossless gives the ideal combining bound; otherwise the topology's total
    insertion loss (default 7 dB chip + 1 dB demultiplexer) is applied as a
    constant offset.
    """
    loss_db = 0.0
    if not lossless:
        loss_db = (topology or CombinerTopology.balanced(n_modes)).total_loss_db
    scale = 10.0 ** (-loss_db / 10.0)
    out = []
    for mc in series:
        out.append(scale * ideal_combined_power(mc, n_modes) / mc.total_power)
    return np.asarray(out)
