"""Seeded simulator of a GEO-to-ground free-space optical link.

Pipeline: turbulent wavefront synthesis, Hermite-Gauss decomposition,
single-mode vs coherently-combined multimode receiver coupling, closed-loop
phase control of a photonic combiner, and OOK/DPSK bit-error-rate
evaluation.
"""

__version__ = "0.1.0"

from .combiner import (
    CombinerState,
    CombinerTopology,
    align_state,
    combine,
    ideal_combined_power,
    mm_coupling_efficiency_series,
)
from .comms import (
    BerReport,
    PowerTrace,
    ReceiverModel,
    ber_curve,
    ber_floor_from_phase_jumps,
    ber_instant,
    cumulated_ber,
    frame_rate_invariance_check,
    monte_carlo_cumulated_ber,
    power_penalty,
    sync_loss_stats,
)
from .controller import (
    ControllerConfig,
    LoopTrace,
    NelderMead,
    correction_bandwidth,
    correction_bandwidth_knee,
    nelder_mead_step,
    run_closed_loop,
    uncorrected_efficiency,
    wrap_event_rate,
)
from .field import (
    ComplexFieldGrid,
    GridSpec,
    angular_spectrum_propagate,
    apply_aperture,
    apply_phase_screen,
    gaussian_field,
    plane_wave,
    read_field_bin,
    total_power,
    uniform_disc_field,
    write_field_bin,
    write_field_csv,
)
from .modes import (
    MODE_ORDER,
    ModeBasis,
    ModeCoefficients,
    ModeStatistics,
    decompose,
    fit_basis_waist,
    hg_mode_field,
    mode_statistics,
    modes_up_to_group,
    optimize_smf_waist,
    smf_coupling_efficiency,
)
from .scenario import Scenario, load_scenario, scenario_from_dict
from .turbulence import (
    AtmosphereProfile,
    PhaseScreen,
    TurbulenceLayer,
    build_time_series,
    default_profile,
    evolve_frozen_flow,
    kolmogorov_structure_function,
    measure_structure_function,
    synth_phase_screen,
    transmit_field,
    von_karman_psd,
)
from .wdm import (
    OpticalSpectrum,
    VodlScan,
    per_line_efficiency,
    two_path_efficiency,
    vodl_scan,
    wdm_link_run,
)
