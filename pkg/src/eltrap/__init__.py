"""
eltrap: electrons in a microwave Paul trap read out through a coaxial
cavity mode.

Submodules
----------
mathieu    Mathieu stability, secular frequency, trajectory integration
potential  even-polynomial axial potential, anharmonic frequency shifts
cavity     readout-mode coupled-mode dynamics, filter chain, noise floor
sequence   measurement programs, zero-span traces and swept spectra
analysis   decay and Gaussian fits, SNR, electron-number estimate
config     run-config parser;  cli  command-line front end
"""
from .analysis import (
    DEFAULT_DEGRADATION,
    computed_degradation,
    estimate_electron_number,
    fit_exponential_decay,
    fit_gaussian,
    snr,
)
from .cavity import (
    REFERENCE_CHAIN,
    CavityMode,
    CouplingParams,
    CoupledState,
    FilterChain,
    FilterStage,
    cooling_rate,
    filter_budget,
    loaded_linewidth,
    noise_floor,
    output_power,
    propagate_coupled_modes,
    step_coupled_modes,
)
from .errors import (
    ConfigError,
    EltrapError,
    FitError,
    InstabilityError,
    NoOscillationError,
    OutOfRangeError,
    ParameterError,
    PhysicsError,
    ProgramError,
    ResolutionError,
)
from .mathieu import (
    ELECTRON,
    MathieuParams,
    Particle,
    TrapDrive,
    beta_continued_fraction,
    floquet_beta,
    integrate_equation_of_motion,
    pseudo_potential,
    secular_frequency,
    stability_boundary,
    stability_parameters,
)
from .potential import (
    PotentialModel,
    anharmonic_frequency,
    fit_even_polynomial,
    frequency_at_amplitude,
    load_potential_samples,
    thermal_amplitude,
)
from .sequence import (
    Acquisition,
    LoadingEvent,
    Segment,
    SequenceProgram,
    Trace,
    compile_sequence,
    run_sequence,
    sweep_com_frequency,
)

__version__ = "0.1.0"
