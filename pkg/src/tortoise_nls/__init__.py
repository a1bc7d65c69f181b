"""Defocusing NLS on the Schwarzschild exterior, reduced to the tortoise line."""

from .geometry import (ConvergenceError, GeometryError, Grid, SchwarzschildParams, horizon_offset,
                       inverse_tortoise, potential, potential_derivative, tortoise)
from .state import (EnergyParts, ModelParams, WaveFunction, energy, gaussian, l2_norm,
                    load_wavefunction, lq_norm, save_wavefunction)
from .solver import (Absorber, EvolutionConfig, NumericalGuardError, Propagator, default_dt, evolve,
                     propagate, propagator_oracle, step)
from .diagnostics import (DiagnosticsRecord, WeightConfig, commutator_identity_check,
                          commutator_remainder, compute_record, dilation_expectation,
                          gamma_expectation, pseudoconformal_observable)
from .scattering import (DomainGuardError, ScatteringError, ScatteringResult, StrichartzExponents,
                         WaveOperatorResult, construct_wave_operator, dispersive_ratio,
                         extract_asymptotic_state, free_channel_comparison, strichartz_exponents)

__version__ = "0.1.0"
