"""Simulation of MMSE channel estimation through stacked metasurfaces.

Library layout:

* :mod:`simest.geometry` - layouts, coupling matrices, cascade, steering,
  correlation and path loss,
* :mod:`simest.channel` - Rician channels and the pilot phase,
* :mod:`simest.estimator` - the MMSE estimate, its covariances, closed-form
  and Monte-Carlo NMSE,
* :mod:`simest.optimizer` - closed-form gradients and projected gradient
  descent over the phase vectors,
* :mod:`simest.scenario` / :mod:`simest.harness` / :mod:`simest.reporting` -
  configuration, sweeps and emission,
* :mod:`simest.cli` - the ``simest`` command.
"""

from .channel import (
    PilotBook,
    PilotObservation,
    UserChannel,
    make_pilot_book,
    make_user_channel,
    pilot_matrix,
    sample_nlos,
    transmit_pilots,
)
from .errors import ConfigError, GeometryError, NumericalError
from .estimator import (
    EstimationArtifacts,
    McNmse,
    build_artifacts,
    effective_channel,
    estimate_covariance,
    mmse_estimate,
    nmse_closed_form,
    nmse_monte_carlo,
)
from .geometry import (
    CorrelationModel,
    PhaseStack,
    PropagationSet,
    SimLayout,
    SimStack,
    build_layout,
    build_propagation_set,
    compose_cascade,
    correlation_matrix,
    diffraction_coefficient,
    identity_stack,
    ones_phases,
    path_loss,
    random_phases,
    steering_vector,
)
from .harness import (
    ScenarioInstance,
    SweepRecord,
    SweepResult,
    assemble,
    conventional_baseline,
    gradient_check,
    make_problem,
    run_convergence_sweep,
    run_layer_sweep,
    run_single,
    run_snr_sweep,
)
from .optimizer import (
    GradientContext,
    NmseProblem,
    OptimizerResult,
    OptimizerSchedule,
    codebook_search,
    finite_difference_gradient,
    gradient_layer,
    objective_avg_nmse,
    optimize,
    per_user_nmse,
    project_unit_modulus,
)
from .reporting import emit_results, load_results, render_figures
from .scenario import ScenarioConfig, apply_overrides, load_scenario

__version__ = "0.1.0"
