"""Dynamic event-triggered state estimation over sensor networks with noisy measurements.

Modules
-------
triggering
    MIET, the timer function ``phi``, trigger rates and reset policies.
estimation
    Plant and observer models, holding function and error coordinates.
hybrid
    Adaptive integration of the closed-loop hybrid model with event localization.
lti_design
    LMI assembly, verification and solution for linear designs; the case study.
harness
    Scenario files, seeded noise, runs, metrics and the Lyapunov monitor.
"""
from .estimation import (
    ErrorCoordinates,
    LtiCaseStudy,
    ObserverModel,
    PlantModel,
    derived_errors,
    error_flow_g,
    holding_rate,
    lti_plant,
    luenberger_observer,
    observability_rank,
    observer_rate,
)
from .harness import (
    ConfigError,
    NoiseSignal,
    ScenarioConfig,
    SimulationReport,
    case_study_config,
    iet_stats,
    iss_sweep,
    lyapunov_monitor,
    noise_sample,
    run_scenario,
)
from .hybrid import (
    ClosedLoop,
    EventRecord,
    HybridArc,
    HybridState,
    HybridTimePoint,
    IntegratorTolerances,
    ModelFault,
    SimulationError,
    StepSizeUnderflow,
    ZenoError,
    apply_jump,
    integrate_flow,
    simulate,
)
from .lti_design import (
    LmiProblem,
    LmiReport,
    LmiSolveError,
    assemble_lmi,
    case_study_lmi,
    case_study_model,
    solve_P,
    verify_lmi,
)
from .triggering import (
    InfeasibleTuning,
    NodeTriggerParams,
    beta_coeff,
    compute_miet,
    eta_reset,
    gamma_bar,
    jump_condition,
    omega,
    phi_ode_oracle,
    phi_trajectory,
    psi_rate,
)

__version__ = "0.1.0"
