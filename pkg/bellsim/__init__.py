"""
Bell-type beable dynamics on finite tensor-product spaces, with the extended
Wigner's friend experiment as the worked scenario.
"""

from bellsim.tensor_core import (
    SpaceError,
    SpaceMismatchError,
    NonHermitianError,
    Factor,
    TensorSpace,
    StateVector,
    Operator,
    Propagator,
    make_space,
    identity,
    zero_operator,
    basis_state,
    superpose,
    embed_operator,
    matrix_element,
    project,
    is_unitary,
    evolve_unitary,
    global_phase_distance,
)

from bellsim.beables import (
    BeableSpecError,
    UnnormalizedStateError,
    Sector,
    BeableSpec,
    ViableComponent,
    sectors,
    parse_sector,
    sector_weights,
    decompose,
    born_weights,
    marginal,
)

from bellsim.measurement_models import (
    MeasurementModelError,
    NonOrthonormalOutcomesError,
    NonUnitaryError,
    CrossSectorCouplingError,
    Outcome,
    MeasurementRotation,
    rotation_hamiltonian,
    preparation_unitary,
    controlled_preparation,
    check_sector_diagonal,
)

from bellsim.bell_dynamics import (
    ScheduleError,
    StarvedSectorError,
    StepSizeError,
    MasterEquationError,
    HamiltonianSegment,
    UnitaryEvent,
    Schedule,
    StepPolicy,
    RateTable,
    Jump,
    Trajectory,
    MasterEquationResult,
    EnsembleStats,
    propagate_pilot,
    jump_rates,
    step,
    tabulate_rates,
    simulate_trajectory,
    integrate_master_equation,
    compare_to_born,
    run_ensemble,
)

from bellsim.fr_experiment import (
    ScenarioError,
    MissingCheckpointError,
    AgentMeasurement,
    Scenario,
    ImplicationReport,
    StateReport,
    FR_JOINT_EVENTS,
    scenario_from_config,
    build_scenario,
    reference_pilot,
    reference_real,
    verify_reference_states,
    check_claims,
)

from bellsim.perspectives import (
    AgentError,
    PredictionTable,
    outcome_probabilities,
    agent_prediction,
    gods_eye_prediction,
    full_table,
)

__all__ = [
    # Tensor core
    "SpaceError",
    "SpaceMismatchError",
    "NonHermitianError",
    "Factor",
    "TensorSpace",
    "StateVector",
    "Operator",
    "Propagator",
    "make_space",
    "identity",
    "zero_operator",
    "basis_state",
    "superpose",
    "embed_operator",
    "matrix_element",
    "project",
    "is_unitary",
    "evolve_unitary",
    "global_phase_distance",
    # Beables
    "BeableSpecError",
    "UnnormalizedStateError",
    "Sector",
    "BeableSpec",
    "ViableComponent",
    "sectors",
    "parse_sector",
    "sector_weights",
    "decompose",
    "born_weights",
    "marginal",
    # Measurement models
    "MeasurementModelError",
    "NonOrthonormalOutcomesError",
    "NonUnitaryError",
    "CrossSectorCouplingError",
    "Outcome",
    "MeasurementRotation",
    "rotation_hamiltonian",
    "preparation_unitary",
    "controlled_preparation",
    "check_sector_diagonal",
    # Dynamics
    "ScheduleError",
    "StarvedSectorError",
    "StepSizeError",
    "MasterEquationError",
    "HamiltonianSegment",
    "UnitaryEvent",
    "Schedule",
    "StepPolicy",
    "RateTable",
    "Jump",
    "Trajectory",
    "MasterEquationResult",
    "EnsembleStats",
    "propagate_pilot",
    "jump_rates",
    "step",
    "tabulate_rates",
    "simulate_trajectory",
    "integrate_master_equation",
    "compare_to_born",
    "run_ensemble",
    # Extended Wigner's friend
    "ScenarioError",
    "MissingCheckpointError",
    "AgentMeasurement",
    "Scenario",
    "ImplicationReport",
    "StateReport",
    "FR_JOINT_EVENTS",
    "scenario_from_config",
    "build_scenario",
    "reference_pilot",
    "reference_real",
    "verify_reference_states",
    "check_claims",
    # Perspectives
    "AgentError",
    "PredictionTable",
    "outcome_probabilities",
    "agent_prediction",
    "gods_eye_prediction",
    "full_table",
]
