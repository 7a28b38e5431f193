"""Islanded AC microgrids built from series-cascaded inverters:
economic dispatch, decentralized sharing control, closed-loop simulation,
and small-signal stability analysis."""

from .config import DGConfig, GridConfig, bundled_path, parse_config, parse_schedule_file
from .controller import (
    ControlCommand,
    ControllerParams,
    economical_command,
    filter_step,
    proportional_command,
    proportional_weights,
    sharing_coefficients,
)
from .dispatch import (
    CostFunction,
    DispatchResult,
    SharingMap,
    brute_force_dispatch,
    build_load_map,
    solve_dispatch,
    to_current_domain,
)
from .errors import (
    AlgebraicLoopError,
    CascadeGridError,
    ComparisonError,
    DegenerateSharingError,
    InfeasibleLoadError,
    NumericalError,
    SingularCircuitError,
    ValidationError,
)
from .network import (
    Impedance,
    NetworkSolution,
    Phasor,
    complex_powers,
    equivalent_factor,
    power_angle_jacobians,
    solve_network,
    wrap_angle,
)
from .simulator import (
    ECONOMICAL,
    PROPORTIONAL,
    LoadSchedule,
    LoadStep,
    SimState,
    Trajectory,
    compare_tagc,
    derivatives,
    detect_steady_state,
    run_scenario,
    simulate_to_steady,
    solve_algebraic_loop,
)
from .smallsignal import (
    MARGINAL,
    STABLE,
    UNSTABLE,
    OperatingPoint,
    RootLocus,
    StateMatrix,
    build_state_matrix,
    find_operating_point,
    root_locus,
    spectrum,
    stability_verdict,
)

__version__ = "0.1.0"
