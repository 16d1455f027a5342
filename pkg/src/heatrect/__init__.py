"""heatrect: steady-state simulator for qutrit-diode heat-transport circuits."""

from .circuits import (
    BathParams,
    CircuitBuild,
    CircuitSpec,
    DiodeParams,
    RateMode,
    TimeDependentOperator,
    Topology,
    bose_occupation,
    build_bridge_halves,
    build_circuit,
    build_diode_hamiltonian,
)
from .lindblad import (
    Liouvillian,
    RateTable,
    bath_dissipator,
    bridge_rate_tables,
    build_bridge_half_generators,
    build_generator,
    dissipator,
    qutrit_rate_table,
)
from .observables import (
    BiasSetting,
    CurrentFunctional,
    CurrentReport,
    ModeReport,
    bath_exchange_current,
    effective_temperature,
    fidelity,
    markov_current_parallel,
    markov_current_series,
    mode_report,
    rectification,
    thermal_population,
    thermal_state_matrix,
)
from .spaces import (
    DensityMatrix,
    HarmonicOscillator,
    ModeKind,
    Qutrit,
    SpaceLayout,
    SparseOperator,
    lowering_op,
    number_op,
    partial_trace,
    projector,
    raising_op,
)
from .steady import (
    ConvergenceError,
    ConvergenceProtocol,
    DegenerateSteadyStateError,
    EvolutionResult,
    evolve,
    steady_state_averaged,
    steady_state_direct,
)

__version__ = "0.1.0"
