"""Cooperative scheduling, migration, and cost allocation for DC-backed VPPs."""

from .fuzzy import (
    FuzzyTriple,
    LinearFuzzyConstraint,
    TrapezoidParams,
    credibility_leq,
    crisp_equivalent,
    linear_combination,
    membership,
    optimistic_value,
    pessimistic_value,
)
from .model import (
    BessParams,
    DrMetrics,
    MigrationTensor,
    NetworkConfig,
    ScheduleDecision,
    ServerFleetParams,
    VppProfile,
    bess_step,
    dc_power,
    dr_metrics,
    migration_cost,
    qos_cost,
)
from .program import ConicProgram, SolveOutcome, check_feasibility, solve
from .assemble import (
    CoalitionSolution,
    ProblemContext,
    RoundingReport,
    build_admm_global_load,
    build_admm_local,
    build_centralized,
    build_coalition,
    build_independent,
    round_servers,
    solve_coalition,
    structural_report,
    update_globals_migration,
)
from .admm import AdmmResult, run as run_admm
from .allocate import (
    AllocationReport,
    CharacteristicOracle,
    characteristic_cost,
    improved_allocation,
    standard_shapley,
)
from .scenario import (
    ScenarioFile,
    demo_scenario_path,
    generate_synthetic,
    load_scenario,
    make_demo_scenario,
)

__version__ = "0.1.0"
