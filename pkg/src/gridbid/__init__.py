"""Two-settlement electricity market clearing with bilevel vres offers."""

from .bilevel import (
    BilevelResult,
    KktSystem,
    McCormickBounds,
    build_bid_mccormick,
    build_std,
    compute_bounds,
    myd_offer,
    solve_bid_kkt,
    solve_bid_mccormick,
    solve_std,
)
from .grid import (
    Bus,
    CaseError,
    ConventionalUnit,
    GridCase,
    Line,
    LoadPoint,
    OfferVector,
    ScenarioSet,
    VresUnit,
    case_from_matpower,
    load_case,
    load_scenarios,
    penetration_level,
    scale_case,
    scale_scenarios,
    write_case,
    write_scenarios,
)
from .harness import ExperimentSpec, oracle_search, run_method, sweep_gamma, sweep_penetration
from .lp import (
    HighsBackend,
    LpModel,
    LpSolution,
    LpStatus,
    check_duality,
    get_backend,
    register_backend,
    write_mps,
)
from .market import (
    DaOutcome,
    RtOutcome,
    SettlementReport,
    build_da_lp,
    build_rt_lp,
    clear_da,
    clear_rt,
    settle_sequential,
)
from .scenarios import ScenarioConfig, generate_scenarios

__version__ = "0.1.0"
