"""Mobility equity evaluation and equity-aware routing on multi-modal networks."""

from .assignment import (
    Commodity,
    NonCompliantDemand,
    delta_pv,
    equilibrate,
    od_travel_times,
    solve_cognitive_hierarchy,
    solve_system_centric,
    solve_wardrop,
)
from .equity import (
    ModeSpec,
    NodeProfile,
    ServiceCatalog,
    ServiceType,
    SmoothingSpec,
    count_accessible,
    indicator,
    kappa_from_income,
    mem,
    mobility_index,
    normalize_access,
)
from .graph import Edge, Graph, Node, bpr_integral, bpr_travel_time, shortest_path_tree, validate_connectivity
from .optimizer import (
    WeightGrid,
    evaluate_pipeline,
    maximize_mem,
    sweep_compliance,
    sweep_demand_scale,
    sweep_hierarchy_depth,
    sweep_weights,
)
from .scenario_io import Scenario, generate_synthetic, load_scenario, write_results, write_scenario

__version__ = "0.1.0"
