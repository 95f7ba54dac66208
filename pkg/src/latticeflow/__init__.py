"""latticeflow: a lattice-typed declarative dataflow stack.

Programs are immutable IR (latticeflow.ir) executed tick-by-tick by a
transducer over two interchangeable backends (direct interpreter and
operator-graph runtime), analyzed for monotonicity (latticeflow.analysis),
replicated and sequenced on a deterministic network simulator
(latticeflow.sim / latticeflow.facets), and placed on machine catalogs by
an exact branch-and-bound planner (latticeflow.planner).
"""

from .analysis import calm_report, classify_handler, stratify
from .ir import Program, validate
from .lowering import lower
from .planner import CostModel, DeployPlan, Infeasible, MachineType, solve
from .sim import Cluster, NetworkModel, NodeSpec
from .transducer import Transducer

__version__ = "0.1.0"

__all__ = [
    "Cluster", "CostModel", "DeployPlan", "Infeasible", "MachineType",
    "NetworkModel", "NodeSpec", "Program", "Transducer", "calm_report",
    "classify_handler", "lower", "solve", "stratify", "validate",
    "__version__",
]
