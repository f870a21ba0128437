"""Combinatorial matching of closed triangle meshes through a product-space ILP.

Typical use::

    from shapematch import load_shape, solve
    m = solve(load_shape("a.off"), load_shape("b.off"))
"""

__version__ = "0.1.0"

from .dual import build_subproblems, init_dual, run_dual, total_min_marginals  # noqa: E402
from .energy import EnergyWeights, compute_energy, normalize_shapes  # noqa: E402
from .mesh import Shape, close_holes, load_shape, validate  # noqa: E402
from .primal import Matching, RoundingError, SolverConfig, solve, solve_problem  # noqa: E402
from .product_space import ProductSpace, build_product_space  # noqa: E402

__all__ = [
    "EnergyWeights", "Matching", "ProductSpace", "RoundingError", "Shape", "SolverConfig",
    "build_product_space", "build_subproblems", "close_holes", "compute_energy", "init_dual",
    "load_shape", "normalize_shapes", "run_dual", "solve", "solve_problem",
    "total_min_marginals", "validate",
]
