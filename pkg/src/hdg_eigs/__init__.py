"""
Two-sided eigenvalue bounds for the Dirichlet Laplacian from hybridizable
discontinuous Galerkin discretizations on structured triangular meshes.
"""

from .assembly import (DIVERGENCE, GRADIENT, BlockSystem, CondensedPencil, DofMap,
                       MethodConfig, assemble, condense, reconstruct)
from .eigensolver import (ConvergenceError, EigenResult, solve_dense, solve_pencil,
                          solve_shift_invert)
from .mesh import Checkerboard, Mesh, build_structured_mesh, refine, subdomain_tag
from .spectra import (ExactPair, bound_verdict, bounds_table, combine_bounds,
                      convergence_ratio, error_norms, exact_eigenvalues)

__version__ = "0.1.0"
