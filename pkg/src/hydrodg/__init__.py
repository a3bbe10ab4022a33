"""Interior-penalty discontinuous Galerkin solver for 2D hydrostatic Stokes flow."""

from .dg_space import BrokenSpace, DGFunction, l2_project, reference_basis
from .forms import (BoundaryConditionSet, Dirichlet, Neumann, Params, SaddleSystem,
                    SolutionField, assemble_system, cavity_bcs, dirichlet_bcs)
from .linsolve import SingularMatrixError, SolverError, solve_direct, solve_saddle
from .mesh import BoundaryTag, Mesh, build_structured_mesh, read_mesh, shape_regularity

__version__ = "0.1.0"
