from .mesh import Mesh, MeshError
from .quadrature import tet_rule, tri_rule
from .spaces import FunctionSpace
from .assembly import (
    SparseSystem,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    boundary_mass,
    scatter_csr,
)
from .linalg import (
    BlockLowerTriangularPreconditioner,
    IdentityPreconditioner,
    JacobiPreconditioner,
    LuPreconditioner,
    Preconditioner,
    SolverError,
    solve_cg,
    solve_gmres,
)
from . import io, meshgen
from .meshgen import (
    box_mesh,
    extract_submesh,
    tube_mesh,
    tube_with_wall,
    unit_tetrahedron,
)

__all__ = [
    "Mesh", "MeshError", "FunctionSpace", "SparseSystem",
    "tet_rule", "tri_rule",
    "assemble_mass", "assemble_stiffness", "assemble_load", "boundary_mass",
    "scatter_csr", "solve_cg", "solve_gmres", "SolverError",
    "Preconditioner", "IdentityPreconditioner", "JacobiPreconditioner",
    "BlockLowerTriangularPreconditioner", "LuPreconditioner",
    "io", "meshgen",
]
