"""Stress-aligned curved-layer slicing and toolpath generation."""

from .config import Config, parse_config
from .fea import Material, BoundaryConditions, solve_elasticity, principal_decomposition
from .meshcore import TetMesh, TriMesh, load_tet_mesh, load_tri_mesh
from .pipeline import run_pipeline, run_stages
from .toolpath import ToolpathProgram, write_toolpath, read_toolpath

__all__ = [
    "Config", "parse_config", "Material", "BoundaryConditions", "solve_elasticity",
    "principal_decomposition", "TetMesh", "TriMesh", "load_tet_mesh", "load_tri_mesh",
    "run_pipeline", "run_stages", "ToolpathProgram", "write_toolpath", "read_toolpath",
]

__version__ = "0.1.0"
