"""Stress-constrained design of lattice structures with port-reduced static condensation.

The package splits into a component library (``mesh``, ``fem``, ``offline``),
the condensed online solver (``condensed``), stress aggregation and its
adjoint (``stress``, ``sensitivity``), an interior-point optimizer
(``optimizer``), design post-processing (``postprocess``) and the
command-line front end (``cli``).
"""

from .condensed import CondensedModel, assemble_condensed, reconstruct, solve_condensed
from .config import RunConfig
from .fem import FullOrderModel, SimpLaw, plane_stress_lame
from .mesh import GroundStructure, MeshParams, instantiate_ground_structure, parse_layout
from .offline import ComponentLibrary, full_library, load_library, save_library, train_library
from .optimizer import SolverConfig, build_nlp, run_optimization
from .postprocess import postprocess
from .problems import build_cantilever, build_l_bracket
from .stress import KsConfig, assign_regions, compute_alpha

__version__ = "0.1.0"

__all__ = [
    "CondensedModel",
    "ComponentLibrary",
    "FullOrderModel",
    "GroundStructure",
    "KsConfig",
    "MeshParams",
    "RunConfig",
    "SimpLaw",
    "SolverConfig",
    "assemble_condensed",
    "assign_regions",
    "build_cantilever",
    "build_l_bracket",
    "build_nlp",
    "compute_alpha",
    "full_library",
    "instantiate_ground_structure",
    "load_library",
    "parse_layout",
    "plane_stress_lame",
    "postprocess",
    "reconstruct",
    "run_optimization",
    "save_library",
    "solve_condensed",
    "train_library",
]
