"""uvtailor: seam-driven UV unwrapping with differentiable refinement."""

__version__ = "0.1.0"

from .mesh import Chart, Mesh, MeshError, NonManifoldError, VertexAttributes, compute_attributes, cut_along_seams, load_obj, save_obj

__all__ = [
    "__version__",
    "Chart",
    "Mesh",
    "MeshError",
    "NonManifoldError",
    "VertexAttributes",
    "compute_attributes",
    "cut_along_seams",
    "load_obj",
    "save_obj",
]
