"""tetforge: parallel 3D Delaunay triangulation and refinement.

Incremental insertion with ghost tetrahedra and filtered/exact predicates;
points are ordered along a closed space-filling curve and inserted either
sequentially or by curve-partitioned worker threads. Hot kernels run in a
compiled extension when built, with a pure-Python fallback selected at
import (see :mod:`tetforge.kernels`).
"""

from .kernels import HAVE_COMPILED, backend_name, get_backend
from .meshstore import DegenerateInput, MeshStore, init_first_tet
from .predicates import (FilterBounds, Sign, SubDeterminants,
                         compute_subdeterminants, in_sphere, in_sphere_cached,
                         orient3d, perturbed_in_sphere)
from .sequential import triangulate
from .audit import AuditError, audit_mesh

try:
    from .parallel import parallel_triangulate
    from .refine import SizeField, SurfaceMesh, refine
except ImportError:  # partial builds during development
    pass

__version__ = "0.1.0"

__all__ = [
    "AuditError",
    "DegenerateInput",
    "FilterBounds",
    "HAVE_COMPILED",
    "MeshStore",
    "Sign",
    "SizeField",
    "SubDeterminants",
    "SurfaceMesh",
    "audit_mesh",
    "backend_name",
    "compute_subdeterminants",
    "get_backend",
    "in_sphere",
    "in_sphere_cached",
    "init_first_tet",
    "orient3d",
    "parallel_triangulate",
    "perturbed_in_sphere",
    "refine",
    "triangulate",
    "__version__",
]
