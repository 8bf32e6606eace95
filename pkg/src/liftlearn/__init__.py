"""Structure-preserving Lift & Learn for conservative PDEs."""
from .kernels import BACKEND
from .pde_bench import Problem, make_fom

__version__ = "0.1.0"

__all__ = ["BACKEND", "Problem", "make_fom", "__version__"]
