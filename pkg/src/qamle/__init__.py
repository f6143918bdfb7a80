"""Quasi absolutely minimal Lipschitz extensions on finite metric domains."""

__version__ = "0.1.0"

from .errors import QamleError  # noqa: E402
from .functionals import FunctionalKind, Jet, JetField, ScalarField  # noqa: E402
from .geometry import BallUnion, DiscreteDomain, grid_domain  # noqa: E402
from .refine import RefinementConfig, solve_quasi_amle, violation_certificate  # noqa: E402

__all__ = [
    "__version__", "QamleError", "FunctionalKind", "Jet", "JetField", "ScalarField",
    "BallUnion", "DiscreteDomain", "grid_domain", "RefinementConfig",
    "solve_quasi_amle", "violation_certificate",
]
