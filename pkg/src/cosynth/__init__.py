"""Co-synthesis of model parameters and insertion functions that enforce
current-state opacity on parametric stochastic discrete-event systems."""

__version__ = "0.1.0"

from .model import PsdesModel, parse_model, read_model, validate_assumptions  # noqa: E402
from .observer import build_observer, build_safe_observer, check_cso  # noqa: E402
from .opacity import brute_force_opacity, quantify_opacity  # noqa: E402
from .pmdp import build_pmdp  # noqa: E402
from .synthesis import SynthesisSpec, synthesize, verify_solution  # noqa: E402

__all__ = [
    "PsdesModel",
    "SynthesisSpec",
    "brute_force_opacity",
    "build_observer",
    "build_pmdp",
    "build_safe_observer",
    "check_cso",
    "parse_model",
    "quantify_opacity",
    "read_model",
    "synthesize",
    "validate_assumptions",
    "verify_solution",
]
