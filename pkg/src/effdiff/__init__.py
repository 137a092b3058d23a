"""Effective 2-D diffusion tensors for 3-D diffusion confined between two
surfaces, with independent numerical oracles and a conservative solver for
the projected diffusion equation."""

from .expr import (
    EvalDomainError, Expr, ExprError, ParseError,
    differentiate, evaluate, parse, to_text,
)
from .geometry import (
    DegenerateConfigError, Domain, ExpressionField, FrameData, GeometryError,
    GridField, OutsideDomainError, PlaneConfig, PlaneFrame, ScalarField,
    SurfacePair, SurfaceValidationError, frame_for_planes, frame_for_surfaces,
    frame_from_gradients, surface_normals, width,
)
from .tensor import (
    EffectiveTensor, EllipsoidData, ExtremeTiltError, MediumParams,
    TensorError, channel_recovery, effective_tensor, extreme_tilt_tensor,
    polar_decompose, rho_omega, to_cartesian, zero_tilt_omega,
)
from .quadrature import (
    ApexProximityError, OracleError, SingularSystemError, WedgeQuadratureJob,
    quadrature_tensor,
)
from .brownian import (
    BrownianError, McJob, McResult, Slab, StepTooLargeError,
    mc_projected_tensor,
)
from .pde import (
    ConfigurationError, PdeError, PdeGrid, StabilityError, evolve,
    stability_bound, step_finite_rate, step_infinite_rate,
)

__version__ = "0.1.0"
