"""dvfkit: inversion and spectral characterization of deformation vector fields.

A deformation vector field (DVF) u maps a reference domain onto a target
domain via x -> x + u(x).  This toolkit numerically inverts such fields by
fixed-point iteration with adaptive residual feedback control, predicts
where and how fast the iteration converges from the spectrum of the
displacement Jacobian, and evaluates results via inverse-consistency
residuals and true-error studies on analytic fields.
"""

__version__ = "0.1.0"

from .control import (
    Alternating,
    Constant,
    FeasibleRange,
    Hybrid,
    MidRange,
    OptimalControl,
    SpatiallyVariant,
    alternating_from_percentiles,
    build_mu_map,
    feasible_range,
    midrange_mu,
    neighborhood_gamma,
    optimal_mu,
)
from .errors import (
    EmptyDomain,
    EmptyField,
    GeometryMismatch,
    HeaderMismatch,
    IndexOutOfRange,
    InfeasibleControl,
    InvalidSpec,
    OutOfBounds,
    TruncatedPayload,
    Uncontrollable,
    UnsupportedSampleType,
)
from .grid import (
    DomainMask,
    GridGeometry,
    ScalarField,
    VectorField,
    sample_vector,
    sample_vector_many,
    valid_domain,
)
from .io import export_slice, read_field, read_report, write_field, write_report
from .metrics import (
    PercentileSummary,
    contraction_area,
    contraction_map,
    inversion_error,
    magnitude_field,
    percentile,
    residual_u,
    summarize,
)
from .solver import (
    InversionConfig,
    InversionRun,
    OobPolicy,
    VoxelStatus,
    invert,
    iterate_step,
    residual_v,
    scaled98_initial,
)
from .spectral import (
    JacobianSample,
    SpectralMaps,
    characterize,
    displacement_jacobian,
    eigenvalues,
    gamma_of,
)
from .synth import (
    AnalyticDvfSpec,
    AnalyticPair,
    AppendixRadial,
    LinearMap,
    PlanarRotation,
    Translation,
    generate,
    origin_neighborhood,
    ring_image,
)
