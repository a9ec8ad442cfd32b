"""Distribution-preserving message embedding with exact min-max error analysis."""

from .optimize import (
    DistortionMetric,
    OptimizerReport,
    beta_star_of,
    exponent_bound,
    exponent_bound_sweep,
    maximize_entropy,
    minimize_overhang,
)
from .prob import (
    INF,
    DimensionError,
    MaterializationError,
    Pmf,
    RngSeed,
    SequenceSpace,
    entropy,
    iid_extension,
    kl_divergence,
    overhang,
    tv_distance,
)
from .scheme import (
    CouplingTable,
    DecoderSpec,
    SchemeBundle,
    SchemeParams,
    build_coupling,
    build_finite_scheme,
    build_pzeta_star,
)
from .typical import AsymptoticScheme, TypicalIndex, build_asymptotic_scheme

__all__ = [name for name in dir() if not name.startswith("_")]
