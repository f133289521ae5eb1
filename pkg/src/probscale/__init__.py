"""Probabilistic scaling of simple approximating sets for chance constraints,
and an offline-sampling stochastic MPC built on it."""

from probscale.errors import (
    EmptySetError,
    ProbScaleError,
    ScalingError,
    SingularShapeError,
    SolverError,
    StageError,
    UnboundedError,
)
from probscale.polytope import CenteredPolytope, HPolytope
from probscale.sas import NormSAS, SampledSAS, design_norm_sas, design_sampled_poly
from probscale.scaling import (
    ScaledSAS,
    ScalingConfig,
    learning_sample_size,
    probabilistic_scale,
    scaling_sample_size,
)
from probscale.uncertainty import DistributionSpec, SampleStream

__version__ = "0.1.0"
