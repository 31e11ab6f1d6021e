"""Photocount statistics of spatially correlated twin beams.

Statistical model of joint signal-idler photocount distributions, a Monte
Carlo frame simulator with software pairing, and the analysis pipeline that
extracts correlation profiles, detection efficiencies and noise-reduction
curves from paired-count sweeps.
"""

__version__ = "0.1.0"

from .distributions import (
    CountDist,
    JointCountDist,
    ModeParams,
    TwinBeamParams,
    component_dist,
    joint_photon_dist,
    mandel_rice,
)
from .detection import (
    ComponentCountDists,
    CorrelationProfile,
    DetectorParams,
    ProfileKind,
    binomial_thin,
    broken_pair_dists,
    component_count_dists,
    coverage_probability,
    detection_response,
    genuine_pair_dist,
    joint_unpaired_dist,
    noise_count_dist,
    response_matrix,
    split_genuine_pairs,
    unpaired_component_dist,
)
from .errors import (
    ConfigError,
    DataFormatError,
    NumericalInstabilityError,
    ParameterError,
    TruncationError,
    TwinbeamError,
)

__all__ = [name for name in dir() if not name.startswith("_")]
