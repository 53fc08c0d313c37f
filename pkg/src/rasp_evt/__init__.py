"""Randomly perturbed piecewise maps: stationary densities and extreme-value statistics."""

from .boxes import Box, Region, sup_ball
from .density import (
    DensityProfile,
    UlamOperator,
    check_contraction_condition,
    closed_form_density,
    closed_form_measure,
    empirical_density,
    measure_of_region,
    operator_iterates,
    perturbed_operator,
    stationary_density_series,
    ulam_operator,
)
from .errors import RaspError
from .evt import (
    DistToOrbit,
    DistToPoint,
    LevelSequence,
    attractor_orbit,
    block_maxima,
    extremal_index_analytic,
    extremal_index_empirical,
    gumbel_cdf,
    ks_distance,
    level_sequence_analytic,
    level_sequence_empirical,
    level_sequence_exact,
)
from .maps import PiecewiseMap, baker, contraction_1d, make_map, quad_affine
from .rasp import NoiseParams, RandomOrbit, orbit, sample_stationary, sample_stationary_many

__version__ = "0.1.0"
