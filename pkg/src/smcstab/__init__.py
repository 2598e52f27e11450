"""Bootstrap particle filters on hidden Markov models, with exact oracles and stability experiments."""

from .errors import ConfigError, DegeneracyError, DimensionError, InputError, ModelError, RankError
from .exact import (
    exact_asymptotic_variance_discrete,
    exact_filter_variance_discrete,
    forward_filter_discrete,
    kalman_filter,
    variance_series_discrete,
)
from .functions import bounded_sigmoid, coordinate, indicator, parse_test_function
from .models import (
    Ar1Source,
    DiscreteHmm,
    GenericHmm,
    HmmSource,
    LinearGaussianModel,
    ReplaySource,
    simulate_hmm,
    stationary_observation_stream,
)
from .seeding import Purpose, SeedStream, derive_seed
from .smc import bootstrap_step, replicate_ensemble, run_filter

__version__ = "0.1.0"
