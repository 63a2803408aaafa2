"""Sequential Monte Carlo for cut-Bayesian posteriors."""

__version__ = "0.1.0"

from .baseline import DirectSampler, compare_runs, energy_distance, ks_statistic, run_direct, split_rhat
from .bounds import (
    BoundsReport,
    BoundsRequest,
    bounds_report,
    chi2_gaussian_closed_form,
    chi2_lipschitz_bound,
    chi2_self_normalized_mc,
    required_N,
    required_N_tempered,
    required_S,
)
from .exceptions import (
    ConfigurationError,
    CutSMCError,
    DegenerateWeightsError,
    InvalidInputError,
    KernelFailureError,
    NumericalFailure,
)
from .kernels import KernelConfig, mala_step, mutate, rwmh_step, slice_step
from .model import (
    AppendixCModel,
    CallableModel,
    ExternalProcessModel,
    GaussianConjugateModel,
    NormalCut,
    PointMassCut,
    UniformCut,
)
from .sequencing import CutSequence, DistanceMetric, TSPOrdering, permute_tsp, temper_sequence, tsp_path_order
from .smc import CutSMCSampler, SmcConfig, estimate, run_cut_smc
