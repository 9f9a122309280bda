"""Markov-switching discrete-time Hawkes processes: simulation, EM inference, decoding."""

from .core import (
    BinnedSeries,
    ContinuousParams,
    DiscreteParams,
    EventSequence,
    ModelKind,
    aic,
    auxiliary_path,
    cont_to_disc,
    disc_to_cont,
    log_poisson_pmf,
    validate,
)
from .inference import EMConfig, FitReport, Posterior, e_step, fit_em, init_params
from .kernels import BACKEND
from .selection import SelectionResult, aligned_accuracy, map_decode, select_q, viterbi
from .simulate import (
    SimOutput,
    StatePath,
    bin_state_majority,
    discretize,
    sample_ctmc,
    sample_discrete,
    sample_switching_hawkes,
)

__version__ = "0.1.0"
