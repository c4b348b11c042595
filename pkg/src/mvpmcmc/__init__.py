"""Multilevel particle MCMC for partially observed McKean-Vlasov SDEs."""

from .core import (Dataset, EmpiricalMeasure, Kernel, ModelSpec, ParamTransform, ParamVector,
                   TestFunctional, eval_interaction, from_unconstrained, to_unconstrained)
from .errors import (ConfigError, DegeneracyError, DomainError, MVError, NumericError,
                     WeightCollapse, WeightDegeneracy)
from .filters import bootstrap_pf, delta_pf, normalize_log_weights
from .laws import Level, propagate_coupled_laws, propagate_laws
from .mcmc import ChainConfig, ProposalConfig, run_bilevel_chain, run_pmcmc_chain
from .models import make_model
from .multilevel import LevelPlan, allocate_levels, run_mlpmcmc
from .rng import StreamKey

__version__ = "0.1.0"
