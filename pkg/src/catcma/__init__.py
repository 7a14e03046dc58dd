"""Mixed continuous/categorical black-box optimization with CatCMA."""

from catcma.benchmarks import REGISTRY, MixedObjective, make_objective, mc_proximity, rosenbrock_clo, sphere_com
from catcma.hyperparams import (
    Hyperparameters,
    ProblemDims,
    binomial_tail_probability,
    default_hyperparameters,
    margin_variant,
    recommended_margin,
)
from catcma.optimizer import AskTellError, Best, Candidate, CatCMA, TerminationCriteria

__all__ = [
    "AskTellError",
    "Best",
    "Candidate",
    "CatCMA",
    "Hyperparameters",
    "MixedObjective",
    "ProblemDims",
    "REGISTRY",
    "TerminationCriteria",
    "binomial_tail_probability",
    "default_hyperparameters",
    "make_objective",
    "margin_variant",
    "mc_proximity",
    "recommended_margin",
    "rosenbrock_clo",
    "sphere_com",
]
