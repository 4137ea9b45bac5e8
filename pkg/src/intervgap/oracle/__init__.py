"""Ground truth: discrete structural models and synthetic data generators."""

from .dgp import Equation, ParametricDGP, application_dgp, random_binary_dgp
from .scm import (
    DiscreteSCM,
    Variable,
    counterfactual_truth,
    enumerate_identified,
    random_scm,
)

__all__ = [
    "DiscreteSCM",
    "Equation",
    "ParametricDGP",
    "Variable",
    "application_dgp",
    "counterfactual_truth",
    "enumerate_identified",
    "random_binary_dgp",
    "random_scm",
]
