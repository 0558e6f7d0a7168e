"""Empirical Bayes generalized linear models via a penalty on posterior means."""
from .errors import DataError, DegeneratePriorError, EBGLMError, ModelFormatError
from .family import Family, bernoulli, gaussian, poisson
from .io import FORMAT_VERSION, ModelDocument, load_csv, load_model, save_model
from .objective import Dataset, eval_gradient, eval_objective
from .penalty import eval_penalty, reconstruct_posterior
from .priors import NormalMixture, PointLaplace, PointNormal, invert_posterior_mean, marginal_loglik, posterior_mean
from .solver import FitResult, SolverConfig, fit, predict

__version__ = "0.1.0"

__all__ = [
    "DataError", "DegeneratePriorError", "EBGLMError", "ModelFormatError",
    "Family", "bernoulli", "gaussian", "poisson",
    "FORMAT_VERSION", "ModelDocument", "load_csv", "load_model", "save_model",
    "Dataset", "eval_gradient", "eval_objective",
    "eval_penalty", "reconstruct_posterior",
    "NormalMixture", "PointLaplace", "PointNormal", "invert_posterior_mean", "marginal_loglik", "posterior_mean",
    "FitResult", "SolverConfig", "fit", "predict",
    "__version__",
]
