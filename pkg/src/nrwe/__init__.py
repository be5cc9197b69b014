"""Decompose OLS treatment coefficients into a weighted effect and a misspecification bias."""

__version__ = "0.1.0"

from .core import DataMatrix, abel_covariance, cov, fwl_residualize, var
from .condmean import fit_cond_mean
from .decomposition import Decomposition, local_decompose, decompose
from .errors import InputError, NrweError, NumericError

__all__ = ["DataMatrix", "Decomposition", "InputError", "NrweError", "NumericError",
           "abel_covariance", "local_decompose", "cov", "decompose", "fit_cond_mean",
           "fwl_residualize", "var", "__version__"]
