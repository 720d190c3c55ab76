"""Closed-form generalized Gaussian distribution (GGD) primitives.

The density with location ``mu``, scale ``alpha`` and shape ``beta`` is

.. math::
    p(\\epsilon) = \\frac{\\beta}{2\\alpha\\Gamma(1/\\beta)}
                   \\exp\\left(-\\left(\\frac{|\\epsilon-\\mu|}{\\alpha}\\right)^\\beta\\right)

``beta = 2`` is a Gaussian with variance ``alpha**2 / 2`` and ``beta = 1`` is a
Laplace with variance ``2 * alpha**2``. Smaller shapes give heavier tails.

All functions broadcast over numpy arrays and return python floats for scalar
input.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

BETA_MAX = 8.0


class GGDDomainError(ValueError):
    """Raised when a quantity is evaluated outside its mathematical domain."""


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _check_scale_shape(alpha, beta, beta_max=BETA_MAX):
    alpha = _as_float_array(alpha, "alpha")
    beta = _as_float_array(beta, "beta")
    if np.any(alpha <= 0):
        raise ValueError("alpha must be > 0")
    if np.any(beta <= 0):
        raise ValueError("beta must be > 0")
    if beta_max is not None and np.any(beta > beta_max):
        raise ValueError(f"beta must be <= {beta_max}")
    return alpha, beta


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


@dataclass(frozen=True)
class GGDParams:
    """Location, scale and shape of a generalized Gaussian."""

    mu: float = 0.0
    alpha: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ValueError("mu must be finite")
        _check_scale_shape(self.alpha, self.beta)


def ggd_logpdf(eps, params: GGDParams):
    eps = _as_float_array(eps, "eps")
    a, b = params.alpha, params.beta
    u = np.abs(eps - params.mu) / a
    return _out(np.log(b) - np.log(2.0 * a) - special.gammaln(1.0 / b) - u**b)


def ggd_pdf(eps, params: GGDParams):
    """Density of the GGD at ``eps``.

    Raises
    ------
    ValueError
        If ``eps`` is not finite.
    """
    return _out(np.exp(ggd_logpdf(eps, params)))


def nll_term(x_hat, x, alpha, beta):
    """Per-pixel negative log-likelihood of the residual ``x_hat - x``.

    Computes ``(|x_hat - x| / alpha)**beta - log(beta / (2 alpha)) + log Gamma(1/beta)``.
    With ``beta = 2`` and ``alpha = sigma * sqrt(2)`` this is exactly the
    Gaussian NLL with standard deviation ``sigma``.
    """
    alpha, beta = _check_scale_shape(alpha, beta)
    eps = _as_float_array(x_hat, "x_hat") - _as_float_array(x, "x")
    u = np.abs(eps) / alpha
    return _out(u**beta - np.log(beta / (2.0 * alpha)) + special.gammaln(1.0 / beta))


def nll_grad(x_hat, x, alpha, beta):
    """Analytic gradient of :func:`nll_term`.

    Returns
    -------
    d_xhat, d_alpha, d_beta
        Partial derivatives with respect to ``x_hat``, ``alpha`` and ``beta``.

    Raises
    ------
    GGDDomainError
        At zero residual with ``beta < 1``, where the derivative in ``x_hat``
        is unbounded.
    """
    alpha, beta = _check_scale_shape(alpha, beta)
    eps = _as_float_array(x_hat, "x_hat") - _as_float_array(x, "x")
    eps, alpha, beta = np.broadcast_arrays(eps, alpha, beta)
    if np.any((eps == 0) & (beta < 1)):
        raise GGDDomainError("gradient is singular at zero residual for beta < 1")

    u = np.abs(eps) / alpha
    zero = u == 0
    safe_u = np.where(zero, 1.0, u)
    u_beta = np.where(zero, 0.0, safe_u**beta)
    # sign(0) = 0 picks the symmetric subgradient at beta = 1
    d_xhat = np.where(zero, 0.0, (beta / alpha) * np.sign(eps) * safe_u ** (beta - 1.0))
    d_alpha = (1.0 - beta * u_beta) / alpha
    d_beta = u_beta * np.where(zero, 0.0, np.log(safe_u)) - 1.0 / beta - special.digamma(1.0 / beta) / beta**2
    return _out(d_xhat), _out(d_alpha), _out(d_beta)


def ggd_variance(alpha, beta):
    """Variance ``alpha**2 Gamma(3/beta) / Gamma(1/beta)`` of the GGD.

    Unlike the density functions this accepts any positive shape, because it
    is applied to unbounded network outputs. The log-gamma form stays finite
    for large ``beta`` (the ratio tends to 1/3). Very heavy tails (``beta``
    below about 0.02 at unit scale) have a variance beyond float range and
    return ``inf``.
    """
    alpha, beta = _check_scale_shape(alpha, beta, beta_max=None)
    log_var = 2.0 * np.log(alpha) + special.gammaln(3.0 / beta) - special.gammaln(1.0 / beta)
    with np.errstate(over="ignore"):
        return _out(np.exp(log_var))


def ggd_sample(params: GGDParams, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` i.i.d. samples by the gamma-power transform.

    ``G ~ Gamma(1/beta)``, random sign ``s``, sample ``mu + s * alpha * G**(1/beta)``.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    g = rng.gamma(shape=1.0 / params.beta, scale=1.0, size=n)
    sign = 2.0 * rng.integers(0, 2, size=n) - 1.0
    return params.mu + sign * params.alpha * g ** (1.0 / params.beta)
