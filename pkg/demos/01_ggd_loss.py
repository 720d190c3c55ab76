"""
The generalized Gaussian likelihood
===================================

A walk through the per-pixel loss: how the shape parameter moves between
Laplace and Gaussian behaviour, and what the variance looks like.
"""

import numpy as np

from urgan.ggd import GGDParams, ggd_pdf, ggd_sample, ggd_variance, nll_grad, nll_term

# density at the origin for a few shapes, unit scale
for beta in (0.8, 1.0, 2.0, 4.0):
    print(f"beta={beta:>3}: pdf(0) = {ggd_pdf(0.0, GGDParams(0.0, 1.0, beta)):.4f}")

# beta=2 with alpha = sigma*sqrt(2) is the Gaussian NLL, constants included
sigma = 0.3
print("gaussian check:", nll_term(0.5, 0.2, sigma * np.sqrt(2), 2.0),
      0.5 * (0.3 / sigma) ** 2 + np.log(sigma * np.sqrt(2 * np.pi)))

# the loss penalises residuals less steeply as beta drops
residuals = np.array([0.01, 0.1, 0.5, 1.0])
for beta in (0.8, 1.0, 2.0):
    print(f"beta={beta}: loss", np.round(nll_term(residuals, 0.0, 0.2, beta), 3))

# gradients: d/dx_hat, d/dalpha, d/dbeta
print("grad at eps=0.4, alpha=0.5, beta=1.5:", nll_grad(0.4, 0.0, 0.5, 1.5))

# heavy tails inflate the variance for the same scale
for beta in (0.8, 1.0, 2.0, 4.0):
    draws = ggd_sample(GGDParams(0.0, 1.0, beta), 200_000, seed=0)
    print(f"beta={beta}: variance {ggd_variance(1.0, beta):.3f}  sampled {draws.var():.3f}")
