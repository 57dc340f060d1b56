"""Nonequilibrium sequential Monte Carlo for energy-based models.

Walker ensembles carry Jarzynski log-weights along arbitrary
time-discrete parameter protocols, so that reweighted averages are
exactly equilibrium expectations and the mean exponentiated weight
tracks partition-function ratios, for any step size.  Built on top of
that: cross-entropy training of EBMs with unbiased gradients, CD/PCD
baselines, and an order-of-convergence study for drifted (flow-based)
kernels with exact Gaussian-path fields.
"""

from . import models, kernels, smc, interpolant, trainer

__version__ = "0.1.0"

__all__ = ["models", "kernels", "smc", "interpolant", "trainer", "__version__"]
