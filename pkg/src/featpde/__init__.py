"""featpde: value functions and safety probabilities of high-dimensional
stochastic systems via feature reduction, low-dimensional PDEs, and
physics-informed network training, cross-checked against Monte Carlo,
finite-difference, and Riccati oracles."""

__version__ = "0.1.0"
