"""Decomposing group outcome disparities with interventional effects.

Modules
-------
data      tabular data, variable roles and the query vocabulary
glm       linear / logistic regression with AIC interaction selection
oaxaca    twofold Oaxaca-Blinder decompositions
gcomp     Monte Carlo g-computation with bootstrap inference
oracle    exact discrete structural models and synthetic data generators
pipeline  config-driven runs (used by the ``intervgap`` command)
"""

__version__ = "0.1.0"
