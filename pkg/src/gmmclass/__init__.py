"""Generative dense classification with Gaussian mixtures.

Per-class mixture densities are fit by momentum (Sinkhorn) EM over a feature
space that is itself trained discriminatively; the same model then serves
closed-set prediction, anomaly scoring and calibration analysis.
"""

__version__ = "0.1.0"
