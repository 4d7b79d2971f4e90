"""Ensemble-sampling error mitigation for imprecise Gaussian samplers."""
__version__ = "0.1.0"
