"""ICU heart-failure mortality prediction pipeline: synthetic cohorts,
preprocessing, statistical gates, boosted trees with baselines, bootstrap
evaluation, and exact TreeSHAP explanations."""

__version__ = "0.1.0"
