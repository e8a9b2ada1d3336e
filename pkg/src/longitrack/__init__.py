"""Longitudinal audio biomarker modelling: features, a GRU sequence classifier,
per-day trajectories and their evaluation."""

__version__ = "0.1.0"
