"""Reinsurance surplus simulation, generative claim models and RL-driven layer tuning."""

__version__ = "0.1.0"
