"""Learned control-barrier-function safety filters for latent state trajectories."""

__version__ = "0.1.0"
