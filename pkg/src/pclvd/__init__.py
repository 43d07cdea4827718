"""Probabilistic-circuit engine with latent-variable distillation training."""

__version__ = "0.1.0"
