"""Bernoulli-factory selection in Wright-Fisher models, their moment duals and
Allen-Cahn voting representations."""

__version__ = "0.1.0"
