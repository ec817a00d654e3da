"""Simulation library for casual-bystander open quantum systems."""

__version__ = "0.1.0"
