"""Repeater-chain entanglement distribution: analytic, Monte Carlo and event-driven engines."""

__version__ = "0.1.0"
