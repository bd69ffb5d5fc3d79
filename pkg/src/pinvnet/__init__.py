"""Pseudoinversion training of single-hidden-layer networks.

Random input weights, an SVD-based solve for the output layer, stability
diagnostics through the smallest-singular-value/threshold ratio, ridge
tuning inside the critical region, and a multi-trial benchmark protocol.
"""

__version__ = "0.1.0"
