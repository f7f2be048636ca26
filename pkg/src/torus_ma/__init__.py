"""Monge-Ampere type equations in bidegree (n-1, n-1) on flat complex tori."""

__version__ = "0.1.0"
