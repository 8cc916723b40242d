"""Hierarchical stochastic user equilibrium: soft path costs, a dual solver and
population dynamics on nested networks."""
