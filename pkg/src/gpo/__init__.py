"""Guaranteed payoff optimization for POMDPs."""
