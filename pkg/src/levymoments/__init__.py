"""Lévy-process numerics: triplets, generators, simulation and moment checks."""
