"""Dyadic Walsh time-frequency analysis: tiles, trees, variational Carleson operators and their decompositions."""
