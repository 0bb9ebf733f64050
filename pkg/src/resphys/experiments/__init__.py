"""Experiment definitions, trajectory generators, metrics, ablations and end-to-end runs."""
