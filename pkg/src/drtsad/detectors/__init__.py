"""Anomaly detectors: graph-attention VAE (MUTANT-style) and anomaly transformer."""
