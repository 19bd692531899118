"""Latent threshold dynamic transfer response factor models."""
