"""Desk-scale lab for masked diffusion language models: difficulty-scored
curriculum masking, confidence-threshold parallel decoding, and trajectory
analysis on a from-scratch tiny transformer."""

__version__ = "0.1.0"
