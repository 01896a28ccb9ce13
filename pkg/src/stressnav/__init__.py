"""Stress-based navigation for microscopic robots in viscous vessel flow."""
__version__ = "0.1.0"
