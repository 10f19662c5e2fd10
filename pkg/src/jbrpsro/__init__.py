"""Policy-space response oracles with joint-experience best responses."""

__version__ = "0.1.0"
