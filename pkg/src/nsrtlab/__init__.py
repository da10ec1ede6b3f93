"""Learning neuro-symbolic relational transition models and planning with them."""

__version__ = "0.1.0"
