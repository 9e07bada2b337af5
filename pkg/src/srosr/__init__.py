"""Open set recognition via sparse coding residuals and extreme-value tail models."""

__version__ = "0.1.0"
