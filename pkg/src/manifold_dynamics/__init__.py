"""Class-manifold segregation dynamics and straggler analysis for small MLPs."""

__version__ = "0.1.0"
