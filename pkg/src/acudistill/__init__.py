"""Core-user selection and Artificial Core User distillation for collaborative filtering."""

__version__ = "0.1.0"
