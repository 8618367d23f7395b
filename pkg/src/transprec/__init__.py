"""Transprecision configuration selection and runtime simulation for multi-task edge inference."""

__version__ = "0.1.0"
