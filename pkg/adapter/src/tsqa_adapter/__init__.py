"""Extractive QA reader process speaking newline-delimited JSON over stdio."""

__version__ = "0.1.0"
