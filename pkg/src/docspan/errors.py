"""Shared exception types, mapped to CLI exit codes in cli.py."""


class ConfigError(Exception):
    """Invalid configuration or usage (exit code 1)."""


class DataError(Exception):
    """Unreadable, malformed or inconsistent input data (exit code 2)."""


class NumericError(Exception):
    """Non-finite values or failed numeric contracts (exit code 3)."""


class AnnotationError(ValueError):
    """Gold annotation violates the document model's contracts."""
