"""Single source for the package version string (kept in sync with pyproject)."""

__version__ = "0.1.0"
