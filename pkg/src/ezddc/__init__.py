"""Dynamic discrete choice with Epstein-Zin preferences: solve, simulate, estimate."""

__version__ = "0.1.0"
