"""Joint two-agent trajectory prediction with weighted conditional attention."""

__version__ = "0.1.0"
