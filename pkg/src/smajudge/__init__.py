"""Sequential two-court multi-task model for appeal judgment prediction."""

__version__ = "0.1.0"
