"""Deep reinforcement learning stock-trading backtester."""

__version__ = "0.1.0"
