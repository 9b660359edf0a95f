"""Mean estimation from one-shot quantum sampling oracles, on a dense simulator."""

__version__ = "0.1.0"
