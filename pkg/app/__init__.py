"""
Structural RNN traffic speed forecasting engine
"""

__version__ = "1.0.0"
