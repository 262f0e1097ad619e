"""Proportional-fair operating point, LQI window control and slot-level simulation for EDCA WLANs."""

__version__ = "0.1.0"
