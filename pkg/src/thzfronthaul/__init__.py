"""Simulator and optimizer for MDD two-tier THz fronthaul in indoor cell-free massive MIMO."""

__version__ = "0.1.0"
