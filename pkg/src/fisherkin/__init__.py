"""Fisher information along kinetic collision flows."""

__version__ = "0.1.0"
