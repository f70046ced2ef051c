"""Learning-based position and stiffness control of a simulated antagonistic
pneumatic variable-stiffness joint."""

__version__ = "0.1.0"
