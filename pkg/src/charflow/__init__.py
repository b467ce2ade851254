"""charflow: characteristics-based lab for hyperbolic systems with integral boundary conditions."""

__version__ = "0.1.0"
