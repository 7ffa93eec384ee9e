"""Neural Galerkin normalizing flows for transition densities of diffusions."""

__version__ = "0.1.0"
