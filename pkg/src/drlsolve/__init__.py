"""Time-marching actor-critic solver for ODEs and PDEs, with reference solvers."""

__version__ = "0.1.0"
