"""Boundary-integral simulation of deformable drops in doubly periodic 2D Stokes flow."""

__version__ = "0.1.0"
