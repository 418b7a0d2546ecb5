"""Pseudes-spectral insoluble-surfactant transport on a drop interface.

The concentration lives on the uniform (equidistant in arc length) grid.
Advection and dilution terms are explicit; the interface diffusion is a
diagonal Fourier multiplier treated implicitly by the time stepper.
"""

import numpy as np

from . import spectral
from .layerpot import ModelValidityError


def explicit_rhs(grid, rho, u_n, u_t, u_t_mod):
    """Explicit part of d rho/dt: advection by the modified tangential
    velocity, flux of the physical tangential velocity, and dilution.

    All alpha-derivatives are spectral; s_alpha is the grid's arc factor.
    """
    s_alpha = grid.arc_factor
    drho = spectral.spectral_derivative(rho).real
    flux = spectral.spectral_derivative(rho * u_t).real
    return (u_t_mod * drho - flux) / s_alpha - rho * u_n * grid.curvature


def implicit_symbol(j, peclet, s_alpha):
    """Fourier multiplier of the implicit diffusion term, -j^2/(Pe s_a^2)."""
    if peclet <= 0:
        raise ValueError("Peclet number must be positive")
    if s_alpha <= 0:
        raise ValueError("arc factor must be positive")
    j = np.asarray(j, dtype=float)
    return -(j * j) / (peclet * s_alpha * s_alpha)


def sigma_from_rho(rho, elasticity):
    """Linear equation of state sigma = 1 - E rho."""
    if elasticity < 0:
        raise ValueError("elasticity number must be non-negative")
    sigma = 1.0 - elasticity * np.asarray(rho, dtype=float)
    if np.any(sigma <= 0):
        raise ModelValidityError("surface tension driven non-positive "
                                 "(surfactant overload)")
    return sigma


def total_mass(grid, rho):
    """Trapezoid (spectrally exact) surfactant mass over the interface."""
    return float(np.sum(np.asarray(rho, dtype=float)) * grid.spacing)
