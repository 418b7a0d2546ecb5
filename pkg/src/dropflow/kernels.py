"""Pointwise 2D Stokes Green's functions and their Ewald (Hasimoto) splits.

All kernels act on 2-vectors and return fully materialised tensors
(2x2 for the stokeslet family, 2x2x2 for the stresslet family).
Sign conventions: the free-space stokeslet is

    G_jl(r) = (1/4pi) (-delta_jl log|r| + rhat_j rhat_l),

the convention under which G = G^R + F^-1[G^F] holds exactly for the
Hasimoto split implemented here.  The stresslet is the double-layer
kernel T_jlm(r) = (1/pi) r_j r_l r_m / |r|^4 with r = target - source;
the screened pair (stresslet_real, stresslet_fourier) decomposes the
negated kernel -T, which is the one generated by applying the
third-order derivative operator to the biharmonic Green's function
(see tests for the operator-consistency checks).
"""

import numpy as np
from numba import njit

EULER_GAMMA = 0.5772156649015329

_DELTA = np.eye(2)


@njit(cache=True)
def exp_e1(x):
    """Exponential integral E1(x) for x > 0.

    Power series below x = 4 (where the continued fraction still
    converges slowly), modified Lentz continued fraction above;
    absolute accuracy ~1e-15 over the usable range.
    """
    if x <= 0.0:
        return np.inf
    if x < 4.0:
        # E1(x) = -gamma - log x + sum_k (-1)^(k+1) x^k / (k * k!)
        s = 0.0
        term = 1.0
        for k in range(1, 60):
            term *= -x / k
            add = -term / k
            s += add
            if abs(add) < 1e-18 * (abs(s) + 1e-30):
                break
        return -EULER_GAMMA - np.log(x) + s
    if x > 700.0:
        return 0.0
    # E1(x) = exp(-x) / (x + 1 - 1/(x + 3 - 4/(x + 5 - 9/(...))))
    tiny = 1e-300
    b = x + 1.0
    c = 1e300
    d = 1.0 / b
    h = d
    for k in range(1, 200):
        a = -1.0 * k * k
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        if c == 0.0:
            c = tiny
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * np.exp(-x)


def _as_nonzero_vec(r, name):
    r = np.asarray(r, dtype=float)
    if r.shape != (2,):
        raise ValueError(f"{name} must be a 2-vector, got shape {r.shape}")
    if r[0] == 0.0 and r[1] == 0.0:
        raise ValueError(f"{name} = 0 is singular for this kernel")
    return r


def stokeslet(r):
    """Free-space stokeslet G_jl(r) = (1/4pi)(-delta_jl log|r| + rhat_j rhat_l)."""
    r = _as_nonzero_vec(r, "r")
    r2 = r @ r
    rhat = r / np.sqrt(r2)
    return (-_DELTA * 0.5 * np.log(r2) + np.outer(rhat, rhat)) / (4.0 * np.pi)


def stresslet(r):
    """Double-layer stresslet T_jlm(r) = (1/pi) r_j r_l r_m / |r|^4."""
    r = _as_nonzero_vec(r, "r")
    r2 = r @ r
    return np.einsum("j,l,m->jlm", r, r, r) / (np.pi * r2 * r2)


def stokeslet_real(r, xi):
    """Screened real-space stokeslet G^R_jl(r, xi)."""
    r = _as_nonzero_vec(r, "r")
    r2 = r @ r
    rhat = r / np.sqrt(r2)
    x = xi * xi * r2
    return (np.exp(-x) * (np.outer(rhat, rhat) - _DELTA)
            + 0.5 * exp_e1(x) * _DELTA) / (4.0 * np.pi)


def stokeslet_fourier(k, xi):
    """Fourier-space stokeslet factor G^F_jl(k, xi); real-valued, k != 0."""
    k = _as_nonzero_vec(k, "k")
    k2 = k @ k
    khat = k / np.sqrt(k2)
    w = k2 / (4.0 * xi * xi)
    return (_DELTA - np.outer(khat, khat)) * (1.0 + w) * np.exp(-w) / k2


def stokeslet_self(xi):
    """Self-interaction limit lim_{r->0} (G^R - G) = c(xi) * delta_jl."""
    c = -(0.5 * EULER_GAMMA + np.log(xi) + 1.0) / (4.0 * np.pi)
    return c * np.eye(2)


def _sym3(a, b):
    """delta_{jl} c_m + delta_{jm} c_l + delta_{lm} c_j  as a (2,2,2) tensor."""
    return (np.einsum("jl,m->jlm", a, b) + np.einsum("jm,l->jlm", a, b)
            + np.einsum("lm,j->jlm", a, b))


def stresslet_real(r, xi):
    """Screened real-space stresslet T^R_jlm(r, xi).

    Decays like exp(-xi^2 r^2); near r = 0 it approaches -T(r), so the
    Ewald sum needs no stresslet self term.
    """
    r = _as_nonzero_vec(r, "r")
    rn = np.sqrt(r @ r)
    rhat = r / rn
    x2 = xi * xi * rn * rn
    rrr = np.einsum("j,l,m->jlm", rhat, rhat, rhat)
    return np.exp(-x2) * (-4.0 * rrr * (1.0 + x2) / rn
                          + 2.0 * xi * xi * rn * _sym3(_DELTA, rhat)) / (4.0 * np.pi)


def stresslet_fourier(k, xi):
    """Fourier-space stresslet factor T^F_jlm(k, xi); purely imaginary."""
    k = _as_nonzero_vec(k, "k")
    kn = np.sqrt(k @ k)
    khat = k / kn
    w = kn * kn / (4.0 * xi * xi)
    kkk = np.einsum("j,l,m->jlm", khat, khat, khat)
    return 1j * (_sym3(_DELTA, khat) - 2.0 * kkk) * (1.0 + w) * np.exp(-w) / kn


def stresslet_zero_mode(y):
    """Zero-wavenumber stresslet term T^{F,(0)}_jlm(y) = delta_lm y_j."""
    y = np.asarray(y, dtype=float)
    return np.einsum("lm,j->jlm", _DELTA, y)


def biharmonic(r, alpha=1.5):
    """Biharmonic Green's function B(r) = -(r^2/8pi)(log r - alpha)."""
    rn = np.linalg.norm(np.asarray(r, dtype=float))
    if rn == 0.0:
        return 0.0
    return -rn * rn * (np.log(rn) - alpha) / (8.0 * np.pi)


def biharmonic_real(r, xi):
    """Screened real-space part of the biharmonic Green's function."""
    rn = np.linalg.norm(np.asarray(r, dtype=float))
    if rn == 0.0:
        raise ValueError("r = 0 is singular")
    x = xi * xi * rn * rn
    return (x * exp_e1(x) - np.exp(-x)) / (16.0 * np.pi * xi * xi)


def biharmonic_fourier(k, xi):
    """Fourier-space part of the biharmonic split, -gamma_hat(k)/k^4."""
    kn = np.linalg.norm(np.asarray(k, dtype=float))
    if kn == 0.0:
        raise ValueError("k = 0 is excluded")
    w = kn * kn / (4.0 * xi * xi)
    return -(1.0 + w) * np.exp(-w) / kn**4


def laplace_real(r, xi):
    """Screened real-space part of the 2D Laplace Green's function."""
    rn = np.linalg.norm(np.asarray(r, dtype=float))
    if rn == 0.0:
        raise ValueError("r = 0 is singular")
    x = xi * xi * rn * rn
    return (-np.exp(-x) + exp_e1(x)) / (4.0 * np.pi)


def laplace_fourier(k, xi):
    """Fourier-space part of the Laplace split, gamma_hat(k)/k^2."""
    kn = np.linalg.norm(np.asarray(k, dtype=float))
    if kn == 0.0:
        raise ValueError("k = 0 is excluded")
    w = kn * kn / (4.0 * xi * xi)
    return (1.0 + w) * np.exp(-w) / kn**2
