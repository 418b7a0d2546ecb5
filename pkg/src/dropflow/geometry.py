"""Closed-curve representation and the two interface discretisations.

A deformable interface carries two linked grids: a discretisation that is
uniform in arc length (used for transport and time stepping) and a
composite 16-point Gauss-Legendre panel grid (used for layer potentials).
Positions live in the complex plane; curves are parametrised
counter-clockwise so the outward unit normal is -i z'/|z'|.

Channel walls are supported as "winding" curves: z(theta + 2pi) =
z(theta) + shift for a lattice vector shift.  Winding curves can only be
discretised with panels, never with the uniform/FFT machinery.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import spectral

PANEL_SIZE = 16
MIN_UNIFORM_N = 32

GL_NODES, GL_WEIGHTS = leggauss(PANEL_SIZE)


# ---------------------------------------------------------------------------
# analytic curve descriptors

class CurveSpec:
    """Analytic closed-curve descriptor; subclasses supply z(t) and derivatives."""

    #: lattice shift accumulated over one parameter period (0 for closed loops)
    winding_shift = 0.0 + 0.0j

    def point(self, t):
        raise NotImplementedError

    def deriv(self, t):
        raise NotImplementedError

    def deriv2(self, t):
        raise NotImplementedError

    @property
    def is_winding(self):
        return self.winding_shift != 0.0

    def check_closed(self, tol=1e-10):
        gap = self.point(np.array([2 * np.pi])) - self.point(np.array([0.0]))
        if abs(gap[0] - self.winding_shift) > tol:
            raise ValueError("curve is not closed over one parameter period")


class Circle(CurveSpec):
    def __init__(self, center=0.0 + 0.0j, radius=1.0):
        self.center = complex(center)
        self.radius = float(radius)

    def point(self, t):
        return self.center + self.radius * np.exp(1j * np.asarray(t, dtype=float))

    def deriv(self, t):
        return 1j * self.radius * np.exp(1j * np.asarray(t, dtype=float))

    def deriv2(self, t):
        return -self.radius * np.exp(1j * np.asarray(t, dtype=float))


class Ellipse(CurveSpec):
    def __init__(self, center=0.0 + 0.0j, a=1.0, b=1.0, rotation=0.0):
        self.center = complex(center)
        self.a = float(a)
        self.b = float(b)
        self.rot = np.exp(1j * float(rotation))

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self.center + self.rot * (self.a * np.cos(t) + 1j * self.b * np.sin(t))

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        return self.rot * (-self.a * np.sin(t) + 1j * self.b * np.cos(t))

    def deriv2(self, t):
        t = np.asarray(t, dtype=float)
        return self.rot * (-self.a * np.cos(t) - 1j * self.b * np.sin(t))


class SineWall(CurveSpec):
    """Periodic channel wall: a superposition of sines riding on y = level.

    ``side='above'`` means the solid material occupies y > wall(x); the
    traversal direction is chosen so the outward solid normal points into
    the fluid.  The curve winds once around the periodic cell in x.
    """

    def __init__(self, period, level, amplitudes=(), wavenumbers=(), phases=None,
                 side="above", x0=0.0):
        self.period = float(period)
        self.level = float(level)
        self.amp = np.asarray(amplitudes, dtype=float)
        self.wav = np.asarray(wavenumbers, dtype=int)
        self.pha = (np.zeros_like(self.amp) if phases is None
                    else np.asarray(phases, dtype=float))
        if side not in ("above", "below"):
            raise ValueError("side must be 'above' or 'below'")
        self.side = side
        self.x0 = float(x0)
        sgn = 1.0 if side == "above" else -1.0
        self._sgn = sgn
        self.winding_shift = complex(sgn * self.period)

    def _xy(self, t, d):
        t = np.asarray(t, dtype=float)
        u = self._sgn * t
        if d == 0:
            x = self.x0 + self.period * u / (2 * np.pi)
            y = self.level + sum(a * np.sin(k * u + p)
                                 for a, k, p in zip(self.amp, self.wav, self.pha))
            return x + 1j * np.asarray(y, dtype=float) + 0.0 * t
        if d == 1:
            x = self._sgn * self.period / (2 * np.pi)
            y = sum(self._sgn * a * k * np.cos(k * u + p)
                    for a, k, p in zip(self.amp, self.wav, self.pha))
            return (x + 1j * np.asarray(y, dtype=float)) + 0.0 * t
        x = 0.0
        y = sum(-a * k * k * np.sin(k * u + p)
                for a, k, p in zip(self.amp, self.wav, self.pha))
        return (x + 1j * np.asarray(y, dtype=float)) + 0.0 * t

    def point(self, t):
        return self._xy(t, 0)

    def deriv(self, t):
        return self._xy(t, 1)

    def deriv2(self, t):
        return self._xy(t, 2)

    def contains(self, z, box=None):
        """Material-side test (diagnostics only)."""
        z = np.asarray(z, dtype=complex)
        x = z.real if box is None else np.mod(z.real - self.x0, box.l1) + self.x0
        v = 2 * np.pi * (x - self.x0) / self.period
        y_wall = self.level + sum(a * np.sin(k * v + p)
                                  for a, k, p in zip(self.amp, self.wav, self.pha))
        return (z.imag > y_wall) if self.side == "above" else (z.imag < y_wall)


class PointLoop(CurveSpec):
    """Closed curve through a table of points, by trigonometric interpolation."""

    def __init__(self, points):
        points = np.asarray(points, dtype=complex)
        if len(points) < 8:
            raise ValueError("need at least 8 points for a sensible interpolant")
        self.coeffs = spectral.trig_coeffs(points)

    def point(self, t):
        return spectral.trig_eval(self.coeffs, t)

    def deriv(self, t):
        return spectral.trig_eval(self.coeffs, t, deriv=1)

    def deriv2(self, t):
        return spectral.trig_eval(self.coeffs, t, deriv=2)


# ---------------------------------------------------------------------------
# arc-length reparametrisation

class _ArcLength:
    """Cumulative arc length of a curve spec, by spectral quadrature of |z'|."""

    def __init__(self, spec, n_fine=2048):
        self.spec = spec
        t = 2 * np.pi * np.arange(n_fine) / n_fine
        speed = np.abs(spec.deriv(t))
        self.coeffs = spectral.trig_coeffs(speed)
        self.length = 2 * np.pi * self.coeffs[0].real

    def s(self, t):
        return spectral.antiderivative_eval(self.coeffs, t).real

    def speed(self, t):
        return np.abs(self.spec.deriv(t))

    def invert(self, s_targets, tol=1e-12, max_iter=60):
        """Parameter values t with s(t) = target, by safeguarded Newton."""
        s_targets = np.asarray(s_targets, dtype=float)
        t = s_targets * (2 * np.pi / self.length)  # first guess: constant speed
        for _ in range(max_iter):
            res = self.s(t) - s_targets
            if np.max(np.abs(res)) < tol * self.length:
                break
            t = t - res / np.maximum(self.speed(t), 1e-14)
        return t


# ---------------------------------------------------------------------------
# the uniform (equidistant in arc length) grid

class UniformGrid:
    """Equidistant-in-arc-length nodes of a closed interface.

    Derivative and curvature fields are the exact spectral derivatives of
    the stored point spectrum, so they are recomputable and bit-stable.
    """

    def __init__(self, points):
        points = np.asarray(points, dtype=complex)
        n = len(points)
        if n % PANEL_SIZE != 0:
            raise ValueError(f"node count must be a multiple of {PANEL_SIZE}, got {n}")
        if n < MIN_UNIFORM_N:
            raise ValueError(f"node count must be at least {MIN_UNIFORM_N}, got {n}")
        self.points = points
        self.n_points = n
        coeffs = spectral.trig_coeffs(points)
        self._coeffs = coeffs
        self.deriv1 = spectral.from_coeffs(coeffs * spectral.deriv_modes(n, 1))
        self.deriv2 = spectral.from_coeffs(coeffs * spectral.deriv_modes(n, 2))
        speed = np.abs(self.deriv1)
        self.length = 2 * np.pi * np.mean(speed)
        self.arc_factor = self.length / (2 * np.pi)
        self.normals = -1j * self.deriv1 / speed
        self.curvature = np.imag(np.conj(self.deriv1) * self.deriv2) / speed**3

    @property
    def alphas(self):
        return 2 * np.pi * np.arange(self.n_points) / self.n_points

    @property
    def spacing(self):
        return self.length / self.n_points

    def interp(self, alphas, deriv=0):
        return spectral.trig_eval(self._coeffs, alphas, deriv=deriv)

    def spacing_spread(self):
        """Relative spread of |z'| over the nodes (equidistance measure)."""
        speed = np.abs(self.deriv1)
        return (speed.max() - speed.min()) / np.mean(speed)

    def area(self):
        """Signed enclosed area, (1/2) Im oint conj(z) dz (spectrally exact)."""
        return 0.5 * np.mean(np.imag(np.conj(self.points) * self.deriv1)) * 2 * np.pi


def make_uniform(spec, n):
    """Discretise a closed curve with n nodes equidistant in arc length."""
    if n % PANEL_SIZE != 0:
        raise ValueError(f"n must be a multiple of {PANEL_SIZE}, got {n}")
    if n < MIN_UNIFORM_N:
        raise ValueError(f"n must be at least {MIN_UNIFORM_N}, got {n}")
    if spec.is_winding:
        raise ValueError("winding curves cannot carry a uniform grid")
    spec.check_closed()
    arc = _ArcLength(spec, n_fine=max(2048, 8 * n))
    t = arc.invert(arc.length * np.arange(n) / n)
    return UniformGrid(spec.point(t))


def equidistribute(grid, fields=()):
    """Re-equidistribute a uniform grid along its own trig interpolant.

    Nodal ``fields`` riding on the grid are re-sampled at the new
    parameter values (a pure tangential reparametrisation).
    """
    arc = _ArcLength(_InterpolantCurve(grid), n_fine=max(2048, 4 * grid.n_points))
    t = arc.invert(arc.length * np.arange(grid.n_points) / grid.n_points)
    new = UniformGrid(grid.interp(t))
    out = [spectral.trig_eval(spectral.trig_coeffs(np.asarray(f, dtype=complex)), t)
           for f in fields]
    return new, out, t


class _InterpolantCurve(CurveSpec):
    def __init__(self, grid):
        self.grid = grid

    def point(self, t):
        return self.grid.interp(t)

    def deriv(self, t):
        return self.grid.interp(t, deriv=1)

    def deriv2(self, t):
        return self.grid.interp(t, deriv=2)


def regrid(grid, target_spacing):
    """Resample to the multiple of 16 closest to length/target_spacing.

    Pure Fourier zero-padding/truncation; returns the grid unchanged when
    the node count does not change.
    """
    if target_spacing <= 0:
        raise ValueError("target_spacing must be positive")
    n_new = int(round(grid.length / target_spacing / PANEL_SIZE)) * PANEL_SIZE
    n_new = max(n_new, MIN_UNIFORM_N)
    if n_new == grid.n_points:
        return grid
    return UniformGrid(spectral.resample(grid.points, n_new))


def krasny_filter(spectrum, level):
    """Zero all coefficients with magnitude below the filter level."""
    if level < 0:
        raise ValueError("filter level must be non-negative")
    spectrum = np.asarray(spectrum, dtype=complex)
    out = spectrum.copy()
    out[np.abs(out) < level] = 0.0
    return out


# ---------------------------------------------------------------------------
# composite Gauss-Legendre panels

class PanelGrid:
    """Composite 16-point Gauss-Legendre discretisation of a curve.

    Flat per-node arrays plus panel bookkeeping.  ``w`` are parameter
    weights (d tau = zp dalpha), ``arc_w = w |zp|`` integrates dS.
    """

    def __init__(self, nodes, zp, zpp, w, panel_edges_alpha, panel_edges_z,
                 winding_shift=0.0 + 0.0j):
        self.nodes = np.asarray(nodes, dtype=complex)
        self.zp = np.asarray(zp, dtype=complex)
        self.zpp = np.asarray(zpp, dtype=complex)
        self.w = np.asarray(w, dtype=float)
        self.n_points = len(self.nodes)
        self.n_panels = self.n_points // PANEL_SIZE
        self.panel_edges_alpha = np.asarray(panel_edges_alpha, dtype=float)
        self.panel_edges_z = np.asarray(panel_edges_z, dtype=complex)
        self.winding_shift = complex(winding_shift)
        speed = np.abs(self.zp)
        self.arc_w = self.w * speed
        self.normals = -1j * self.zp / speed
        self.curvature = np.imag(np.conj(self.zp) * self.zpp) / speed**3
        self.panel_lengths = self.arc_w.reshape(self.n_panels, PANEL_SIZE).sum(axis=1)

    @property
    def length(self):
        return float(np.sum(self.arc_w))

    def panel_slice(self, j):
        return slice(j * PANEL_SIZE, (j + 1) * PANEL_SIZE)

    def panel_endpoints(self, j):
        za = self.panel_edges_z[j]
        zb = self.panel_edges_z[j + 1] if j + 1 < len(self.panel_edges_z) \
            else self.panel_edges_z[0] + self.winding_shift
        return za, zb


def to_panels(grid, n_panels):
    """Map a uniform grid to its Gauss-Legendre panel grid.

    Node positions are the trig interpolant of the uniform nodes at the
    Gauss-Legendre parameter points; 16 * n_panels must equal n_points.
    """
    if PANEL_SIZE * n_panels != grid.n_points:
        raise ValueError("16 * n_panels must equal the uniform node count")
    edges = 2 * np.pi * np.arange(n_panels + 1) / n_panels
    half = np.pi / n_panels
    mids = edges[:-1] + half
    alphas = (mids[:, None] + half * GL_NODES[None, :]).ravel()
    w = np.tile(GL_WEIGHTS, n_panels) * half
    nodes = grid.interp(alphas)
    zp = grid.interp(alphas, deriv=1)
    zpp = grid.interp(alphas, deriv=2)
    return PanelGrid(nodes, zp, zpp, w, edges[:-1], grid.interp(edges[:-1]))


def panels_from_curve(spec, n_panels, equal_arclength=True):
    """Panel grid directly on an analytic curve (solids, incl. winding walls)."""
    spec.check_closed()
    arc = _ArcLength(spec, n_fine=max(2048, 32 * n_panels))
    edges = 2 * np.pi * np.arange(n_panels + 1) / n_panels
    half = np.pi / n_panels
    mids = edges[:-1] + half
    alphas = (mids[:, None] + half * GL_NODES[None, :]).ravel()
    w = np.tile(GL_WEIGHTS, n_panels) * half
    if equal_arclength:
        # constant-speed reparametrisation t(alpha): |dz/dalpha| = L / 2pi
        t_nodes = arc.invert(arc.length * alphas / (2 * np.pi))
        t_edges = arc.invert(arc.length * edges[:-1] / (2 * np.pi))
        zt = spec.deriv(t_nodes)
        ztt = spec.deriv2(t_nodes)
        speed = np.abs(zt)
        tp = arc.length / (2 * np.pi) / speed
        # t'' from differentiating |z_t(t(a))| t'(a) = const
        dspeed = np.real(np.conj(zt) * ztt) / speed
        tpp = -dspeed * tp * tp * tp * (2 * np.pi / arc.length)
        nodes = spec.point(t_nodes)
        zp = zt * tp
        zpp = ztt * tp * tp + zt * tpp
        edges_z = spec.point(t_edges)
    else:
        nodes = spec.point(alphas)
        zp = spec.deriv(alphas)
        zpp = spec.deriv2(alphas)
        edges_z = spec.point(edges[:-1])
    return PanelGrid(nodes, zp, zpp, w, edges[:-1], edges_z,
                     winding_shift=spec.winding_shift)


_BARY_W = None


def _barycentric_weights():
    global _BARY_W
    if _BARY_W is None:
        x = GL_NODES
        w = np.ones(PANEL_SIZE)
        for m in range(PANEL_SIZE):
            w[m] = 1.0 / np.prod(x[m] - np.delete(x, m))
        _BARY_W = w
    return _BARY_W


def to_uniform(panels, values):
    """Per-panel degree-15 polynomial interpolation of panel-node values
    back to the uniform parameter nodes."""
    values = np.asarray(values)
    if values.shape[-1] != panels.n_points:
        raise ValueError("value array must be conformal with the panel grid")
    n = panels.n_points
    n_panels = panels.n_panels
    half = np.pi / n_panels
    bw = _barycentric_weights()
    out = np.empty(n, dtype=complex)
    alphas = 2 * np.pi * np.arange(n) / n
    for j in range(n_panels):
        sl = panels.panel_slice(j)
        a = alphas[sl]
        mid = panels.panel_edges_alpha[j] + half
        x = (a - mid) / half
        diff = x[:, None] - GL_NODES[None, :]
        exact = np.isclose(diff, 0.0, atol=1e-15)
        diff[exact] = 1.0
        wmat = bw[None, :] / diff
        num = wmat @ values[sl]
        den = wmat.sum(axis=1)
        vals = num / den
        hit_row, hit_col = np.where(exact)
        vals[hit_row] = values[sl][hit_col]
        out[sl] = vals
    return out
