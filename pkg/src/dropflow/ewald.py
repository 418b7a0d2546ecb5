"""Doubly periodic fast summation of stokeslet and stresslet sums.

The screened (Hasimoto) decomposition splits each lattice sum into a
short-range real-space part, summed over a neighbour list, and a smooth
Fourier part.  The Fourier part is evaluated either by a direct loop
over wave numbers (the O(N^2) reference) or on an FFT grid with
truncated-Gaussian spreading (the spectral path, O(N log N)).  Truncation
radii and grid sizes come from closed-form RMS error estimates.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _fastsum
from .kernels import EULER_GAMMA


@dataclass(frozen=True)
class PeriodicBox:
    l1: float
    l2: float

    def __post_init__(self):
        if self.l1 <= 0 or self.l2 <= 0:
            raise ValueError("box lengths must be positive")

    @property
    def volume(self):
        return self.l1 * self.l2

    def tau(self, p1, p2):
        return complex(p1 * self.l1, p2 * self.l2)

    def fold(self, z):
        """Map points into the primary cell [0, l1) x [0, l2)."""
        z = np.asarray(z, dtype=complex)
        return np.mod(z.real, self.l1) + 1j * np.mod(z.imag, self.l2)

    def min_image(self, dz):
        """Shift separations to the nearest periodic image."""
        dz = np.asarray(dz, dtype=complex)
        return (dz.real - self.l1 * np.round(dz.real / self.l1)
                + 1j * (dz.imag - self.l2 * np.round(dz.imag / self.l2)))


@dataclass
class EwaldParams:
    xi: float
    r_c: float
    k_max: float
    grid_m1: int
    grid_m2: int
    window_p: int = 24
    tol: float = 1e-10
    eta: float = field(default=0.0)

    def validate(self, box):
        if self.r_c > min(box.l1, box.l2) / 2 + 1e-12:
            raise ValueError("r_c exceeds half the box")
        if self.window_p > min(self.grid_m1, self.grid_m2):
            raise ValueError("window support exceeds the grid")


@dataclass
class SourceSet:
    """Point sources in the primary cell: positions, 2-vector strengths
    (complex f1 + i f2) and, for stresslet sums, unit normals."""

    positions: np.ndarray
    strengths: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=complex)
        self.strengths = np.asarray(self.strengths, dtype=complex)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=complex)


# ---------------------------------------------------------------------------
# truncation error estimates and parameter selection

def estimate_truncation(kind, Q, L, xi, cutoff):
    """Closed-form RMS truncation error of a truncated Ewald sum.

    ``cutoff`` is the real-space radius r_c for the *-real kinds and the
    Fourier cap k_inf for the *-fourier kinds.
    """
    if kind == "stokeslet-real":
        val2 = Q * np.pi / (4 * L * L) * np.exp(-2 * xi**2 * cutoff**2) / xi**2
    elif kind == "stresslet-real":
        val2 = 2 * np.pi * Q / (L * L) * xi**2 * cutoff**2 \
            * np.exp(-2 * xi**2 * cutoff**2)
    elif kind == "stokeslet-fourier":
        val2 = 4 * Q / (L**5 * np.pi * cutoff) * np.exp(-cutoff**2 / (2 * xi**2))
    elif kind == "stresslet-fourier":
        val2 = 8 * np.pi * Q * cutoff / L**5 * np.exp(-cutoff**2 / (2 * xi**2))
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return float(np.sqrt(val2))


def _bisect_decreasing(f, lo, hi, tol_rel=1e-3, max_iter=200):
    """Smallest root of f(x) = 0 for f decreasing through zero on [lo, hi]."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol_rel * hi:
            break
    return hi


def fft_friendly(n):
    """Smallest even 5-smooth integer >= n."""
    n = max(int(n), 2)
    if n % 2:
        n += 1
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 2


def select_params(tol, r_c, box, Q_G=1.0, Q_T=1.0, window_p=24):
    """Ewald parameters meeting an RMS tolerance at a given cut-off radius.

    The splitting parameter is the smallest xi at which both real-space
    estimates reach the tolerance; k_inf then caps both Fourier
    estimates, rounded up to an FFT-friendly grid.
    """
    L = max(box.l1, box.l2)
    if r_c > min(box.l1, box.l2) / 2:
        raise ValueError("r_c exceeds half the box")

    def real_err(xi):
        return max(estimate_truncation("stokeslet-real", Q_G, L, xi, r_c),
                   estimate_truncation("stresslet-real", Q_T, L, xi, r_c))

    xi_lo = 1.0 / (np.sqrt(2.0) * r_c)  # stresslet estimate peaks here
    xi_hi = xi_lo
    for _ in range(100):
        if real_err(xi_hi) < tol:
            break
        xi_hi *= 1.5
    else:
        raise ValueError("tolerance unreachable for this cut-off radius")
    if real_err(xi_lo) < tol:
        xi = xi_lo
    else:
        xi = _bisect_decreasing(lambda x: real_err(x) - tol, xi_lo, xi_hi)

    def fourier_err(k):
        return max(estimate_truncation("stokeslet-fourier", Q_G, L, xi, k),
                   estimate_truncation("stresslet-fourier", Q_T, L, xi, k))

    k_lo = xi  # stresslet Fourier estimate peaks at k = xi
    k_hi = k_lo
    for _ in range(100):
        if fourier_err(k_hi) < tol:
            break
        k_hi *= 1.5
    k_inf = _bisect_decreasing(lambda k: fourier_err(k) - tol, k_lo, k_hi)

    m1 = fft_friendly(int(np.ceil(k_inf * box.l1 / np.pi)))
    m2 = fft_friendly(int(np.ceil(k_inf * box.l2 / np.pi)))
    m1 = max(m1, window_p)
    m2 = max(m2, window_p)
    k_max = np.pi * min(m1 / box.l1, m2 / box.l2)
    params = EwaldParams(xi=xi, r_c=r_c, k_max=k_max, grid_m1=m1, grid_m2=m2,
                         window_p=window_p, tol=tol)
    params.eta = _window_shape(params, box)
    return params


def _window_shape_for(xi, window_p, h):
    """Balanced Gaussian window shape for support window_p at spacing h."""
    w = window_p * h / 2.0
    m = 0.95 * np.sqrt(np.pi * window_p)
    return (2.0 * xi * w / m) ** 2


def _window_shape(params, box):
    """Gaussian window shape: balanced truncation/approximation errors,
    capped below 1 so the deconvolved factor still decays."""
    h = max(box.l1 / params.grid_m1, box.l2 / params.grid_m2)
    return min(0.95, _window_shape_for(params.xi, params.window_p, h))


# ---------------------------------------------------------------------------
# neighbour lists

def build_neighbor_list(points, r_c, box, sources=None):
    """(target index, source index, image shift) triples within r_c.

    ``sources`` defaults to ``points`` (all-pairs case); the self pair at
    zero shift is excluded.  Cell binning, O(N) for bounded density.
    """
    if r_c > min(box.l1, box.l2) / 2 + 1e-12:
        raise ValueError("r_c exceeds half the box")
    tz = box.fold(points)
    same = sources is None
    sz = tz if same else box.fold(sources)
    pt, ps, shx, shy = _fastsum.find_pairs(
        np.ascontiguousarray(tz.real), np.ascontiguousarray(tz.imag),
        np.ascontiguousarray(sz.real), np.ascontiguousarray(sz.imag),
        float(r_c), box.l1, box.l2)
    if same:
        keep = ~((pt == ps) & (shx == 0.0) & (shy == 0.0))
        pt, ps, shx, shy = pt[keep], ps[keep], shx[keep], shy[keep]
    return pt, ps, shx + 1j * shy


# ---------------------------------------------------------------------------
# real-space part (shared by both summation paths)

def _self_coeff(xi):
    return -(0.5 * EULER_GAMMA + np.log(xi) + 1.0) / (4.0 * np.pi)


def _e1_table(params):
    """Hermite table of E1 over the screened kernel's argument range,
    cached on the parameter object."""
    tab = getattr(params, "_e1_tab", None)
    x_max = (params.xi * params.r_c) ** 2 * 1.0000001
    if tab is None or tab[3] < x_max:
        h, g, gp = _fastsum.make_e1_table(x_max)
        tab = (h, g, gp, x_max)
        params._e1_tab = tab
    return tab[0], tab[1], tab[2]


def _real_part(kind, src, targets, params, box, pairs=None):
    tz = box.fold(targets)
    sz = box.fold(src.positions)
    tx = np.ascontiguousarray(tz.real)
    ty = np.ascontiguousarray(tz.imag)
    sx = np.ascontiguousarray(sz.real)
    sy = np.ascontiguousarray(sz.imag)
    if pairs is None:
        pairs = _fastsum.find_pairs(tx, ty, sx, sy,
                                    float(params.r_c), box.l1, box.l2)
    pt, ps, shx, shy = pairs
    f1 = np.ascontiguousarray(src.strengths.real)
    f2 = np.ascontiguousarray(src.strengths.imag)
    out1 = np.zeros(len(tz))
    out2 = np.zeros(len(tz))
    if kind == "stokeslet":
        _fastsum.real_sum_stokeslet(pt, ps, shx, shy, tx, ty, sx, sy, f1, f2,
                                    params.xi, _self_coeff(params.xi),
                                    out1, out2)
    elif kind == "stresslet":
        n1 = np.ascontiguousarray(src.normals.real)
        n2 = np.ascontiguousarray(src.normals.imag)
        _fastsum.real_sum_stresslet(pt, ps, shx, shy, tx, ty, sx, sy, f1, f2,
                                    n1, n2, params.xi, out1, out2)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return out1 + 1j * out2


def _fourier_fields(kind, src):
    """Real scalar source fields entering the Fourier sum."""
    f1 = src.strengths.real
    f2 = src.strengths.imag
    if kind == "stokeslet":
        return np.stack([f1, f2])
    n1 = src.normals.real
    n2 = src.normals.imag
    return np.stack([f1 * n1, f1 * n2, f2 * n1, f2 * n2])


def _fourier_multiply(kind, k1, k2, xi, hats):
    """Contract kernel Fourier factors with transformed source fields.

    k1, k2 broadcast to the grid; hats indexed like _fourier_fields.
    The k = 0 entry is zeroed (handled by the zero-mode term).
    """
    k2sq = k1 * k1 + k2 * k2
    safe = np.where(k2sq == 0.0, 1.0, k2sq)
    kh1 = k1 / np.sqrt(safe)
    kh2 = k2 / np.sqrt(safe)
    w = k2sq / (4.0 * xi * xi)
    if kind == "stokeslet":
        pref = np.where(k2sq == 0.0, 0.0, (1.0 + w) * np.exp(-w) / safe)
        u1 = pref * ((1.0 - kh1 * kh1) * hats[0] - kh1 * kh2 * hats[1])
        u2 = pref * (-kh1 * kh2 * hats[0] + (1.0 - kh2 * kh2) * hats[1])
        return u1, u2
    pref = np.where(k2sq == 0.0, 0.0,
                    (1.0 + w) * np.exp(-w) / np.sqrt(safe))
    h11, h12, h21, h22 = hats
    a1 = h11 * kh1 + h12 * kh2          # H_{1m} khat_m
    a2 = h21 * kh1 + h22 * kh2
    c1 = kh1 * h11 + kh2 * h21          # khat_l H_{l1}
    c2 = kh1 * h12 + kh2 * h22
    tr = h11 + h22
    kk = kh1 * c1 + kh2 * c2            # khat_l H_{lm} khat_m
    u1 = 1j * pref * (a1 + c1 + kh1 * (tr - 2.0 * kk))
    u2 = 1j * pref * (a2 + c2 + kh2 * (tr - 2.0 * kk))
    return u1, u2


def _zero_mode(kind, src, box):
    if kind != "stresslet":
        return 0.0 + 0.0j
    z = box.fold(src.positions)
    fn = (src.strengths.real * src.normals.real
          + src.strengths.imag * src.normals.imag)
    return np.sum(z * fn) / box.volume


def _fourier_direct(kind, src, targets, params, box):
    """Direct double loop over wave numbers |k_i| <= k_max (reference)."""
    tz = box.fold(targets)
    sz = box.fold(src.positions)
    n1 = int(np.floor(params.k_max * box.l1 / (2 * np.pi) + 1e-12))
    n2 = int(np.floor(params.k_max * box.l2 / (2 * np.pi) + 1e-12))
    k1 = 2 * np.pi * np.arange(-n1, n1 + 1) / box.l1
    k2 = 2 * np.pi * np.arange(-n2, n2 + 1) / box.l2
    # structure factors by separable phase products
    e1s = np.exp(-1j * np.outer(k1, sz.real))
    e2s = np.exp(-1j * np.outer(k2, sz.imag))
    fields = _fourier_fields(kind, src)
    hats = np.stack([(e1s * f) @ e2s.T for f in fields])
    K1 = k1[:, None] * np.ones_like(k2)[None, :]
    K2 = np.ones_like(k1)[:, None] * k2[None, :]
    u1k, u2k = _fourier_multiply(kind, K1, K2, params.xi, hats)
    e1t = np.exp(1j * np.outer(k1, tz.real))
    e2t = np.exp(1j * np.outer(k2, tz.imag))
    u1 = np.einsum("kt,kl,lt->t", e1t, u1k, e2t, optimize=True)
    u2 = np.einsum("kt,kl,lt->t", e1t, u2k, e2t, optimize=True)
    return (u1 + 1j * u2) / box.volume + _zero_mode(kind, src, box)


def _fourier_spectral(kind, src, targets, params, box):
    """FFT-grid evaluation with truncated-Gaussian spreading.

    When the balanced window shape would exceed the eta < 1 cap (coarse
    grids at loose tolerances), the grid is oversampled so the window
    aliasing stays below the truncation tolerance; modes outside the
    direct sum's |k_i| <= k_max box are zeroed either way, keeping the
    two summation paths equivalent.
    """
    xi = params.xi
    m1, m2 = params.grid_m1, params.grid_m2
    over = 1
    while _window_shape_for(xi, params.window_p,
                            max(box.l1 / (over * m1), box.l2 / (over * m2))) \
            >= 0.95 and over < 4:
        over += 1
    # at least two extra rows so the +-k_max columns both sit on the grid,
    # matching the direct sum's symmetric truncation box
    m1 = fft_friendly(max(over * m1, m1 + 2))
    m2 = fft_friendly(max(over * m2, m2 + 2))
    h1, h2 = box.l1 / m1, box.l2 / m2
    p = params.window_p
    eta = min(0.95, _window_shape_for(xi, p, max(h1, h2)))
    inv_eta = 2.0 * xi * xi / eta
    pref = 2.0 * xi * xi / (np.pi * eta)

    tz = box.fold(targets)
    sz = box.fold(src.positions)
    fields = _fourier_fields(kind, src)
    grids = np.zeros((fields.shape[0], m1, m2))
    _fastsum.spread_gaussian(np.ascontiguousarray(sz.real),
                             np.ascontiguousarray(sz.imag),
                             np.ascontiguousarray(fields), m1, m2, h1, h2,
                             p, inv_eta, pref, grids)
    k1 = 2 * np.pi * np.fft.fftfreq(m1, d=h1)
    k2 = 2 * np.pi * np.fft.fftfreq(m2, d=h2)
    K1 = k1[:, None] * np.ones(m2)[None, :]
    K2 = np.ones(m1)[:, None] * k2[None, :]
    kbox = (np.abs(K1) <= params.k_max + 1e-12) \
        & (np.abs(K2) <= params.k_max + 1e-12)
    deconv = np.where(
        kbox, np.exp(eta * (K1 * K1 + K2 * K2) / (4.0 * xi * xi)), 0.0) \
        * (h1 * h2)
    hats = np.stack([np.fft.fft2(g) * deconv for g in grids])
    u1k, u2k = _fourier_multiply(kind, K1, K2, xi, hats)
    # the lattice sums of real sources are real; drop FFT round-off
    u_grids = np.stack([
        np.real(np.fft.ifft2(u1k)) * (m1 * m2 / box.volume),
        np.real(np.fft.ifft2(u2k)) * (m1 * m2 / box.volume),
    ])
    out = np.empty((2, len(tz)))
    _fastsum.gather_gaussian(np.ascontiguousarray(tz.real),
                             np.ascontiguousarray(tz.imag), u_grids,
                             m1, m2, h1, h2, p, inv_eta, pref, out)
    return out[0] + 1j * out[1] + _zero_mode(kind, src, box)


def combined_layer_sum(src_stress, src_stokes, targets, params, box,
                       pairs=None):
    """Fused periodic sums: stresslet of one source set plus stokeslet of
    another on the same targets (one spreading pass, shared transforms,
    one real-space sweep).  Both sets must share positions; the zero
    mode is excluded (zero-mean gauge).
    """
    params.validate(box)
    tz = box.fold(targets)
    sz = box.fold(src_stress.positions)
    tx = np.ascontiguousarray(tz.real)
    ty = np.ascontiguousarray(tz.imag)
    sx = np.ascontiguousarray(sz.real)
    sy = np.ascontiguousarray(sz.imag)
    if pairs is None:
        pairs = _fastsum.find_pairs(tx, ty, sx, sy, float(params.r_c),
                                    box.l1, box.l2)
    pt, ps, shx, shy = pairs
    out1 = np.zeros(len(tz))
    out2 = np.zeros(len(tz))
    e1h, e1g, e1gp = _e1_table(params)
    _fastsum.real_sum_combined(
        pt, ps, shx, shy, tx, ty, sx, sy,
        np.ascontiguousarray(src_stokes.strengths.real),
        np.ascontiguousarray(src_stokes.strengths.imag),
        np.ascontiguousarray(src_stress.strengths.real),
        np.ascontiguousarray(src_stress.strengths.imag),
        np.ascontiguousarray(src_stress.normals.real),
        np.ascontiguousarray(src_stress.normals.imag),
        params.xi, _self_coeff(params.xi), e1h, e1g, e1gp, out1, out2)
    real = out1 + 1j * out2

    m1, m2 = params.grid_m1, params.grid_m2
    over = 1
    while _window_shape_for(params.xi, params.window_p,
                            max(box.l1 / (over * m1), box.l2 / (over * m2))) \
            >= 0.95 and over < 4:
        over += 1
    m1 = fft_friendly(max(over * m1, m1 + 2))
    m2 = fft_friendly(max(over * m2, m2 + 2))
    h1, h2 = box.l1 / m1, box.l2 / m2
    p = params.window_p
    xi = params.xi
    eta = min(0.95, _window_shape_for(xi, p, max(h1, h2)))
    inv_eta = 2.0 * xi * xi / eta
    pref = 2.0 * xi * xi / (np.pi * eta)
    fields = np.concatenate([_fourier_fields("stresslet", src_stress),
                             _fourier_fields("stokeslet", src_stokes)])
    grids = np.zeros((6, m1, m2))
    _fastsum.spread_gaussian(sx, sy, np.ascontiguousarray(fields), m1, m2,
                             h1, h2, p, inv_eta, pref, grids)
    k1 = 2 * np.pi * np.fft.fftfreq(m1, d=h1)
    k2 = 2 * np.pi * np.fft.fftfreq(m2, d=h2)
    K1 = k1[:, None] * np.ones(m2)[None, :]
    K2 = np.ones(m1)[:, None] * k2[None, :]
    kbox = (np.abs(K1) <= params.k_max + 1e-12) \
        & (np.abs(K2) <= params.k_max + 1e-12)
    deconv = np.where(
        kbox, np.exp(eta * (K1 * K1 + K2 * K2) / (4.0 * xi * xi)), 0.0) \
        * (h1 * h2)
    hats = np.stack([np.fft.fft2(g) * deconv for g in grids])
    t1, t2 = _fourier_multiply("stresslet", K1, K2, xi, hats[:4])
    g1, g2 = _fourier_multiply("stokeslet", K1, K2, xi, hats[4:])
    u_grids = np.stack([
        np.real(np.fft.ifft2(t1 + g1)) * (m1 * m2 / box.volume),
        np.real(np.fft.ifft2(t2 + g2)) * (m1 * m2 / box.volume),
    ])
    out = np.empty((2, len(tz)))
    _fastsum.gather_gaussian(tx, ty, u_grids, m1, m2, h1, h2, p,
                             inv_eta, pref, out)
    return real + out[0] + 1j * out[1]


def direct_ewald(kind, src, targets, params, box, include_zero_mode=True,
                 pairs=None):
    """O(N^2) reference: neighbour-listed real sum plus a direct k loop.

    ``include_zero_mode`` keeps the explicit stresslet k = 0 term, which
    normalises the double-layer identity; dropping it gives the
    zero-mean-flow gauge instead.  ``pairs`` reuses a precomputed
    neighbour-pair list for the real sum."""
    params.validate(box)
    out = _real_part(kind, src, targets, params, box, pairs=pairs) \
        + _fourier_direct(kind, src, targets, params, box)
    if not include_zero_mode:
        out = out - _zero_mode(kind, src, box)
    return out


def spectral_ewald(kind, src, targets, params, box, include_zero_mode=True,
                   pairs=None):
    """Fast evaluation: identical real part, FFT-gridded Fourier part."""
    params.validate(box)
    out = _real_part(kind, src, targets, params, box, pairs=pairs) \
        + _fourier_spectral(kind, src, targets, params, box)
    if not include_zero_mode:
        out = out - _zero_mode(kind, src, box)
    return out
