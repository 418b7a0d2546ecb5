"""Gauss-Legendre panel machinery and analytic quadrature for nearly
singular and log-singular layer-potential integrals.

All integrals over a panel reduce, after an affine map sending the panel
endpoints to -1 and 1, to combinations of

    p_l = int t^l/(t - z) dt,   q_l = int t^l/(t - z)^2 dt,
    r_l = int t^l log(t - z) dt,

taken along the (mildly curved) mapped panel.  The integrands are
analytic between panel and chord, so p and q follow the chord
recursions; when the target sits between panel and chord the correct
branch adds 2 pi i to p_0 and the recursion propagates the residue
2 pi i z^l automatically.  The branch of p_0 is fixed by accumulating
principal logs along the mapped node polyline, which is a robust form
of the winding-number test.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.polynomial.legendre import leggauss

N_PANEL = 16
GL_NODES, GL_WEIGHTS = leggauss(N_PANEL)

#: upward recursion amplifies round-off like |z|^l; switch to the
#: zero-seeded downward recursion beyond this radius
UPWARD_LIMIT = 1.5


def vandermonde_solve(x, f):
    """Bjorck-Pereyra solve of sum_j c_j x_i^j = f_i.

    Far more accurate than LU or an explicit inverse at n = 16, where the
    monomial Vandermonde condition number is ~3e5.  ``f`` may carry extra
    trailing axes (stacked right-hand sides).  Real abscissae are handled
    componentwise, dodging numpy's inexact complex-by-real division.
    """
    x = np.asarray(x)
    n = len(x)
    f = np.asarray(f, dtype=complex)
    if not np.isrealobj(x) and not np.any(x.imag):
        x = x.real
    if np.isrealobj(x):
        cr = f.real.copy()
        ci = f.imag.copy()
        for k in range(n - 1):
            for i in range(n - 1, k, -1):
                d = x[i] - x[i - k - 1]
                cr[i] = (cr[i] - cr[i - 1]) / d
                ci[i] = (ci[i] - ci[i - 1]) / d
        for k in range(n - 2, -1, -1):
            for i in range(k, n - 1):
                cr[i] -= x[k] * cr[i + 1]
                ci[i] -= x[k] * ci[i + 1]
        return cr + 1j * ci
    c = _bp_complex(x, f)
    # two refinement steps with an extended-precision residual: the fit
    # feeds near-singular recursions whose large low-order terms amplify
    # any coefficient error by up to 1/d at mapped distance d
    V = np.vander(x, n, increasing=True).astype(np.clongdouble)
    fl = f.astype(np.clongdouble)
    for _ in range(2):
        resid = fl - V @ c.astype(np.clongdouble)
        c = c + _bp_complex(x, resid.astype(complex))
    return c


@njit(cache=True)
def _bp_complex_kernel(x, c):
    n = len(x)
    for k in range(n - 1):
        for i in range(n - 1, k, -1):
            c[i] = (c[i] - c[i - 1]) / (x[i] - x[i - k - 1])
    for k in range(n - 2, -1, -1):
        for i in range(k, n - 1):
            c[i] = c[i] - x[k] * c[i + 1]
    return c


def _bp_complex(x, f):
    c = np.ascontiguousarray(f, dtype=complex)
    c = c.copy()
    shape = c.shape
    _bp_complex_kernel(np.ascontiguousarray(x, dtype=complex),
                       c.reshape(len(x), -1))
    return c.reshape(shape)


def vandermonde_solve_dual(x, q, extended=False):
    """Bjorck-Pereyra solve of the transposed system sum_m w_m x_m^j = q_j.

    Yields quadrature-like weights reproducing the moments q of the
    monomials; this is the primal algorithm with transposed elementary
    operations applied in reverse order.  ``extended`` runs the whole
    solve in extended precision, needed when the moments grow like the
    inverse target distance and the weights cancel (hypersingular rows
    for very close targets).
    """
    x = np.asarray(x)
    n = len(x)
    q = np.asarray(q, dtype=complex)
    if not np.isrealobj(x) and not np.any(x.imag):
        x = x.real
    if extended:
        w = _bp_dual(x.astype(np.clongdouble), q.astype(np.clongdouble))
        return w.astype(complex)
    w = _bp_dual(x, q)
    V = np.vander(x, n, increasing=True)
    for _ in range(2):
        resid = q - V.T @ w
        w = w + _bp_dual(x, resid)
    return w


@njit(cache=True)
def _bp_dual_kernel(x, w):
    n = len(x)
    for k in range(n - 1):
        for i in range(n - 2, k - 1, -1):
            w[i + 1] = w[i + 1] - x[k] * w[i]
    for k in range(n - 2, -1, -1):
        for i in range(k + 1, n):
            w[i] = w[i] / (x[i] - x[i - k - 1])
            w[i - 1] = w[i - 1] - w[i]
    return w


def _bp_dual(x, q):
    if q.dtype == np.clongdouble:  # extended path stays in numpy loops
        n = len(x)
        w = np.array(q)
        for k in range(n - 1):
            for i in range(n - 2, k - 1, -1):
                w[i + 1] = w[i + 1] - x[k] * w[i]
        for k in range(n - 2, -1, -1):
            for i in range(k + 1, n):
                w[i] = w[i] / (x[i] - x[i - k - 1])
                w[i - 1] = w[i - 1] - w[i]
        return w
    w = np.ascontiguousarray(q, dtype=complex).copy()
    shape = w.shape
    _bp_dual_kernel(np.ascontiguousarray(x, dtype=complex),
                    w.reshape(len(x), -1))
    return w.reshape(shape)


def vandermonde_inverse(x):
    """Columns of V^-1 via Bjorck-Pereyra (cardinal-polynomial coefficients)."""
    return vandermonde_solve(x, np.eye(len(x)))


_VANDER_REAL_INV = vandermonde_inverse(GL_NODES)


@dataclass
class RecursionTriple:
    p: np.ndarray          # p_0 .. p_n
    q: np.ndarray          # q_0 .. q_{n-1}
    r: np.ndarray          # r_0 .. r_{n-1}
    residue_applied: bool


_ODD_TERMS = np.array([0.0] + [(1.0 - (-1.0) ** ell) / ell
                               for ell in range(1, 512)])


def _odd_term(ell):
    return _ODD_TERMS[ell]


def _p0_along_path(z, path):
    """Branch-continuous log difference  int dt/(t-z)  along a polyline.

    Telescopes to Log(1-z) - Log(-1-z) + 2 pi i * winding; each segment
    must subtend less than pi as seen from z, true whenever z is not on
    the polyline.
    """
    ratios = (path[1:] - z) / (path[:-1] - z)
    return complex(np.sum(np.log(ratios)))


def _p0_principal_value(z, path, pv_index):
    """As above for z = path[pv_index], passing straight through the node."""
    acc = 0.0 + 0.0j
    for j in range(len(path) - 1):
        if j == pv_index - 1:
            # both segments adjacent to the singular node as one crossing
            acc += np.log((path[j + 2] - z) / (z - path[j]))
        elif j == pv_index:
            continue
        else:
            acc += np.log((path[j + 1] - z) / (path[j] - z))
    return complex(acc)


def recursion_pqr(z, n=N_PANEL, gamma=1.0 + 0.0j, path=None, pv_index=None):
    """Recursion values p_0..p_n, q_0..q_{n-1}, r_0..r_{n-1} at mapped target z.

    ``path`` holds the mapped panel nodes (endpoints included) used to fix
    the branch of p_0; a flat panel is assumed when omitted.  ``gamma`` is
    the affine half-chord of the original panel, entering only the log
    integrals r.  ``pv_index`` marks an on-surface target z = path[pv_index];
    p and q are then principal values and r carries the half-residue of
    the log boundary terms (any full 2 pi i ambiguity cancels in the
    imaginary parts used by the log quadrature).
    """
    z = complex(z)
    if path is None:
        path = np.array([-1.0 + 0.0j, 1.0 + 0.0j])
    else:
        path = np.asarray(path, dtype=complex)
        if path[0] != -1.0 + 0.0j:
            path = np.concatenate([[-1.0 + 0.0j], path, [1.0 + 0.0j]])
    if pv_index is None and np.min(np.abs(path - z)) == 0.0:
        raise ValueError("target lies on the panel; use the on-surface path")

    p = np.empty(n + 1, dtype=complex)
    if pv_index is not None:
        p[0] = _p0_principal_value(z, path, pv_index)
    else:
        p[0] = _p0_along_path(z, path)
    principal = np.log(1.0 - z) - np.log(-1.0 - z)
    residue_applied = abs(p[0] - principal) > 1.0

    if abs(z) <= UPWARD_LIMIT or pv_index is not None:
        for ell in range(1, n + 1):
            p[ell] = z * p[ell - 1] + _odd_term(ell)
        q = np.empty(n, dtype=complex)
        q[0] = -1.0 / (1.0 + z) - 1.0 / (1.0 - z)
        for ell in range(1, n):
            q[ell] = z * q[ell - 1] + p[ell - 1]
    else:
        # zero-seeded downward recursion, stable for |z| > 1
        depth = n + max(12, int(np.ceil(42.0 / np.log(abs(z))))) + 4
        pp = np.zeros(depth + 1, dtype=complex)
        for ell in range(depth, 0, -1):
            pp[ell - 1] = (pp[ell] - _odd_term(ell)) / z
        qq = np.zeros(depth + 1, dtype=complex)
        for ell in range(depth, 0, -1):
            qq[ell - 1] = (qq[ell] - pp[ell - 1]) / z
        p = pp[:n + 1]
        q = qq[:n]

    # r_l by parts along the panel; L is the branch continuous along it
    gamma = complex(gamma)
    l_minus = np.log(-1.0 - z)
    l_plus = l_minus + p[0]
    half_step = 1j * np.pi if pv_index is not None else 0.0
    r = np.empty(n, dtype=complex)
    log_gamma = np.log(gamma)
    for ell in range(n):
        sgn = (-1.0) ** (ell + 1)
        r[ell] = (l_plus + half_step * (1.0 - z ** (ell + 1))
                  - sgn * l_minus - p[ell + 1]) / (ell + 1)
        r[ell] += log_gamma * _odd_term(ell + 1)
    return RecursionTriple(p=p, q=q, r=r, residue_applied=bool(residue_applied))


def monomial_coeffs(values, nodes=None):
    """Coefficients c with sum c_l t^l interpolating values at the nodes.

    Defaults to the 16 Gauss-Legendre nodes on [-1, 1]; pass the mapped
    complex nodes of a curved panel to fit along the panel instead.
    """
    values = np.asarray(values, dtype=complex)
    if values.shape[-1] != N_PANEL:
        raise ValueError("expected one value per panel node")
    if nodes is None:
        nodes = GL_NODES
    return vandermonde_solve(nodes, values)


class ScaledPanel:
    """One panel rotated and scaled so its endpoints sit at -1 and 1.

    Carries everything the analytic quadrature needs: mapped nodes, the
    affine factor gamma = (end - start)/2, original normals and a
    polynomial model of the mapped panel shape (for refining the branch
    test when targets sit between the node polyline and the true curve).
    """

    def __init__(self, nodes, normals, endpoint_a, endpoint_b, arc_length=None):
        self.nodes = np.asarray(nodes, dtype=complex)
        self.normals = np.asarray(normals, dtype=complex)
        self.endpoint_a = complex(endpoint_a)
        self.endpoint_b = complex(endpoint_b)
        self.center = 0.5 * (self.endpoint_a + self.endpoint_b)
        self.gamma = 0.5 * (self.endpoint_b - self.endpoint_a)
        self.mapped = (self.nodes - self.center) / self.gamma
        self.path = np.concatenate([[-1.0 + 0.0j], self.mapped, [1.0 + 0.0j]])
        if arc_length is None:
            pts = np.concatenate([[self.endpoint_a], self.nodes, [self.endpoint_b]])
            arc_length = float(np.sum(np.abs(np.diff(pts))))
        self.arc_length = arc_length
        self._shape_coeffs = None

    def map_target(self, z):
        return (complex(z) - self.center) / self.gamma

    def shape_at(self, x):
        """Mapped panel position at parameter x in [-1, 1] (degree-15 model)."""
        if self._shape_coeffs is None:
            self._shape_coeffs = vandermonde_solve(GL_NODES, self.mapped)
        c = self._shape_coeffs
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, c[-1], dtype=complex)
        for j in range(N_PANEL - 2, -1, -1):
            out = out * x + c[j]
        return out

    def refined_path(self, z, max_extra=64):
        """Path with the segments nearest z bisected along the true shape
        until the local polyline deviation is well below the distance to z.

        Needed when |z - curve| is smaller than the node polyline's
        sagitta, where the plain polyline puts z on the wrong side.
        """
        xs = np.concatenate([[-1.0], GL_NODES, [1.0]])
        ws = self.path.copy()
        for _ in range(max_extra):
            d_seg = _segment_distances(ws, z)
            j = int(np.argmin(d_seg))
            xm = 0.5 * (xs[j] + xs[j + 1])
            wm = self.shape_at(xm)
            deviation = abs(wm - 0.5 * (ws[j] + ws[j + 1]))
            if deviation < 0.25 * max(d_seg[j], 1e-14):
                break
            xs = np.insert(xs, j + 1, xm)
            ws = np.insert(ws, j + 1, wm)
        return ws

    def distance(self, z):
        pts = np.concatenate([[self.endpoint_a], self.nodes, [self.endpoint_b]])
        return float(np.min(np.abs(pts - complex(z))))


def _segment_distances(path, z):
    """Distance from z to each straight segment of a polyline."""
    a = path[:-1]
    b = path[1:]
    ab = b - a
    t = np.clip(((z - a) * np.conj(ab)).real / np.abs(ab) ** 2, 0.0, 1.0)
    proj = a + t * ab
    return np.abs(z - proj)


def flat_panel(a=-1.0 + 0.0j, b=1.0 + 0.0j):
    """A straight model panel from a to b (tests and calibration)."""
    center = 0.5 * (a + b)
    gamma = 0.5 * (b - a)
    nodes = center + gamma * GL_NODES
    tangent = gamma / abs(gamma)
    normals = np.full(N_PANEL, -1j * tangent)
    return ScaledPanel(nodes, normals, a, b)


def needs_special(panel, z):
    """True when the target is within one panel arc length of the panel."""
    return panel.distance(z) < panel.arc_length


_UNDERRESOLVED_RATIO = 1e-6


def _fit(panel, values, warn=True):
    c = vandermonde_solve(panel.mapped, values)
    if warn:
        scale = np.max(np.abs(c))
        if scale > 0 and abs(c[-1]) > _UNDERRESOLVED_RATIO * scale:
            warnings.warn("panel density looks underresolved for special "
                          "quadrature", RuntimeWarning, stacklevel=3)
    return c


def _branch_path(panel, zm):
    """Panel path for the branch test, refined when z hugs the curve."""
    if np.min(_segment_distances(panel.path, zm)) < 0.02:
        return panel.refined_path(zm)
    return panel.path


def log_weight_row(panel, z, pv_index=None, triple=None):
    """Real weights w with sum_m w_m h_m ~ int h log|tau - z_t| |dtau|.

    Componentwise application to complex h is exact because the weights
    are real.  ``pv_index`` marks on-surface targets (z equal to a panel
    node, index into the panel's path array).
    """
    if triple is None:
        zm = panel.map_target(z)
        path = panel.path if pv_index is not None else _branch_path(panel, zm)
        triple = recursion_pqr(zm, gamma=panel.gamma,
                               path=path, pv_index=pv_index)
    row = vandermonde_solve_dual(panel.mapped, triple.r)
    return np.imag(panel.gamma * row / panel.normals)


def log_weight_row_oncurve(panel, z):
    """Log-kernel weights for a target lying ON the panel between nodes.

    The target is inserted into the branch path and treated as a
    principal-value crossing; targets within 1e-13 of a node fall back
    to the nodal row.
    """
    zm = panel.map_target(z)
    hits = np.abs(panel.mapped - zm)
    if np.min(hits) < 1e-13:
        return log_weight_row(panel, z, pv_index=int(np.argmin(hits)) + 1)
    ins = int(np.searchsorted(panel.path.real, zm.real))
    ins = min(max(ins, 1), len(panel.path) - 1)
    newpath = np.insert(panel.path, ins, zm)
    triple = recursion_pqr(zm, gamma=panel.gamma, path=newpath, pv_index=ins)
    row = vandermonde_solve_dual(panel.mapped, triple.r)
    return np.imag(panel.gamma * row / panel.normals)


def eval_near(panel, values, z, kind):
    """Analytic panel integral of a smooth density against a singular kernel.

    kind 'cauchy':        int h(tau)/(tau - z) dtau
    kind 'hypersingular': int h(tau)/(tau - z)^2 dtau
    kind 'log':           int h(tau) log|tau - z| |dtau|
    """
    zm = panel.map_target(z)
    triple = recursion_pqr(zm, gamma=panel.gamma, path=_branch_path(panel, zm))
    if kind == "cauchy":
        return complex(_fit(panel, values) @ triple.p[:N_PANEL])
    if kind == "hypersingular":
        return complex(_fit(panel, values) @ triple.q) / panel.gamma
    if kind == "log":
        _fit(panel, np.asarray(values, dtype=complex) / panel.normals)  # resolution check
        w = log_weight_row(panel, z, triple=triple)
        return complex(w @ np.asarray(values, dtype=complex))
    raise ValueError(f"unknown kernel kind {kind!r}")


def _pqr_batch(sp, zs, pv_indices):
    """Vectorised recursion values for many targets of one panel.

    Returns (p, q, r) with shapes (17, m), (16, m), (16, m).
    ``pv_indices[t] >= 0`` marks target t as the panel node at that path
    position (principal-value crossing); other targets must lie off the
    panel.  Off-panel targets beyond UPWARD_LIMIT use the zero-seeded
    downward recursion.  Targets hugging the panel below the node
    polyline's sagitta must go through the scalar refined-path routine
    instead.
    """
    zs = np.asarray(zs, dtype=complex)
    m = len(zs)
    path = sp.path
    n = N_PANEL
    # branch-continuous p0 along the path, with pass-through crossings
    num = path[1:, None] - zs[None, :]
    den = path[:-1, None] - zs[None, :]
    for t in range(m):  # patch the singular segments of on-panel targets
        s = pv_indices[t]
        if s >= 0:
            num[s - 1, t] = 1.0
            den[s, t] = 1.0
    logs = np.log(num / den)
    p0 = np.sum(logs, axis=0)
    for t in range(m):
        s = pv_indices[t]
        if s >= 0:
            cross = np.log((path[s + 1] - zs[t]) / (zs[t] - path[s - 1]))
            p0[t] += cross - logs[s - 1, t] - logs[s, t]

    far = (np.abs(zs) > UPWARD_LIMIT) & (pv_indices < 0)
    p = np.empty((n + 1, m), dtype=complex)
    q = np.empty((n, m), dtype=complex)
    p[0] = p0
    for ell in range(1, n + 1):
        p[ell] = zs * p[ell - 1] + _ODD_TERMS[ell]
    q[0] = -1.0 / (1.0 + zs) - 1.0 / (1.0 - zs)
    for ell in range(1, n):
        q[ell] = zs * q[ell - 1] + p[ell - 1]
    if np.any(far):
        zf = zs[far]
        depth = n + max(12, int(np.ceil(42.0 / np.log(np.min(np.abs(zf)))))) + 4
        pp = np.zeros((depth + 1, len(zf)), dtype=complex)
        for ell in range(depth, 0, -1):
            pp[ell - 1] = (pp[ell] - _ODD_TERMS[ell]) / zf
        qq = np.zeros((depth + 1, len(zf)), dtype=complex)
        for ell in range(depth, 0, -1):
            qq[ell - 1] = (qq[ell] - pp[ell - 1]) / zf
        p[:, far] = pp[:n + 1]
        q[:, far] = qq[:n]

    l_minus = np.log(-1.0 - zs)
    l_plus = l_minus + p[0]
    half = np.where(pv_indices >= 0, 1j * np.pi, 0.0)
    log_gamma = np.log(sp.gamma)
    r = np.empty((n, m), dtype=complex)
    for ell in range(n):
        sgn = (-1.0) ** (ell + 1)
        r[ell] = (l_plus + half * (1.0 - zs ** (ell + 1))
                  - sgn * l_minus - p[ell + 1]) / (ell + 1)
        r[ell] += log_gamma * _ODD_TERMS[ell + 1]
    return p, q, r


def _r_values_batch(sp, zs, pv_indices):
    return _pqr_batch(sp, zs, pv_indices)[2]


def onsurface_log_weights(panels, j):
    """Log-kernel quadrature weights for a panel against on-curve targets.

    Returns a (48, 16) matrix: rows are the nodes of the previous panel,
    the panel itself and the next panel (in curve order); columns are the
    panel's own nodes.  Wrap-around across the curve seam honours the
    winding shift of channel walls.
    """
    n_panels = panels.n_panels
    sl = panels.panel_slice(j)
    za, zb = panels.panel_endpoints(j)
    sp = ScaledPanel(panels.nodes[sl], panels.normals[sl], za, zb,
                     arc_length=panels.panel_lengths[j])
    targets = np.empty(3 * N_PANEL, dtype=complex)
    pv = np.full(3 * N_PANEL, -1, dtype=int)
    for which, off in enumerate((-1, 0, 1)):
        jj = (j + off) % n_panels
        shift = 0.0 + 0.0j
        if j + off < 0:
            shift = -panels.winding_shift
        elif j + off >= n_panels:
            shift = panels.winding_shift
        block = slice(which * N_PANEL, (which + 1) * N_PANEL)
        targets[block] = panels.nodes[panels.panel_slice(jj)] + shift
        if off == 0:
            pv[block] = np.arange(1, N_PANEL + 1)
    zm = (targets - sp.center) / sp.gamma
    r = _r_values_batch(sp, zm, pv)
    w = vandermonde_solve_dual(sp.mapped, r)
    return np.imag(sp.gamma * w.T / sp.normals[None, :])
