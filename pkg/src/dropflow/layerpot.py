"""Periodic layer potentials in complex form and the second-kind system
for drops plus Hebeker-represented solids.

The periodic single and double layers are computed as tensor Ewald sums
over quadrature-weighted point sources, then repaired locally: wherever a
target sits within one panel length of a source panel (or on it), the
plain point-source contribution of that panel's nearest image is
subtracted and the analytic panel integral added back.  On-surface
targets use the finite Nystrom limits of the smooth kernels and
precomputed log-kernel weights.

Sign conventions: the complex single layer equals minus the stokeslet
Ewald sum (the screened stokeslet pair reconstructs the kernel with the
opposite overall sign), while the complex double layer equals the
stresslet Ewald sum as is.  Both identifications are fixed by the
constant-density and free-space correspondence tests.
"""

import numpy as np

from . import ewald, quadrature, solver
from .geometry import PANEL_SIZE, to_panels, to_uniform
from .spectral import spectral_derivative, trig_coeffs, trig_eval


class ModelValidityError(RuntimeError):
    """Raised when the physical model leaves its domain of validity."""


# ---------------------------------------------------------------------------
# imposed background flows

class FlowField:
    """Analytic background velocity; shipped kinds are divergence-free."""

    def __init__(self, kind="none", strength=0.0 + 0.0j, center=0.0,
                 half_width=1.0):
        self.kind = kind
        self.strength = complex(strength)
        self.center = float(center)
        self.half_width = float(half_width)
        self._check_divergence_free()

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        if self.kind == "none":
            return np.zeros_like(z)
        if self.kind == "uniform":
            return np.full_like(z, self.strength)
        if self.kind == "poiseuille":
            y = (z.imag - self.center) / self.half_width
            return self.strength * (1.0 - y * y)
        if self.kind == "extensional":
            return self.strength.real * (z.real - 1j * z.imag)
        raise ValueError(f"unknown flow kind {self.kind!r}")

    def _check_divergence_free(self):
        h = 1e-5
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, 5) + 1j * rng.uniform(-1, 1, 5)
        dux = (self(pts + h).real - self(pts - h).real) / (2 * h)
        duy = (self(pts + 1j * h).imag - self(pts - 1j * h).imag) / (2 * h)
        if np.max(np.abs(dux + duy)) > 1e-8:
            raise ValueError("background flow is not divergence-free")


# ---------------------------------------------------------------------------
# interface states

class DropState:
    """Deformable interface: uniform grid, viscosity ratio, surfactant."""

    def __init__(self, grid, lam=1.0, rho=None, elasticity=0.0, peclet=1.0):
        if lam < 0:
            raise ValueError("viscosity ratio must be non-negative")
        self.grid = grid
        self.lam = float(lam)
        self.elasticity = float(elasticity)
        self.peclet = float(peclet)
        self.rho = None if rho is None else np.asarray(rho, dtype=float)
        if self.rho is not None and np.any(self.rho < 0):
            raise ModelValidityError("negative surfactant concentration")
        self._panels = None

    @property
    def sigma(self):
        if self.rho is None:
            return np.ones(self.grid.n_points)
        sig = 1.0 - self.elasticity * self.rho
        if np.any(sig <= 0):
            raise ModelValidityError("surface tension driven non-positive "
                                     "(surfactant overload)")
        return sig

    @property
    def panels(self):
        if self._panels is None:
            self._panels = to_panels(self.grid, self.grid.n_points // PANEL_SIZE)
        return self._panels


class SolidState:
    """Stationary solid boundary with its Hebeker density (set by solves)."""

    def __init__(self, panels):
        self.panels = panels
        self.q = np.zeros(panels.n_points, dtype=complex)


def traction(drop, ca):
    """Interfacial traction f = (sigma kappa n - grad_s sigma)/Ca on panels.

    Computed spectrally on the uniform grid, then transferred to the
    panel nodes by trigonometric interpolation of the density.
    """
    if ca <= 0:
        raise ValueError("capillary number must be positive")
    g = drop.grid
    sig = drop.sigma
    speed = np.abs(g.deriv1)
    tangent = g.deriv1 / speed
    dsig = spectral_derivative(sig).real
    f_uniform = (sig * g.curvature * g.normals - (dsig / speed) * tangent) / ca
    n_panels = g.n_points // PANEL_SIZE
    edges = 2 * np.pi * np.arange(n_panels)[:, None] / n_panels
    half = np.pi / n_panels
    alphas = (edges + half + half * quadrature.GL_NODES[None, :]).ravel()
    return trig_eval(trig_coeffs(f_uniform), alphas)


# ---------------------------------------------------------------------------
# the assembled periodic system

_QUARTER = 1.0 / (4.0 * np.pi)
_EIGHTH = 1.0 / (8.0 * np.pi)
_HALFPI = 1.0 / (2.0 * np.pi)


class _PanelRef:
    __slots__ = ("body", "index_in_body", "start", "scaled", "length",
                 "center", "is_drop", "w", "arc_w", "zp", "normals", "nodes")


class StokesSystem:
    """Geometry-frozen Nystrom system for one configuration.

    Builds the stacked node arrays, the Ewald machinery inputs and the
    local correction plan once; apply/rhs are then cheap enough to sit
    inside GMRES.
    """

    def __init__(self, drops, solids, box, params, use_spectral=True,
                 shared_cache=None):
        self.drops = list(drops)
        self.solids = list(solids)
        self.box = box
        self.params = params
        self.use_spectral = use_spectral
        self.shared = shared_cache if shared_cache is not None else {}
        self._stack_geometry()
        self._build_panel_refs()
        self._build_diagonals()
        self._node_pairs = None
        self._build_plan()

    # -- geometry stacking ------------------------------------------------

    def _stack_geometry(self):
        zs, zps, zpps, ws, arcs, norms, kinds, lams = [], [], [], [], [], [], [], []
        self.body_panels = []
        for d in self.drops:
            p = d.panels
            self.body_panels.append(p)
            zs.append(p.nodes)
            zps.append(p.zp)
            zpps.append(p.zpp)
            ws.append(p.w)
            arcs.append(p.arc_w)
            norms.append(p.normals)
            kinds.extend([True] * p.n_points)
            lams.extend([d.lam] * p.n_points)
        for s in self.solids:
            p = s.panels
            self.body_panels.append(p)
            zs.append(p.nodes)
            zps.append(p.zp)
            zpps.append(p.zpp)
            ws.append(p.w)
            arcs.append(p.arc_w)
            norms.append(p.normals)
            kinds.extend([False] * p.n_points)
            lams.extend([1.0] * p.n_points)
        self.nodes = np.concatenate(zs) if zs else np.zeros(0, complex)
        self.zp = np.concatenate(zps) if zs else np.zeros(0, complex)
        self.zpp = np.concatenate(zpps) if zs else np.zeros(0, complex)
        self.w = np.concatenate(ws) if zs else np.zeros(0)
        self.arc_w = np.concatenate(arcs) if zs else np.zeros(0)
        self.normals = np.concatenate(norms) if zs else np.zeros(0, complex)
        self.is_drop = np.array(kinds, dtype=bool)
        self.lam = np.array(lams)
        self.n_nodes = len(self.nodes)
        self.n_drop_nodes = int(np.sum(self.is_drop))
        # double-layer density coefficient per source node
        self.dl_coeff = np.where(self.is_drop, self.lam - 1.0, 2.0)
        # per-target prefactor of the bracket
        self.pref = np.where(self.is_drop, 2.0 / (self.lam + 1.0), 1.0)

    def _build_panel_refs(self):
        self.panels = []
        start = 0
        for b, p in enumerate(self.body_panels):
            for j in range(p.n_panels):
                ref = _PanelRef()
                ref.body = b
                ref.index_in_body = j
                ref.start = start
                sl = slice(start, start + PANEL_SIZE)
                za, zb = p.panel_endpoints(j)
                ref.scaled = quadrature.ScaledPanel(
                    self.nodes[sl], self.normals[sl], za, zb,
                    arc_length=p.panel_lengths[j])
                ref.length = p.panel_lengths[j]
                ref.center = 0.5 * (za + zb)
                ref.is_drop = bool(self.is_drop[start])
                ref.w = self.w[sl]
                ref.arc_w = self.arc_w[sl]
                ref.zp = self.zp[sl]
                ref.normals = self.normals[sl]
                ref.nodes = self.nodes[sl]
                self.panels.append(ref)
                start += PANEL_SIZE
        self.n_panels = len(self.panels)
        self.panel_centers = np.array([p.center for p in self.panels])
        self.panel_radii = np.array(
            [np.max(np.abs(p.nodes - p.center)) for p in self.panels])
        self.panel_lengths = np.array([p.length for p in self.panels])

    def _build_diagonals(self):
        zp, zpp = self.zp, self.zpp
        w, arc_w = self.w, self.arc_w
        self.dl_diag_a = _HALFPI * w * np.imag(zpp / (2.0 * zp))
        self.dl_diag_b = _HALFPI * w * np.imag(zpp * np.conj(zp)) \
            / (2.0 * np.conj(zp) ** 2)
        self.sl_diag_b = -_EIGHTH * arc_w * zp / np.conj(zp)
        # the node's own mean-density term; the Ewald sum at a source point
        # already equals the self-excluded lattice sum, so only the smooth
        # kernel limits are added here
        self.sl_diag_a = -_EIGHTH * arc_w

    # -- correction plan ---------------------------------------------------

    def _build_plan(self):
        self._log_w = {}
        n_drop_bodies = len(self.drops)
        for b, p in enumerate(self.body_panels):
            static = b >= n_drop_bodies
            for j in range(p.n_panels):
                if static:
                    key = ("logw", id(p), j)
                    if key not in self.shared:
                        self.shared[key] = quadrature.onsurface_log_weights(p, j)
                    self._log_w[(b, j)] = self.shared[key]
                else:
                    self._log_w[(b, j)] = quadrature.onsurface_log_weights(p, j)
        recs = {"dl": [], "sl": []}
        self._bulk_self_rows(recs)
        self._bulk_neighbor_rows(recs)
        far_pairs = []
        # candidate near pairs from one vectorised bounding test
        diff = self.box.min_image(self.nodes[:, None] - self.panel_centers)
        cand = np.abs(diff) < (self.panel_radii + self.panel_lengths)[None, :]
        own = np.arange(self.n_nodes) // PANEL_SIZE
        cand[np.arange(self.n_nodes), own] = False
        for t, pj in zip(*np.nonzero(cand)):
            t = int(t)
            pj = int(pj)
            t_panel = t // PANEL_SIZE
            if self._adjacency(t_panel, pj) is not None:
                continue
            ref = self.panels[pj]
            rel = ref.center + diff[t, pj]
            # a non-adjacent panel of the same body already sits about one
            # panel length away along the curve, where the plain rule is in
            # the clear; only genuinely close approaches (thin necks) need
            # the analytic rows
            same_body = ref.body == self.panels[t_panel].body
            cut = 0.6 * ref.length if same_body else ref.length
            if ref.scaled.distance(rel) < cut:
                far_pairs.append((t, pj, rel))
        self._far_near_rows_grouped(recs, far_pairs)
        self._plan = {}
        for pot, chunks in recs.items():
            if chunks:
                tgt = np.concatenate([c[0] for c in chunks])
                st = np.concatenate([c[1] for c in chunks])
                a = np.concatenate([c[2] for c in chunks])
                b = np.concatenate([c[3] for c in chunks])
                src_is_drop = np.concatenate([c[4] for c in chunks])
            else:
                tgt = np.zeros(0, int)
                st = np.zeros(0, int)
                a = np.zeros((0, PANEL_SIZE), complex)
                b = np.zeros((0, PANEL_SIZE), complex)
                src_is_drop = np.zeros(0, bool)
            self._plan[pot] = (tgt, st, a, b, src_is_drop)

    def _bulk_self_rows(self, recs):
        """Diagonal Nystrom limits and self-panel log weights, vectorised."""
        n = self.n_nodes
        npan = self.n_panels
        t_local = np.arange(n) % PANEL_SIZE
        starts = (np.arange(n) // PANEL_SIZE) * PANEL_SIZE
        eye = np.zeros((n, PANEL_SIZE))
        eye[np.arange(n), t_local] = 1.0
        is_drop_pan = self.is_drop
        tgt = np.arange(n)
        a_dl = eye * self.dl_diag_a[:, None] + 0j
        b_dl = eye * self.dl_diag_b[:, None]
        recs["dl"].append((tgt, starts, a_dl, b_dl, is_drop_pan.copy()))

        nodes_p = self.nodes.reshape(npan, PANEL_SIZE)
        arcw_p = self.arc_w.reshape(npan, PANEL_SIZE)
        dz = nodes_p[:, None, :] - nodes_p[:, :, None]  # [p, target, source]
        plain = arcw_p[:, None, :] * _safe_log_abs(dz)
        plain[:, np.arange(PANEL_SIZE), np.arange(PANEL_SIZE)] = 0.0
        w_self = np.stack([
            self._log_w[(ref.body, ref.index_in_body)][PANEL_SIZE:2 * PANEL_SIZE]
            for ref in self.panels])
        a_sl = (_QUARTER * (w_self - plain)).reshape(n, PANEL_SIZE) + 0j
        a_sl += eye * self.sl_diag_a[:, None]
        b_sl = eye * self.sl_diag_b[:, None]
        recs["sl"].append((tgt, starts, a_sl, b_sl, is_drop_pan.copy()))

    def _bulk_neighbor_rows(self, recs):
        """Log-kernel corrections against neighbouring panels, per pair."""
        chunks_t, chunks_s, chunks_a, chunks_d = [], [], [], []
        for pj, ref in enumerate(self.panels):
            body = self.body_panels[ref.body]
            npan_b = body.n_panels
            if npan_b < 2:
                continue
            w_all = self._log_w[(ref.body, ref.index_in_body)]
            base = pj - ref.index_in_body
            # a two-panel body has a single neighbour relation
            offsets = (-1,) if npan_b == 2 else (-1, +1)
            for off in offsets:
                jj = (ref.index_in_body + off) % npan_b
                t_panel_global = base + jj
                shift = 0.0 + 0.0j
                if ref.index_in_body + off < 0:
                    shift = -body.winding_shift
                elif ref.index_in_body + off >= npan_b:
                    shift = body.winding_shift
                # target nodes of the neighbouring panel, seen from the
                # source panel's plane position
                tslice = slice(t_panel_global * PANEL_SIZE,
                               (t_panel_global + 1) * PANEL_SIZE)
                z_t = self.nodes[tslice] + shift
                w_rows = w_all[2 * PANEL_SIZE:] if off == +1 else \
                    w_all[:PANEL_SIZE]
                plain = ref.arc_w[None, :] * _safe_log_abs(
                    ref.nodes[None, :] - z_t[:, None])
                chunks_t.append(np.arange(tslice.start, tslice.stop))
                chunks_s.append(np.full(PANEL_SIZE, ref.start))
                chunks_a.append(_QUARTER * (w_rows - plain) + 0j)
                chunks_d.append(np.full(PANEL_SIZE, ref.is_drop))
        if chunks_t:
            recs["sl"].append((np.concatenate(chunks_t),
                               np.concatenate(chunks_s),
                               np.concatenate(chunks_a),
                               np.zeros((sum(map(len, chunks_t)),
                                         PANEL_SIZE), complex),
                               np.concatenate(chunks_d)))

    def _near_panels(self, z):
        d_center = np.abs(self.box.min_image(z - self.panel_centers))
        cut = self.panel_radii + self.panel_lengths
        return np.nonzero(d_center < cut)[0]

    def _relative_target(self, z, ref):
        """Target position shifted next to the panel's stored image."""
        d = self.box.min_image(z - ref.center)
        return ref.center + d

    def _adjacency(self, t_panel, s_panel):
        """Offset (-1 or +1) when s_panel neighbours t_panel on one body."""
        rt, rs = self.panels[t_panel], self.panels[s_panel]
        if rt.body != rs.body:
            return None
        n = self.body_panels[rt.body].n_panels
        if (rt.index_in_body - rs.index_in_body) % n == 1:
            return -1
        if (rs.index_in_body - rt.index_in_body) % n == 1:
            return +1
        return None

    def _far_near_rows_grouped(self, recs, pairs):
        """Analytic-minus-plain rows for all near (target, panel) pairs,
        batched per source panel; solid-to-solid rows are cached across
        stages (their geometry never changes)."""
        by_panel = {}
        for t, pj, rel in pairs:
            by_panel.setdefault(pj, []).append((t, rel))
        for pj, items in by_panel.items():
            ref = self.panels[pj]
            cached = []
            fresh = []
            for t, rel in items:
                t_panel = self.panels[t // PANEL_SIZE]
                if not t_panel.is_drop and not ref.is_drop:
                    tp = self.body_panels[t_panel.body]
                    key = ("ssrow", id(tp), t - t_panel.start
                           + PANEL_SIZE * t_panel.index_in_body,
                           id(self.body_panels[ref.body]), ref.index_in_body)
                    cached.append((t, rel, key))
                else:
                    fresh.append((t, rel))
            for t, rel, key in cached:
                if key not in self.shared:
                    self.shared[key] = correction_rows(ref, rel)
                a_dl, b_dl, a_sl, b_sl = self.shared[key]
                one_t = np.array([t])
                one_s = np.array([ref.start])
                one_d = np.array([ref.is_drop])
                recs["dl"].append((one_t, one_s, a_dl[None, :], b_dl[None, :],
                                   one_d))
                recs["sl"].append((one_t, one_s, a_sl[None, :], b_sl[None, :],
                                   one_d))
            if not fresh:
                continue
            ts = np.array([t for t, _ in fresh])
            rows = correction_rows_batch(ref, np.array([r for _, r in fresh]))
            starts = np.full(len(ts), ref.start)
            drops_flag = np.full(len(ts), ref.is_drop)
            recs["dl"].append((ts, starts, rows[0], rows[1], drops_flag))
            recs["sl"].append((ts, starts, rows[2], rows[3], drops_flag))

    # -- potential evaluation ----------------------------------------------

    def _apply_plan(self, pot, out, dens, targets_mask=None, drop_sources=None):
        tgt, st, a, b, src_is_drop = self._plan[pot]
        if len(tgt) == 0:
            return
        sel = np.ones(len(tgt), dtype=bool)
        if drop_sources is not None:
            sel &= (src_is_drop == drop_sources)
        if targets_mask is not None:
            sel &= targets_mask[tgt]
        if not np.any(sel):
            return
        idx = st[sel, None] + np.arange(PANEL_SIZE)[None, :]
        blocks = dens[idx]
        contrib = np.einsum("ij,ij->i", a[sel], blocks) \
            + np.einsum("ij,ij->i", b[sel], np.conj(blocks))
        np.add.at(out, tgt[sel], contrib)

    def _ewald(self, kind, src, targets, pairs=None):
        # zero-mean-flow gauge: the layers carry no net flux, so the
        # imposed background alone sets the through-flow of the cell
        fn = ewald.spectral_ewald if self.use_spectral else ewald.direct_ewald
        return fn(kind, src, targets, self.params, self.box,
                  include_zero_mode=False, pairs=pairs)

    def _self_pairs(self):
        if self._node_pairs is None:
            from . import _fastsum
            z = self.box.fold(self.nodes)
            tx = np.ascontiguousarray(z.real)
            ty = np.ascontiguousarray(z.imag)
            self._node_pairs = _fastsum.find_pairs(
                tx, ty, tx, ty, float(self.params.r_c),
                self.box.l1, self.box.l2)
        return self._node_pairs

    def double_layer(self, dens, targets=None, plan=True):
        """Periodic double layer of a complex panel density over all bodies.

        The k = 0 mode is fixed by the through-flow condition: the jump
        of the double layer pushes flux into the solid interiors, and the
        solid-source zero-mode term returns exactly that flux to the
        fluid, so the imposed background alone sets the net flow.  Drop
        interiors are fluid and get no such compensation.
        """
        src = ewald.SourceSet(self.nodes, self.arc_w * dens, self.normals)
        zm = 0.0
        if np.any(~self.is_drop):
            # computed with each body's own (unfolded) coordinates: lattice
            # shifts multiply the net wall flux, which vanishes
            sol = ~self.is_drop
            gn = np.real(dens[sol] * np.conj(self.normals[sol]))
            zm = np.sum(self.arc_w[sol] * self.nodes[sol] * gn) \
                / self.box.volume
        if targets is None:
            out = self._ewald("stresslet", src, self.nodes,
                              pairs=self._self_pairs()) + zm
            if plan:
                self._apply_plan("dl", out, dens)
            return out
        return self._ewald("stresslet", src, targets) + zm

    def single_layer(self, dens_full, drop_sources, targets=None, plan=True):
        """Periodic single layer of a density living on drops xor solids.

        ``dens_full`` is a full-length nodal array, zero off the chosen
        body kind."""
        mask = self.is_drop == drop_sources
        if targets is None:
            # reuse the all-nodes pair list with zeroed off-body strengths
            src = ewald.SourceSet(self.nodes,
                                  np.where(mask, self.arc_w * dens_full, 0.0))
            out = -self._ewald("stokeslet", src, self.nodes,
                               pairs=self._self_pairs())
            if plan:
                self._apply_plan("sl", out, dens_full,
                                 drop_sources=drop_sources)
            return out
        src = ewald.SourceSet(self.nodes[mask],
                              (self.arc_w * dens_full)[mask])
        return -self._ewald("stokeslet", src, targets)

    # -- system action -----------------------------------------------------

    def split(self, x):
        return x[:self.n_drop_nodes], x[self.n_drop_nodes:]

    def bracket(self, x):
        """Sum of weighted double layers and the solids' Hebeker single layer.

        One fused Ewald pass evaluates both kernels; the local correction
        plan then repairs all near and on-surface contributions.
        """
        u, q = self.split(x)
        dens = np.empty(self.n_nodes, dtype=complex)
        dens[self.is_drop] = u
        dens[~self.is_drop] = q
        if np.any(np.isnan(dens)):
            raise ValueError("NaN in layer densities")
        dl_dens = self.dl_coeff * dens
        sol_dens = np.where(~self.is_drop, dens, 0.0)
        if self.use_spectral:
            src_stress = ewald.SourceSet(self.nodes, self.arc_w * dl_dens,
                                         self.normals)
            # the complex single layer is minus the stokeslet sum
            src_stokes = ewald.SourceSet(self.nodes,
                                         -(self.arc_w * sol_dens))
            out = ewald.combined_layer_sum(src_stress, src_stokes,
                                           self.nodes, self.params, self.box,
                                           pairs=self._self_pairs())
            out += self._solid_zero_mode(dl_dens)
            self._apply_plan("dl", out, dl_dens)
            if np.any(~self.is_drop):
                self._apply_plan("sl", out, sol_dens, drop_sources=False)
            return out
        out = self.double_layer(dl_dens)
        if np.any(~self.is_drop):
            out += self.single_layer(sol_dens, drop_sources=False)
        return out

    def _solid_zero_mode(self, dl_dens):
        if not np.any(~self.is_drop):
            return 0.0
        sol = ~self.is_drop
        gn = np.real(dl_dens[sol] * np.conj(self.normals[sol]))
        return np.sum(self.arc_w[sol] * self.nodes[sol] * gn) \
            / self.box.volume

    def apply(self, x):
        """Left-hand side action of the second-kind system."""
        return x - self.pref * self.bracket(x)

    def rhs(self, flow, ca):
        """Right-hand side: single layer of the tractions plus background."""
        f_full = np.zeros(self.n_nodes, dtype=complex)
        start = 0
        for d in self.drops:
            n = d.panels.n_points
            f_full[start:start + n] = traction(d, ca)
            start += n
        out = flow(self.nodes)
        if self.drops:
            out = out + self.single_layer(f_full, drop_sources=True)
        return self.pref * out

    def solve(self, flow, ca, tol=1e-10, max_iter=300, x0=None):
        b = self.rhs(flow, ca)
        x, stats = solver.gmres(self.apply, b, tol=tol, max_iter=max_iter,
                                x0=x0)
        return x, stats

    # -- off-surface evaluation ---------------------------------------------

    def eval_velocity(self, points, x, flow, ca):
        """Velocity of the solved state at arbitrary points.

        Uses the full representation with near-panel corrections; points
        inside a drop are rescaled by 1/lambda, points inside solids are
        flagged.  Returns (velocities, inside_solid_flags).
        """
        points = np.asarray(points, dtype=complex)
        u, q = self.split(x)
        dens = np.empty(self.n_nodes, dtype=complex)
        dens[self.is_drop] = u
        dens[~self.is_drop] = q
        dl_dens = self.dl_coeff * dens
        sol_dens = np.zeros(self.n_nodes, dtype=complex)
        sol_dens[~self.is_drop] = q
        f_full = np.zeros(self.n_nodes, dtype=complex)
        start = 0
        for d in self.drops:
            n = d.panels.n_points
            f_full[start:start + n] = traction(d, ca)
            start += n

        out = self.double_layer(dl_dens, targets=points)
        if len(q):
            out += self.single_layer(sol_dens, drop_sources=False,
                                     targets=points)
        if self.drops:
            out += self.single_layer(f_full, drop_sources=True, targets=points)
        out += flow(points)

        # local corrections for points near any panel
        for i, z in enumerate(points):
            for pj in self._near_panels(z):
                ref = self.panels[pj]
                rel = self._relative_target(z, ref)
                dist = ref.scaled.distance(rel)
                if dist < 1e-12 or dist >= ref.length:
                    continue  # on-node targets handled by callers
                a_dl, b_dl, a_sl, b_sl = correction_rows(ref, rel)
                sl = slice(ref.start, ref.start + PANEL_SIZE)
                blk_dl = dl_dens[sl]
                out[i] += a_dl @ blk_dl + b_dl @ np.conj(blk_dl)
                if ref.is_drop:
                    blk = f_full[sl]
                else:
                    blk = sol_dens[sl]
                out[i] += a_sl @ blk + b_sl @ np.conj(blk)

        inside_solid = np.zeros(len(points), dtype=bool)
        for i, z in enumerate(points):
            k = self._which_drop(z)
            if k is not None:
                lam = self.drops[k].lam
                if lam > 1e-12:
                    out[i] /= lam
            elif self._inside_any_solid(z):
                inside_solid[i] = True
        return out, inside_solid

    def boundary_velocity(self, points, x, flow, ca):
        """Fluid-side velocity limit at fresh points ON a body surface.

        At an on-curve non-node point the smooth-kernel quadratures
        directly approximate the ordinary integrals, which equal the
        exterior limits; only the log kernel needs dedicated on-curve
        weights (self panel) and near-panel rows.
        """
        points = np.asarray(points, dtype=complex)
        u, q = self.split(x)
        dens = np.empty(self.n_nodes, dtype=complex)
        dens[self.is_drop] = u
        dens[~self.is_drop] = q
        dl_dens = self.dl_coeff * dens
        sol_dens = np.zeros(self.n_nodes, dtype=complex)
        sol_dens[~self.is_drop] = q
        f_full = np.zeros(self.n_nodes, dtype=complex)
        start = 0
        for d in self.drops:
            n = d.panels.n_points
            f_full[start:start + n] = traction(d, ca)
            start += n

        out = self.double_layer(dl_dens, targets=points)
        if np.any(~self.is_drop):
            out += self.single_layer(sol_dens, drop_sources=False,
                                     targets=points)
        if self.drops:
            out += self.single_layer(f_full, drop_sources=True, targets=points)
        out += flow(points)

        for i, z in enumerate(points):
            dists = np.array([ref.scaled.distance(self._relative_target(z, ref))
                              for ref in self.panels])
            own = int(np.argmin(dists))
            ref_own = self.panels[own]
            if dists[own] > 0.05 * ref_own.length:
                raise ValueError("boundary_velocity target is not on a surface")
            for pj in self._near_panels(z):
                ref = self.panels[pj]
                rel = self._relative_target(z, ref)
                if pj != own and ref.scaled.distance(rel) >= ref.length:
                    continue
                a_dl, b_dl, a_sl, b_sl = correction_rows(ref, rel,
                                                         on_curve=(pj == own))
                sl = slice(ref.start, ref.start + PANEL_SIZE)
                blk_sl = f_full[sl] if ref.is_drop else sol_dens[sl]
                blk_dl = dl_dens[sl]
                out[i] += a_dl @ blk_dl + b_dl @ np.conj(blk_dl)
                out[i] += a_sl @ blk_sl + b_sl @ np.conj(blk_sl)
            # principal values give the average of the limits; step down
            # to the fluid side of the double layer
            sl = slice(ref_own.start, ref_own.start + PANEL_SIZE)
            coef = quadrature.vandermonde_solve(ref_own.scaled.mapped,
                                                dl_dens[sl])
            zm = ref_own.scaled.map_target(self._relative_target(z, ref_own))
            g_here = coef[-1]
            for cj in coef[-2::-1]:
                g_here = g_here * zm + cj
            out[i] -= 0.5 * g_here
        return out

    def _which_drop(self, z):
        for k, d in enumerate(self.drops):
            if _inside_drop(d.grid, z, self.box):
                return k
        return None

    def _inside_any_solid(self, z):
        for s in self.solids:
            p = s.panels
            if p.winding_shift != 0:
                continue  # walls handled by scenario-level diagnostics
            if _winding_inside(p.nodes, z, self.box, normals=p.normals):
                return True
        return False


def _safe_log_abs(dz):
    a = np.abs(dz)
    return np.log(np.where(a == 0.0, 1.0, a))


def _self_coeff(xi):
    from .kernels import EULER_GAMMA
    return -(0.5 * EULER_GAMMA + np.log(xi) + 1.0) / (4.0 * np.pi)


def _inside_drop(grid, z, box):
    """Inside test for a deformable interface, exact up to round-off.

    Falls back to Newton projection onto the trig interpolant inside the
    node-polygon sagitta band, where polygon winding misclassifies."""
    center = np.mean(grid.points)
    shift = (center - z) - box.min_image(center - z)
    zs = z + shift
    d = grid.points - zs
    idx = int(np.argmin(np.abs(d)))
    spacing = grid.spacing
    if abs(d[idx]) > 2.0 * spacing:
        ang = np.angle(np.roll(d, -1) / d)
        return abs(np.sum(ang)) > np.pi
    t = grid.alphas[idx]
    for _ in range(50):
        f = grid.interp(np.array([t]))[0] - zs
        fp = grid.interp(np.array([t]), deriv=1)[0]
        step = np.real(f * np.conj(fp)) / abs(fp) ** 2
        t -= step
        if abs(step) < 1e-14:
            break
    zp = grid.interp(np.array([t]), deriv=1)[0]
    nrm = -1j * zp / abs(zp)
    gap = zs - grid.interp(np.array([t]))[0]
    return float(np.real(gap * np.conj(nrm))) < 0.0


def _winding_inside(nodes, z, box, normals=None):
    # shift the whole polygon rigidly to the image nearest z
    center = np.mean(nodes)
    shift = (center - z) - box.min_image(center - z)
    d = nodes - shift - z
    idx = int(np.argmin(np.abs(d)))
    spacing = abs(nodes[(idx + 1) % len(nodes)] - nodes[idx])
    if normals is not None and abs(d[idx]) < 0.5 * spacing:
        # within the node polygon's sagitta band the winding test is
        # unreliable; decide by the side of the outward normal instead
        return float(np.real(-d[idx] * np.conj(normals[idx]))) < 0.0
    ang = np.angle(np.roll(d, -1) / d)
    return abs(np.sum(ang)) > np.pi


def correction_rows_batch(ref, zs):
    """Vectorised correction rows for many targets of one panel.

    Targets inside the polyline-refinement band or very close to a node
    (extended-precision regime) fall back to the scalar routine.
    """
    sp = ref.scaled
    zs = np.asarray(zs, dtype=complex)
    k = len(zs)
    zm = (zs - sp.center) / sp.gamma
    seg_d = np.array([np.min(quadrature._segment_distances(sp.path, z))
                      for z in zm])
    node_d = np.min(np.abs(sp.mapped[None, :] - zm[:, None]), axis=1)
    scalar_mask = (seg_d < 0.02) | (node_d < 0.05)
    a_dl = np.empty((k, PANEL_SIZE), dtype=complex)
    b_dl = np.empty((k, PANEL_SIZE), dtype=complex)
    a_sl = np.empty((k, PANEL_SIZE), dtype=complex)
    b_sl = np.empty((k, PANEL_SIZE), dtype=complex)
    for i in np.nonzero(scalar_mask)[0]:
        a_dl[i], b_dl[i], a_sl[i], b_sl[i] = correction_rows(ref, zs[i])
    sel = ~scalar_mask
    if np.any(sel):
        zsel = zs[sel]
        pv = np.full(int(np.sum(sel)), -1, dtype=int)
        p, q, r = quadrature._pqr_batch(sp, zm[sel], pv)
        prow = quadrature.vandermonde_solve_dual(sp.mapped, p[:PANEL_SIZE]).T
        qrow = (quadrature.vandermonde_solve_dual(sp.mapped, q) / sp.gamma).T
        wlog = np.imag(sp.gamma
                       * quadrature.vandermonde_solve_dual(sp.mapped, r).T
                       / sp.normals[None, :])
        dz = ref.nodes[None, :] - zsel[:, None]
        beta = (np.conj(ref.zp) / ref.zp)[None, :]
        alpha = np.conj(dz)
        ratio = (np.abs(ref.zp) / ref.zp)[None, :]
        a_dl[sel] = np.imag(prow) * _HALFPI \
            - _HALFPI * ref.w[None, :] * np.imag(ref.zp[None, :] / dz)
        b_dl[sel] = (np.conj(prow * beta) - np.conj(qrow * alpha)) \
            / (4j * np.pi) \
            - _HALFPI * ref.w[None, :] * np.imag(ref.zp[None, :] * alpha) \
            / alpha**2
        a_sl[sel] = _QUARTER * wlog \
            - _QUARTER * ref.arc_w[None, :] * np.log(np.abs(dz))
        b_sl[sel] = -_EIGHTH * np.conj(prow * alpha * ratio) \
            - (-_EIGHTH) * ref.arc_w[None, :] * dz / alpha
    return a_dl, b_dl, a_sl, b_sl


def correction_rows(ref, z, on_curve=False):
    """Subtract-plain / add-analytic rows for one near panel and target.

    Returns (a_dl, b_dl, a_sl, b_sl): complex 16-rows acting on the
    panel's raw density g and conj(g) for the double and single layer.
    With ``on_curve`` the target lies ON the panel between nodes and the
    recursions take their principal values, which give the fluid-side
    (exterior) limits of the potentials.
    """
    sp = ref.scaled
    zm = sp.map_target(z)
    if on_curve:
        ins = int(np.searchsorted(sp.path.real, zm.real))
        ins = min(max(ins, 1), len(sp.path) - 1)
        path = np.insert(sp.path, ins, zm)
        triple = quadrature.recursion_pqr(zm, gamma=sp.gamma, path=path,
                                          pv_index=ins)
    else:
        path = quadrature._branch_path(sp, zm)
        triple = quadrature.recursion_pqr(zm, gamma=sp.gamma, path=path)
    prow = quadrature.vandermonde_solve_dual(sp.mapped, triple.p[:PANEL_SIZE])
    # the hypersingular moments grow like 1/distance and their weights
    # cancel; extended precision keeps the row noise below ~1e-12
    close = np.min(np.abs(sp.mapped - zm)) < 0.05
    qrow = quadrature.vandermonde_solve_dual(sp.mapped, triple.q,
                                             extended=close) / sp.gamma
    wlog = np.imag(sp.gamma * quadrature.vandermonde_solve_dual(
        sp.mapped, triple.r) / sp.normals)

    dz = ref.nodes - z
    beta = np.conj(ref.zp) / ref.zp
    alpha = np.conj(dz)
    ratio = np.abs(ref.zp) / ref.zp

    a_dl = (np.imag(prow) * _HALFPI).astype(complex)
    b_dl = (np.conj(prow * beta) - np.conj(qrow * alpha)) / (4j * np.pi)
    a_sl = _QUARTER * wlog + 0j
    b_sl = -_EIGHTH * np.conj(prow * alpha * ratio)

    # plain point-quadrature counterparts included in the Ewald sums
    a_dl -= _HALFPI * ref.w * np.imag(ref.zp / dz)
    b_dl -= _HALFPI * ref.w * np.imag(ref.zp * alpha) / alpha**2
    a_sl -= _QUARTER * ref.arc_w * np.log(np.abs(dz))
    b_sl -= -_EIGHTH * ref.arc_w * dz / alpha
    return a_dl, b_dl, a_sl, b_sl
