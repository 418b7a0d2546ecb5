import numpy as np
import pytest

from dropflow import ewald, geometry as geo, kernels as K, layerpot as lp

BOX = ewald.PeriodicBox(2 * np.pi, 2 * np.pi)
RNG = np.random.default_rng(23)


def circle_panels(center, radius, n):
    g = geo.make_uniform(geo.Circle(center=center, radius=radius), n)
    return g, geo.to_panels(g, n // 16)


def complex_sl_plain(p, dens, z):
    dz = p.nodes - z
    t1 = -np.sum(p.arc_w * dens) / (8 * np.pi)
    t2 = np.sum(p.arc_w * dens * np.log(np.abs(dz))) / (4 * np.pi)
    t3 = -np.sum(np.conj(dens) * p.arc_w * dz / np.conj(dz)) / (8 * np.pi)
    return t1 + t2 + t3


def complex_dl_plain(p, dens, z):
    dz = p.nodes - z
    m1 = p.w * np.imag(p.zp / dz)
    m2 = p.w * np.imag(p.zp * np.conj(dz)) / np.conj(dz) ** 2
    return np.sum(dens * m1 + np.conj(dens) * m2) / (2 * np.pi)


def tensor_sum(kernel, p, dens, z, with_normals=False):
    out = np.zeros(2)
    for m in range(p.n_points):
        r = np.array([(z - p.nodes[m]).real, (z - p.nodes[m]).imag])
        g = np.array([dens[m].real, dens[m].imag])
        if with_normals:
            nv = np.array([p.normals[m].real, p.normals[m].imag])
            out += p.arc_w[m] * np.einsum("jlm,l,m->j", kernel(r), g, nv)
        else:
            out += p.arc_w[m] * kernel(r) @ g
    return out[0] + 1j * out[1]


def test_complex_single_layer_is_minus_tensor_stokeslet_sum():
    _, p = circle_panels(0.0, 1.0, 64)
    dens = np.exp(1j * np.angle(p.nodes)) + 0.3
    for z in [2.5 + 1.0j, -3.0 + 0.2j]:
        cval = complex_sl_plain(p, dens, z)
        tval = tensor_sum(K.stokeslet, p, dens, z)
        assert abs(cval + tval) < 1e-12 * max(1, abs(cval))


def test_complex_double_layer_is_negated_stresslet_sum():
    # the complex double layer corresponds to the kernel -T, the one the
    # screened stresslet pair actually splits
    _, p = circle_panels(0.0, 1.0, 64)
    dens = np.exp(2j * np.angle(p.nodes)) - 0.5j
    for z in [2.5 + 1.0j, -0.1 - 2.7j]:
        cval = complex_dl_plain(p, dens, z)
        tval = tensor_sum(K.stresslet, p, dens, z, with_normals=True)
        assert abs(cval + tval) < 1e-12 * max(1, abs(cval))


# ------------------------------------------------------------ traction

def test_traction_clean_unit_circle():
    g, p = circle_panels(0.0, 1.0, 64)
    d = lp.DropState(g, lam=1.0)
    f = lp.traction(d, ca=1.0)
    assert np.max(np.abs(f - p.normals)) < 1e-10


def test_traction_scaling_radius_and_ca():
    g, p = circle_panels(0.0, 2.0, 64)
    d = lp.DropState(g)
    f = lp.traction(d, ca=2.0)
    assert np.max(np.abs(f - p.normals / 4.0)) < 1e-10


def test_traction_with_varying_sigma():
    n = 64
    g, p = circle_panels(0.0, 1.0, n)
    # sigma = 1 - 0.2 cos(alpha) via rho = cos(alpha), E = 0.2
    rho = np.cos(g.alphas)
    d = lp.DropState(g, rho=rho + 1.0, elasticity=0.2)
    # sigma = 1 - 0.2(1 + cos a) -> recompute expectation symbolically
    f = lp.traction(d, ca=1.0)
    a_gl = np.angle(p.nodes)
    a_gl = np.where(a_gl < 0, a_gl + 2 * np.pi, a_gl)
    sigma = 1 - 0.2 * (1 + np.cos(a_gl))
    dsig = 0.2 * np.sin(a_gl)
    normal = np.exp(1j * a_gl)
    tangent = 1j * normal
    expected = sigma * 1.0 * normal - dsig * tangent
    assert np.max(np.abs(f - expected)) < 1e-10


def test_traction_sigma_nonpositive_raises():
    g, _ = circle_panels(0.0, 1.0, 64)
    d = lp.DropState(g, rho=np.full(64, 6.0), elasticity=0.2)
    with pytest.raises(lp.ModelValidityError):
        lp.traction(d, ca=1.0)


# ------------------------------------------------------------ assembly

def make_system(n_drop=0, n_solid=64, lam=1.0, use_spectral=True,
                tol=1e-10):
    drops = []
    solids = []
    if n_drop:
        g, _ = circle_panels(np.pi + 1j * (np.pi + 2.1), 1.0, n_drop)
        drops.append(lp.DropState(g, lam=lam))
    if n_solid:
        gs, ps = circle_panels(np.pi + 1j * np.pi, 1.0, n_solid)
        solids.append(lp.SolidState(ps))
    params = ewald.select_params(tol, 1.0, BOX)
    return lp.StokesSystem(drops, solids, BOX, params,
                           use_spectral=use_spectral)


def test_apply_zero_is_zero():
    sys = make_system(n_drop=32, n_solid=32)
    x = np.zeros(sys.n_nodes, dtype=complex)
    assert np.allclose(sys.apply(x), 0.0)


def test_identity_when_clean_drops_only():
    g, _ = circle_panels(np.pi + np.pi * 1j, 1.0, 64)
    params = ewald.select_params(1e-10, 1.0, BOX)
    sys = lp.StokesSystem([lp.DropState(g, lam=1.0)], [], BOX, params)
    x = RNG.normal(size=sys.n_nodes) + 1j * RNG.normal(size=sys.n_nodes)
    assert np.max(np.abs(sys.apply(x) - x)) < 1e-11 * np.max(np.abs(x))


def test_periodic_double_layer_identity_near_boundary():
    # constant density in the zero-mean gauge: constant inside, constant
    # outside, jump exactly one, even 1e-4 from the curve (16 panels:
    # near-evaluation error scales like fit truncation over distance)
    sys = make_system(n_drop=0, n_solid=256, tol=1e-12)
    dens = np.ones(sys.n_nodes, dtype=complex)
    c = np.pi + np.pi * 1j
    targets = np.array([c, c + (1 - 1e-4), c + (1 + 1e-4),
                        c + 1j * (1 - 3e-3), c + 1j * (1 + 3e-3)])
    out = sys.double_layer(dens, targets=targets)
    for i, z in enumerate(targets):
        for pj in sys._near_panels(z):
            ref = sys.panels[pj]
            rel = sys._relative_target(z, ref)
            dist = ref.scaled.distance(rel)
            if dist < 1e-12 or dist >= ref.length:
                continue
            a_dl, b_dl, _, _ = lp.correction_rows(ref, rel)
            blk = dens[ref.start:ref.start + 16]
            out[i] += a_dl @ blk + b_dl @ np.conj(blk)
    # for solid bodies the flux compensation restores the clean identity
    assert abs(out[0] - out[1]) < 1e-9       # interior values agree
    assert abs(out[1] - out[2] - 1) < 2e-9   # jump is exactly one
    assert abs(out[0] - 1) < 1e-9
    assert abs(out[2]) < 1e-9 and abs(out[4]) < 1e-9


def test_spectral_vs_direct_assembly():
    sys_s = make_system(n_drop=32, n_solid=32, lam=0.5, use_spectral=True)
    sys_d = make_system(n_drop=32, n_solid=32, lam=0.5, use_spectral=False)
    x = RNG.normal(size=sys_s.n_nodes) + 1j * RNG.normal(size=sys_s.n_nodes)
    ys = sys_s.apply(x)
    yd = sys_d.apply(x)
    assert np.max(np.abs(ys - yd)) < 1e-9 * np.max(np.abs(x))


def test_solid_disc_rhs_is_background_flow():
    sys = make_system(n_drop=0, n_solid=64)
    flow = lp.FlowField("uniform", strength=-1j)
    b = sys.rhs(flow, ca=1.0)
    assert np.allclose(b, -1j, atol=1e-14)


def test_solid_disc_no_slip():
    flow = lp.FlowField("uniform", strength=-1j)
    sys = make_system(n_drop=0, n_solid=128, tol=1e-10)
    x, stats = sys.solve(flow, ca=1.0, tol=1e-10)
    assert stats.converged
    # no-slip residual at fresh boundary points between the solve nodes
    c = np.pi + np.pi * 1j
    ang = RNG.uniform(0, 2 * np.pi, 24)
    pts = c + np.exp(1j * ang)
    u = sys.boundary_velocity(pts, x, flow, ca=1.0)
    assert np.max(np.abs(u)) < 1e-8
    # just off the wall the flow grows linearly with the shear
    off, inside = sys.eval_velocity(c + 1.001 * np.exp(1j * ang), x, flow,
                                    ca=1.0)
    assert not np.any(inside)
    assert np.max(np.abs(off)) < 5e-3


def test_gmres_iterations_second_kind_scaling():
    flow = lp.FlowField("uniform", strength=-1j)
    iters = []
    for n in [64, 128]:
        sys = make_system(n_drop=0, n_solid=n, tol=1e-10)
        _, stats = sys.solve(flow, ca=1.0, tol=1e-10)
        assert stats.converged
        iters.append(stats.iterations)
    assert iters[1] <= iters[0] + 2


def test_drop_node_limit_consistency():
    flow = lp.FlowField("uniform", strength=-1j)
    g, _ = circle_panels(np.pi + 1j * (np.pi + 2.1), 1.0, 64)
    drop = lp.DropState(g, lam=0.5)
    gs, ps = circle_panels(np.pi + 1j * np.pi, 1.0, 64)
    params = ewald.select_params(1e-10, 1.0, BOX)
    sys = lp.StokesSystem([drop], [lp.SolidState(ps)], BOX, params)
    x, stats = sys.solve(flow, ca=1.0, tol=1e-11)
    assert stats.converged
    u, q = sys.split(x)
    # on-node evaluation: the principal value equals (lam+1)/2 u, i.e. the
    # outer limit recovers u itself
    node_ids = [3, 20, 41]
    rep = np.zeros(len(node_ids), dtype=complex)
    dens = np.empty(sys.n_nodes, dtype=complex)
    dens[sys.is_drop] = u
    dens[~sys.is_drop] = q
    bracket = sys.bracket(x)
    f_rhs = sys.rhs(flow, ca=1.0)
    lam = 0.5
    for i, t in enumerate(node_ids):
        # principal-value representation value at the node
        rep[i] = bracket[t] + f_rhs[t] / sys.pref[t]
    outer = rep - (lam - 1.0) * u[node_ids] / 2.0
    assert np.max(np.abs(outer - u[node_ids])) < 1e-8


def test_interface_velocity_continuity():
    flow = lp.FlowField("extensional", strength=0.25)
    g, _ = circle_panels(np.pi + 1j * np.pi, 1.0, 96)
    drop = lp.DropState(g, lam=3.0)
    params = ewald.select_params(1e-11, 1.0, BOX)
    sys = lp.StokesSystem([drop], [], BOX, params)
    x, stats = sys.solve(flow, ca=1.0, tol=1e-11)
    assert stats.converged
    c = np.pi + np.pi * 1j
    ang = np.array([0.3, 1.9, 4.4])

    def mismatch(d):
        z_out = c + (1 + d) * np.exp(1j * ang)
        z_in = c + (1 - d) * np.exp(1j * ang)
        u_out, _ = sys.eval_velocity(z_out, x, flow, ca=1.0)
        u_in, _ = sys.eval_velocity(z_in, x, flow, ca=1.0)
        return u_out - u_in

    # the viscosity jump makes du/dn discontinuous, so mirrored points
    # differ by O(d) physically; the d -> 0 limit isolates the handling
    # of the double-layer jump itself
    m1, m2 = mismatch(1e-4), mismatch(2e-4)
    assert np.max(np.abs(m1)) < 1e-4
    assert np.max(np.abs(2 * m1 - m2)) < 1e-6


def test_far_field_with_zero_densities_is_background():
    g, _ = circle_panels(np.pi + 1j * np.pi, 1.0, 64)
    params = ewald.select_params(1e-8, 1.0, BOX)
    flow = lp.FlowField("uniform", strength=2.0 + 1.0j)
    sys = lp.StokesSystem([lp.DropState(g, lam=1.0)], [], BOX, params)
    x = np.zeros(sys.n_nodes, dtype=complex)

    class ZeroTraction(lp.DropState):
        pass

    pts = np.array([0.3 + 0.2j, 5.0 + 1.0j])
    # zero densities and sigma = 1: only the traction single layer and
    # background remain; cancel the traction by evaluating the double
    # layer part alone
    u, _ = sys.eval_velocity(pts, x, flow, ca=1.0)
    # subtract the traction single layer measured separately
    f_full = np.zeros(sys.n_nodes, dtype=complex)
    start = 0
    for d in sys.drops:
        n = d.panels.n_points
        f_full[start:start + n] = lp.traction(d, ca=1.0)
        start += n
    sl = sys.single_layer(f_full, drop_sources=True, targets=pts)
    assert np.max(np.abs(u - sl - flow(pts))) < 1e-10
