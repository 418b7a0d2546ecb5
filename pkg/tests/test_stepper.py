import numpy as np
import pytest

from dropflow import geometry as geo, spectral, stepper
from dropflow.layerpot import DropState
from dropflow.stepper import (ARK_A_EXPLICIT, ARK_A_IMPLICIT, ARK_B,
                              ARK_B_HAT, ARK_C, StageVelocity, StepControl,
                              adapt_dt, advance, imex_step, modify_tangential)


# ------------------------------------------------------------ tableau

def test_row_sums_equal_nodes():
    assert np.allclose(ARK_A_EXPLICIT.sum(axis=1), ARK_C, atol=1e-13)
    assert np.allclose(ARK_A_IMPLICIT.sum(axis=1), ARK_C, atol=1e-13)


def test_order_conditions_to_fourth_order():
    c, b = ARK_C, ARK_B
    for A in (ARK_A_EXPLICIT, ARK_A_IMPLICIT):
        assert abs(b.sum() - 1.0) < 1e-13
        assert abs(b @ c - 0.5) < 1e-13
        assert abs(b @ c**2 - 1.0 / 3.0) < 1e-13
        assert abs(b @ c**3 - 0.25) < 1e-13
        assert abs(b @ (A @ c) - 1.0 / 6.0) < 1e-12
        assert abs((b * c) @ (A @ c) - 0.125) < 1e-12
        assert abs(b @ (A @ c**2) - 1.0 / 12.0) < 1e-12
        assert abs(b @ (A @ (A @ c)) - 1.0 / 24.0) < 1e-12
    # additive coupling conditions: mixed products of the two tables
    for A1 in (ARK_A_EXPLICIT, ARK_A_IMPLICIT):
        for A2 in (ARK_A_EXPLICIT, ARK_A_IMPLICIT):
            assert abs(b @ (A1 @ (A2 @ c)) - 1.0 / 24.0) < 1e-12
    # embedded weights give third order, not fourth
    bh = ARK_B_HAT
    assert abs(bh.sum() - 1.0) < 1e-13
    assert abs(bh @ c - 0.5) < 1e-13
    assert abs(bh @ c**2 - 1.0 / 3.0) < 1e-12
    assert abs(bh @ (ARK_A_IMPLICIT @ c) - 1.0 / 6.0) < 1e-12
    assert abs(bh @ c**3 - 0.25) > 1e-5


def test_esdirk_structure():
    assert np.all(np.abs(np.diag(ARK_A_IMPLICIT)[1:] - 0.25) < 1e-15)
    assert ARK_A_IMPLICIT[0, 0] == 0.0
    assert np.allclose(ARK_A_IMPLICIT[-1], ARK_B)  # stiffly accurate


# ------------------------------------------------------------ modify_tangential

def test_modify_tangential_constant_normal_velocity():
    g = geo.make_uniform(geo.Circle(), 64)
    u = 0.7 * g.normals  # u_n = 0.7 everywhere
    ut = modify_tangential(u, g)
    assert np.max(np.abs(ut)) < 1e-12


def test_modify_tangential_cosine():
    g = geo.make_uniform(geo.Circle(), 64)
    a = g.alphas
    u = np.cos(a) * g.normals  # u_n = cos(alpha), Im(z''/z') = 1
    ut = modify_tangential(u, g)
    assert np.max(np.abs(ut - (-np.sin(a)))) < 1e-12
    assert abs(ut[0]) < 1e-13


# ------------------------------------------------------------ adapt_dt

def test_adapt_dt_formula():
    got = adapt_dt(0.1, 1.6e-7, 1e-8)
    assert abs(got - 0.0472871) < 1e-7


def test_adapt_dt_unity_factor():
    tol = 1e-8
    assert abs(adapt_dt(0.05, 0.8 * tol, tol) - 0.05) < 1e-15


def test_adapt_dt_enormous_error_floors():
    assert adapt_dt(0.1, 1e60, 1e-8) == stepper.EPS


# ------------------------------------------------------------ imex_step

def frozen_oracle(factor=-1.0):
    def oracle(drops, t):
        return [StageVelocity(u_tilde=factor * d.grid.points
                              + 0.0 * (np.pi + np.pi * 1j))
                for d in drops], 1
    return oracle


def decay_oracle(drops, t):
    # velocity pulling radially toward the centre: z' = -(z - c)
    c = np.pi + np.pi * 1j
    return [StageVelocity(u_tilde=-(d.grid.points - c)) for d in drops], 1


def test_imex_step_zero_velocity_is_identity():
    g = geo.make_uniform(geo.Circle(center=np.pi + np.pi * 1j), 32)
    drops = [DropState(g)]

    def oracle(ds, t):
        return [StageVelocity(u_tilde=np.zeros(d.grid.n_points, complex))
                for d in ds], 1

    control = StepControl(tol=1e-8)
    new, r, accept, nsolve, _ = imex_step(drops, 0.0, 0.1, oracle, control)
    assert r == 0.0 and accept
    assert np.array_equal(new[0].grid.points, g.points)


def test_frozen_field_order_four():
    # dz/dt = -(z - c): exact decay of the radius toward the centre
    c = np.pi + np.pi * 1j
    control = StepControl(tol=1e30)  # never reject
    errs = []
    dts = [0.1, 0.05, 0.025, 0.0125]
    for dt in dts:
        g = geo.make_uniform(geo.Circle(center=c, radius=1.0), 32)
        drops = [DropState(g)]
        t = 0.0
        while t < 0.5 - 1e-12:
            h = min(dt, 0.5 - t)
            drops, r, _, _, _ = imex_step(drops, t, h, decay_oracle, control)
            t += h
        exact = c + (g.points - c) * np.exp(-0.5)
        errs.append(np.max(np.abs(drops[0].grid.points - exact)))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert all(abs(p - 4.0) < 0.2 for p in orders), (errs, orders)


def test_stiff_scalar_decay():
    # rho' = D rho with a stiff diffusion symbol; stable far beyond the
    # explicit limit and accurate against the exact exponential decay
    n = 32
    g = geo.make_uniform(geo.Circle(center=np.pi + np.pi * 1j), n)
    rho0 = 1.0 + 0.5 * np.cos(4 * g.alphas)
    drops = [DropState(g, rho=rho0, elasticity=0.0, peclet=1e-6)]
    # Pe tiny makes D_4 = -16/Pe huge and stiff

    def oracle(ds, t):
        return [StageVelocity(u_tilde=np.zeros(n, complex),
                              u_n=np.zeros(n), u_t=np.zeros(n),
                              u_t_mod=np.zeros(n)) for d in ds], 0

    control = StepControl(tol=1e30)
    t, dt = 0.0, 0.05
    while t < 0.5 - 1e-12:
        drops, r, _, _, _ = imex_step(drops, t, dt, oracle, control)
        t += dt
    # all oscillatory modes annihilated (L-stable), mean survives
    assert np.max(np.abs(drops[0].rho - 1.0)) < 1e-8
    assert np.all(np.isfinite(drops[0].rho))


def test_pure_diffusion_matches_exponential():
    n = 32
    g = geo.make_uniform(geo.Circle(center=np.pi + np.pi * 1j), n)
    pe = 10.0
    rho0 = 1.0 + 0.3 * np.cos(2 * g.alphas)
    drops = [DropState(g, rho=rho0, peclet=pe)]

    def oracle(ds, t):
        return [StageVelocity(u_tilde=np.zeros(n, complex),
                              u_n=np.zeros(n), u_t=np.zeros(n),
                              u_t_mod=np.zeros(n)) for d in ds], 0

    control = StepControl(tol=1e-10, dt=0.01)
    drops, log = advance(drops, 1.0, control, oracle)
    lam = -4.0 / (pe * g.arc_factor**2)
    exact = 1.0 + 0.3 * np.exp(lam * 1.0) * np.cos(2 * g.alphas)
    assert np.max(np.abs(drops[0].rho - exact)) < 1e-8


def test_embedded_error_fourth_order_scaling():
    c = np.pi + np.pi * 1j
    control = StepControl(tol=1e30)
    g = geo.make_uniform(geo.Circle(center=c, radius=1.0), 32)
    drops = [DropState(g)]
    rs = []
    for dt in [0.1, 0.05]:
        _, r, _, _, _ = imex_step(drops, 0.0, dt, decay_oracle, control)
        rs.append(r)
    assert abs(np.log2(rs[0] / rs[1]) - 4.0) < 0.4


def test_advance_step_log_and_reuse():
    c = np.pi + np.pi * 1j
    g = geo.make_uniform(geo.Circle(center=c, radius=1.0), 32)
    drops = [DropState(g)]
    control = StepControl(tol=1e-8, dt=0.05)
    drops, log = advance(drops, 0.5, control, decay_oracle)
    assert log.accepted > 0
    assert log.times[-1] == pytest.approx(0.5)
    # with solve counting: stage one reused across retries of one state
    assert log.velocity_solves <= 6 * log.attempted + log.accepted + 1


def test_advance_equidistribution_maintained():
    c = np.pi + np.pi * 1j
    g = geo.make_uniform(geo.Circle(center=c, radius=1.0), 64)
    drops = [DropState(g)]

    def oracle(ds, t):
        out = []
        for d in ds:
            z = d.grid.points
            u = 0.2 * np.cos(2 * np.angle(z - c)) * d.grid.normals
            u_n = np.real(u * np.conj(d.grid.normals))
            ut = modify_tangential(u, d.grid)
            out.append(StageVelocity(u_tilde=(u_n + 1j * ut) * d.grid.normals))
        return out, 1

    control = StepControl(tol=1e-8, dt=0.02)
    drops, log = advance(drops, 0.5, control, oracle)
    assert drops[0].grid.spacing_spread() < 100 * control.tol


def test_advance_krasny_filter_applied():
    c = np.pi + np.pi * 1j
    g = geo.make_uniform(geo.Circle(center=c, radius=1.0), 64)
    noisy = g.points + 1e-14 * np.exp(1j * 31 * g.alphas)
    drops = [DropState(geo.UniformGrid(noisy))]

    def oracle(ds, t):
        return [StageVelocity(u_tilde=np.zeros(64, complex))
                for d in ds], 0

    control = StepControl(tol=1e-6, dt=0.1)
    drops, log = advance(drops, 0.1, control, oracle)
    spec = np.abs(spectral.trig_coeffs(drops[0].grid.points))
    assert spec[31] == 0.0  # filtered away


def test_advance_regrid_on_length_change():
    c = np.pi + np.pi * 1j
    g = geo.make_uniform(geo.Circle(center=c, radius=1.0), 64)
    drops = [DropState(g)]
    # uniform expansion at rate 1: length grows ~ e^t
    def oracle(ds, t):
        return [StageVelocity(u_tilde=(d.grid.points - c)) for d in ds], 1

    control = StepControl(tol=1e-8, dt=0.01,
                          target_spacing=g.spacing)
    drops, log = advance(drops, 0.35, control, oracle)
    assert log.regrids >= 1
    assert drops[0].grid.n_points > 64
    assert abs(drops[0].grid.spacing - g.spacing) / g.spacing < 0.15
