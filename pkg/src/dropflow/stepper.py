"""Adaptive fourth-order IMEX time integration of interface positions and
surfactant spectra.

Positions advance with the explicit half of a six-stage additive
Runge-Kutta pair (the velocity is non-stiff); surfactant diffusion uses
the companion ESDIRK half, which is diagonal per Fourier mode.  The
embedded third-order weights drive the step-size controller.  Between
accepted steps the position and concentration spectra pass through a
Krasny filter and the interface is regridded when its length has
drifted enough.
"""

from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .geometry import UniformGrid, equidistribute, krasny_filter, regrid
from .layerpot import DropState
from .surfactant import explicit_rhs, implicit_symbol

# six-stage, fourth-order additive pair with shared nodes and weights
# (explicit ERK + stiffly accurate ESDIRK, embedded third order)
ARK_C = np.array([0.0, 1.0 / 2.0, 83.0 / 250.0, 31.0 / 50.0,
                  17.0 / 20.0, 1.0])

ARK_B = np.array([82889.0 / 524892.0, 0.0, 15625.0 / 83664.0,
                  69875.0 / 102672.0, -2260.0 / 8211.0, 1.0 / 4.0])

ARK_B_HAT = np.array([4586570599.0 / 29645900160.0, 0.0,
                      178811875.0 / 945068544.0,
                      814220225.0 / 1159782912.0,
                      -3700637.0 / 11593932.0, 61727.0 / 225920.0])

ARK_A_EXPLICIT = np.zeros((6, 6))
ARK_A_EXPLICIT[1, 0] = 1.0 / 2.0
ARK_A_EXPLICIT[2, :2] = [13861.0 / 62500.0, 6889.0 / 62500.0]
ARK_A_EXPLICIT[3, :3] = [-116923316275.0 / 2393684061468.0,
                         -2731218467317.0 / 15368042101831.0,
                         9408046702089.0 / 11113171139209.0]
ARK_A_EXPLICIT[4, :4] = [-451086348788.0 / 2902428689909.0,
                         -2682348792572.0 / 7519795681897.0,
                         12662868775082.0 / 11960479115383.0,
                         3355817975965.0 / 11060851509271.0]
ARK_A_EXPLICIT[5, :5] = [647845179188.0 / 3216320057751.0,
                         73281519250.0 / 8382639484533.0,
                         552539513391.0 / 3454668386233.0,
                         3354512671639.0 / 8306763924573.0,
                         4040.0 / 17871.0]

ARK_A_IMPLICIT = np.zeros((6, 6))
ARK_A_IMPLICIT[1, :2] = [1.0 / 4.0, 1.0 / 4.0]
ARK_A_IMPLICIT[2, :3] = [8611.0 / 62500.0, -1743.0 / 31250.0, 1.0 / 4.0]
ARK_A_IMPLICIT[3, :4] = [5012029.0 / 34652500.0, -654441.0 / 2922500.0,
                         174375.0 / 388108.0, 1.0 / 4.0]
ARK_A_IMPLICIT[4, :5] = [15267082809.0 / 155376265600.0,
                         -71443401.0 / 120774400.0,
                         730878875.0 / 902184768.0,
                         2285395.0 / 8070912.0, 1.0 / 4.0]
ARK_A_IMPLICIT[5, :] = ARK_B

N_STAGES = 6
EPS = np.finfo(float).eps


@dataclass
class StepControl:
    tol: float = 1e-8
    dt: float = 0.0
    safety: float = 0.8
    dt_min: float = EPS
    krasny_level: float = 1e-12
    regrid_fraction: float = 0.10
    target_spacing: float = 0.0   # 0: keep the current node counts

    def initial_dt(self):
        return self.dt if self.dt > 0 else 0.01 * self.tol ** 0.25


@dataclass
class StepLog:
    accepted: int = 0
    rejected: int = 0
    velocity_solves: int = 0
    regrids: int = 0
    times: list = field(default_factory=list)
    dts: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def attempted(self):
        return self.accepted + self.rejected


@dataclass
class StageVelocity:
    """Per-drop velocity data at one stage: the grid-motion velocity and
    the components feeding the surfactant equation."""
    u_tilde: np.ndarray
    u_n: np.ndarray = None
    u_t: np.ndarray = None
    u_t_mod: np.ndarray = None


def modify_tangential(u, grid):
    """Tangential velocity that keeps the nodes equidistant.

    Integrates Im(z''/z') u_n spectrally; the mean enters through a term
    linear in the parameter, so the result vanishes at alpha = 0.
    """
    u_n = np.real(u * np.conj(grid.normals))
    g = np.imag(grid.deriv2 / grid.deriv1) * u_n
    ghat = spectral.trig_coeffs(g)
    n = grid.n_points
    k = spectral.modes(n).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(k == 0.0, 0.0, ghat / np.where(k == 0.0, 1.0, 1j * k))
    if n % 2 == 0:
        c[n // 2] = 0.0
    vals = spectral.from_coeffs(c)
    return -np.real(vals - np.sum(c))


def adapt_dt(dt_old, r, tol, safety=0.8, dt_min=EPS):
    """Step-size update from the embedded error estimate."""
    if r < 0:
        raise ValueError("error measure must be non-negative")
    if r == 0.0:
        return 5.0 * dt_old  # no information; grow gently
    return max(dt_old * (safety * tol / r) ** 0.25, dt_min)


def _stage_drop(base, grid, rho):
    return DropState(grid, lam=base.lam, rho=rho,
                     elasticity=base.elasticity, peclet=base.peclet)


def imex_step(drops, t, dt, velocity_oracle, control, first_stage=None):
    """One six-stage additive step of positions and surfactant spectra.

    ``velocity_oracle(drops, t)`` returns (list of StageVelocity, n_solves).
    Returns (candidate drops, error r, accept flag, n_solves, stage-one
    velocities for reuse on retries of the same state).
    """
    nd = len(drops)
    z0 = [d.grid.points for d in drops]
    rho_hat0 = [None if d.rho is None else spectral.trig_coeffs(d.rho)
                for d in drops]
    u_stage = [[None] * N_STAGES for _ in range(nd)]
    fe_hat = [[None] * N_STAGES for _ in range(nd)]
    fi_hat = [[None] * N_STAGES for _ in range(nd)]
    n_solves = 0

    stage_drops = list(drops)
    for i in range(N_STAGES):
        if i == 0 and first_stage is not None:
            packets = first_stage
        else:
            packets, used = velocity_oracle(stage_drops, t + ARK_C[i] * dt)
            n_solves += used
        if i == 0:
            first_stage = packets
        for kdrop in range(nd):
            u_stage[kdrop][i] = packets[kdrop].u_tilde
            if rho_hat0[kdrop] is not None:
                g = stage_drops[kdrop].grid
                rho_i = stage_drops[kdrop].rho
                fe = explicit_rhs(g, rho_i, packets[kdrop].u_n,
                                  packets[kdrop].u_t, packets[kdrop].u_t_mod)
                fe_hat[kdrop][i] = spectral.trig_coeffs(fe)
                dsym = implicit_symbol(spectral.modes(g.n_points),
                                       drops[kdrop].peclet, g.arc_factor)
                fi_hat[kdrop][i] = dsym * spectral.trig_coeffs(rho_i)

        if i + 1 < N_STAGES:
            stage_drops = []
            for kdrop in range(nd):
                z_i = z0[kdrop] + dt * sum(
                    ARK_A_EXPLICIT[i + 1, j] * u_stage[kdrop][j]
                    for j in range(i + 1))
                grid_i = UniformGrid(z_i)
                rho_i = None
                if rho_hat0[kdrop] is not None:
                    rhs = rho_hat0[kdrop].copy()
                    for j in range(i + 1):
                        rhs = rhs + dt * (
                            ARK_A_EXPLICIT[i + 1, j] * fe_hat[kdrop][j]
                            + ARK_A_IMPLICIT[i + 1, j] * fi_hat[kdrop][j])
                    # stage-frozen arc factor makes the solve diagonal
                    dsym = implicit_symbol(spectral.modes(len(rhs)),
                                           drops[kdrop].peclet,
                                           grid_i.arc_factor)
                    rho_hat_i = rhs / (1.0 - dt * ARK_A_IMPLICIT[i + 1, i + 1]
                                       * dsym)
                    rho_i = np.real(spectral.from_coeffs(rho_hat_i))
                stage_drops.append(_stage_drop(drops[kdrop], grid_i, rho_i))

    # assemble fourth-order result and embedded error
    new_drops = []
    err_z_num = err_z_den = 0.0
    err_rho = 0.0
    for kdrop in range(nd):
        du4 = sum(ARK_B[i] * u_stage[kdrop][i] for i in range(N_STAGES))
        du3 = sum(ARK_B_HAT[i] * u_stage[kdrop][i] for i in range(N_STAGES))
        z4 = z0[kdrop] + dt * du4
        z3 = z0[kdrop] + dt * du3
        err_z_num += np.sum(np.abs(z4 - z3) ** 2)
        # normalise by the intrinsic interface scale, not the coordinates
        # of the drop centre, so the control is translation invariant
        err_z_den += np.sum(np.abs(z4 - np.mean(z4)) ** 2)
        rho4 = None
        if rho_hat0[kdrop] is not None:
            h4 = rho_hat0[kdrop] + dt * sum(
                ARK_B[i] * (fe_hat[kdrop][i] + fi_hat[kdrop][i])
                for i in range(N_STAGES))
            h3 = rho_hat0[kdrop] + dt * sum(
                ARK_B_HAT[i] * (fe_hat[kdrop][i] + fi_hat[kdrop][i])
                for i in range(N_STAGES))
            num = np.linalg.norm(h4 - h3)
            den = max(np.linalg.norm(h4), 1e-300)
            err_rho = max(err_rho, num / den)
            rho4 = np.real(spectral.from_coeffs(h4))
            if np.any(rho4 < 0) and np.min(rho4) < -1e-10:
                rho4 = np.maximum(rho4, 0.0)
        new_drops.append(_stage_drop(drops[kdrop], UniformGrid(z4), rho4))

    r_z = np.sqrt(err_z_num / max(err_z_den, 1e-300))
    r = max(r_z, err_rho)
    return new_drops, r, r <= control.tol, n_solves, first_stage


def _filter_and_regrid(drops, control, log, base_lengths):
    out = []
    for k, d in enumerate(drops):
        z = spectral.from_coeffs(
            krasny_filter(spectral.trig_coeffs(d.grid.points),
                          control.krasny_level))
        rho = d.rho
        if rho is not None:
            rho = np.real(spectral.from_coeffs(
                krasny_filter(spectral.trig_coeffs(rho),
                              control.krasny_level)))
        grid = UniformGrid(z)
        if control.target_spacing > 0 and base_lengths[k] > 0:
            drift = abs(grid.length - base_lengths[k]) / base_lengths[k]
            if drift >= control.regrid_fraction:
                new_grid = regrid(grid, control.target_spacing)
                if rho is not None:
                    rho = np.real(spectral.resample(rho, new_grid.n_points))
                grid, fields, _ = equidistribute(
                    new_grid, fields=() if rho is None else (rho,))
                if rho is not None:
                    rho = np.real(fields[0])
                base_lengths[k] = grid.length
                log.regrids += 1
        out.append(DropState(grid, lam=d.lam, rho=rho,
                             elasticity=d.elasticity, peclet=d.peclet))
    return out


def advance(drops, t_final, control, velocity_oracle, t0=0.0,
            snapshot_cb=None, max_steps=100000):
    """Adaptive time loop; returns (drops, log) at t_final.

    ``snapshot_cb(t, drops, log)`` is invoked after every accepted step.
    """
    log = StepLog()
    t = t0
    dt = control.initial_dt()
    base_lengths = [d.grid.length for d in drops]
    first_stage = None
    while t < t_final - 1e-14:
        dt = min(dt, t_final - t)
        cand, r, accept, used, first_stage = imex_step(
            drops, t, dt, velocity_oracle, control, first_stage=first_stage)
        log.velocity_solves += used
        if accept:
            t += dt
            drops = _filter_and_regrid(cand, control, log, base_lengths)
            log.accepted += 1
            log.times.append(t)
            log.dts.append(dt)
            log.errors.append(r)
            first_stage = None
            if snapshot_cb is not None:
                snapshot_cb(t, drops, log)
        else:
            log.rejected += 1
        dt = adapt_dt(dt, r, control.tol, control.safety, control.dt_min)
        if dt <= 4 * EPS:
            raise RuntimeError(
                f"time step collapsed to machine epsilon at t = {t}")
        if log.attempted > max_steps:
            raise RuntimeError("step budget exhausted")
    return drops, log
