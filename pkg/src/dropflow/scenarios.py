"""Scenario configuration, run orchestration and result persistence.

Configs are line-oriented ``key = value`` text; presets are shipped as
config text so they round-trip through the parser.  A run writes a
manifest, one snapshot file per output time and a diagnostics table into
the output directory; rerunning a config reproduces the files bit for
bit.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import ewald, geometry, spectral
from .geometry import (Circle, Ellipse, PANEL_SIZE, SineWall, make_uniform,
                       panels_from_curve, to_uniform)
from .layerpot import (DropState, FlowField, ModelValidityError, SolidState,
                       StokesSystem)
from .solver import gmres
from .stepper import (StageVelocity, StepControl, advance, modify_tangential)
from .surfactant import total_mass

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or physically invalid scenario configuration."""


# ---------------------------------------------------------------------------
# configuration

_DEFAULTS = {
    "ca": 1.0,
    "pe": 10.0,
    "elasticity": 0.2,
    "spacing": 0.05,
    "time_tol": 1e-8,
    "ewald_tol": 1e-10,
    "r_c": 1.0,
    "t_final": 1.0,
    "snapshot_dt": 0.25,
    "gmres_tol": 0.0,          # 0: a tenth of the time tolerance
    "krasny_level": 1e-12,
    "window_p": 24.0,
    "safety": 0.8,
    "solid_spacing": 0.0,      # 0: same as drop spacing
}

_SCALAR_KEYS = set(_DEFAULTS) | {"out_dir"}


@dataclass
class SimulationConfig:
    box: tuple = (2 * np.pi, 2 * np.pi)
    drops: list = field(default_factory=list)
    solids: list = field(default_factory=list)
    flow: tuple = ("none",)
    out_dir: str = "out"
    params: dict = field(default_factory=lambda: dict(_DEFAULTS))

    def __getattr__(self, name):
        params = object.__getattribute__(self, "params")
        if name in params:
            return params[name]
        raise AttributeError(name)

    def to_text(self):
        lines = [f"box = {self.box[0]!r} {self.box[1]!r}"]
        for k in sorted(self.params):
            lines.append(f"{k} = {self.params[k]!r}")
        lines.append(f"out_dir = {self.out_dir}")
        lines.append(f"flow = {' '.join(repr(v) if isinstance(v, float) else str(v) for v in self.flow)}")
        for d in self.drops:
            lines.append("drop = " + _spec_to_text(d))
        for s in self.solids:
            lines.append("solid = " + _spec_to_text(s))
        return "\n".join(lines) + "\n"


def _spec_to_text(spec):
    kind = spec["kind"]
    if kind == "circle":
        out = f"circle {spec['x']!r} {spec['y']!r} {spec['radius']!r}"
    elif kind == "ellipse":
        out = (f"ellipse {spec['x']!r} {spec['y']!r} {spec['a']!r} "
               f"{spec['b']!r} {spec.get('rotation', 0.0)!r}")
    elif kind == "wall":
        amps = ",".join(f"{a!r}:{k}" for a, k in
                        zip(spec["amplitudes"], spec["wavenumbers"]))
        out = f"wall {spec['level']!r} {amps or 'flat'} {spec['side']}"
    else:
        raise ConfigError(f"unknown shape kind {kind!r}")
    if "lam" in spec:
        out += f" lam={spec['lam']!r}"
        out += f" rho={spec['rho0']!r}" if spec.get("rho0") is not None \
            else " clean"
    return out


def parse_config(text):
    """Parse the key-value scenario format into a SimulationConfig."""
    cfg = SimulationConfig()
    cfg.params = dict(_DEFAULTS)
    seen_box = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "box":
            parts = value.split()
            if len(parts) != 2:
                raise ConfigError(f"line {lineno}: box needs two lengths")
            cfg.box = (_pos_float(parts[0], "box", lineno),
                       _pos_float(parts[1], "box", lineno))
            seen_box = True
        elif key == "flow":
            cfg.flow = _parse_flow(value, lineno)
        elif key == "drop":
            cfg.drops.append(_parse_shape(value, lineno, is_drop=True))
        elif key == "solid":
            cfg.solids.append(_parse_shape(value, lineno, is_drop=False))
        elif key == "out_dir":
            cfg.out_dir = value
        elif key in _DEFAULTS:
            try:
                cfg.params[key] = float(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: bad number for {key}")
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if not seen_box:
        pass  # default periodic box
    _validate(cfg)
    return cfg


def _pos_float(tok, what, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad number in {what}")
    if v <= 0:
        raise ConfigError(f"line {lineno}: {what} must be positive")
    return v


def _parse_flow(value, lineno):
    parts = value.split()
    kind = parts[0]
    if kind == "none":
        return ("none",)
    if kind == "uniform":
        if len(parts) != 3:
            raise ConfigError(f"line {lineno}: uniform flow needs ux uy")
        return ("uniform", float(parts[1]), float(parts[2]))
    if kind == "poiseuille":
        if len(parts) != 4:
            raise ConfigError(
                f"line {lineno}: poiseuille needs strength center half_width")
        return ("poiseuille", float(parts[1]), float(parts[2]),
                float(parts[3]))
    if kind == "extensional":
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: extensional needs a rate")
        return ("extensional", float(parts[1]))
    raise ConfigError(f"line {lineno}: unknown flow kind {kind!r}")


def _parse_shape(value, lineno, is_drop):
    parts = value.split()
    kind = parts[0]
    spec = {}
    try:
        if kind == "circle":
            spec = {"kind": "circle", "x": float(parts[1]),
                    "y": float(parts[2]), "radius": float(parts[3])}
            rest = parts[4:]
        elif kind == "ellipse":
            spec = {"kind": "ellipse", "x": float(parts[1]),
                    "y": float(parts[2]), "a": float(parts[3]),
                    "b": float(parts[4]), "rotation": float(parts[5])}
            rest = parts[6:]
        elif kind == "wall":
            amps, wavs = [], []
            if parts[2] != "flat":
                for tok in parts[2].split(","):
                    a, k = tok.split(":")
                    amps.append(float(a))
                    wavs.append(int(k))
            spec = {"kind": "wall", "level": float(parts[1]),
                    "amplitudes": amps, "wavenumbers": wavs,
                    "side": parts[3]}
            rest = parts[4:]
        else:
            raise ConfigError(f"line {lineno}: unknown shape {kind!r}")
    except (IndexError, ValueError):
        raise ConfigError(f"line {lineno}: malformed {kind} spec")
    if is_drop:
        if kind == "wall":
            raise ConfigError(f"line {lineno}: a drop cannot be a wall")
        spec["lam"] = 1.0
        spec["rho0"] = None
        for tok in rest:
            if tok.startswith("lam="):
                spec["lam"] = float(tok[4:])
            elif tok.startswith("rho="):
                spec["rho0"] = float(tok[4:])
            elif tok == "clean":
                spec["rho0"] = None
            else:
                raise ConfigError(f"line {lineno}: unknown drop option {tok!r}")
    elif rest:
        raise ConfigError(f"line {lineno}: trailing tokens on solid spec")
    return spec


def _curve_of(spec, box):
    if spec["kind"] == "circle":
        return Circle(center=spec["x"] + 1j * spec["y"],
                      radius=spec["radius"])
    if spec["kind"] == "ellipse":
        return Ellipse(center=spec["x"] + 1j * spec["y"], a=spec["a"],
                       b=spec["b"], rotation=spec.get("rotation", 0.0))
    if spec["kind"] == "wall":
        return SineWall(period=box[0], level=spec["level"],
                        amplitudes=spec["amplitudes"],
                        wavenumbers=spec["wavenumbers"], side=spec["side"])
    raise ConfigError(f"unknown shape kind {spec['kind']!r}")


def _n_nodes_for(curve, spacing):
    arc = geometry._ArcLength(curve)
    n = int(round(arc.length / spacing / PANEL_SIZE)) * PANEL_SIZE
    return max(n, 2 * PANEL_SIZE)


def build_bodies(cfg):
    """Instantiate drop and solid states from a validated config."""
    pbox = ewald.PeriodicBox(*cfg.box)
    drops = []
    for spec in cfg.drops:
        curve = _curve_of(spec, cfg.box)
        n = _n_nodes_for(curve, cfg.spacing)
        grid = make_uniform(curve, n)
        rho = None if spec.get("rho0") is None \
            else np.full(n, float(spec["rho0"]))
        drops.append(DropState(grid, lam=spec.get("lam", 1.0), rho=rho,
                               elasticity=cfg.elasticity, peclet=cfg.pe))
    solids = []
    s_spacing = cfg.solid_spacing or cfg.spacing
    for spec in cfg.solids:
        curve = _curve_of(spec, cfg.box)
        n = _n_nodes_for(curve, s_spacing)
        solids.append(SolidState(panels_from_curve(curve, n // PANEL_SIZE)))
    return drops, solids, pbox


def _validate(cfg):
    for key in ("ca", "pe", "spacing", "time_tol", "ewald_tol", "r_c",
                "t_final"):
        if cfg.params[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if cfg.elasticity < 0:
        raise ConfigError("elasticity must be non-negative")
    if cfg.r_c > min(cfg.box) / 2:
        raise ConfigError("r_c exceeds half the periodic box")
    _check_overlap(cfg)


def _check_overlap(cfg):
    pbox = ewald.PeriodicBox(*cfg.box)
    curves = []
    names = []
    for i, spec in enumerate(cfg.drops):
        curves.append(_curve_of(spec, cfg.box))
        names.append(f"drop {i}")
    for i, spec in enumerate(cfg.solids):
        curves.append(_curve_of(spec, cfg.box))
        names.append(f"solid {i}")
    t = 2 * np.pi * np.arange(256) / 256
    samples = [c.point(t) for c in curves]
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            d = np.abs(pbox.min_image(samples[i][:, None]
                                      - samples[j][None, :]))
            if np.min(d) <= 1e-9:
                raise ConfigError(
                    f"initial geometry overlap between {names[i]} "
                    f"and {names[j]}")
            if _mutual_inside(samples[i], samples[j], curves[i], curves[j],
                              pbox):
                raise ConfigError(
                    f"initial geometry overlap between {names[i]} "
                    f"and {names[j]}")


def _mutual_inside(sa, sb, ca, cb, pbox):
    from .layerpot import _winding_inside
    for curve, other in ((cb, sa), (ca, sb)):
        if isinstance(curve, SineWall):
            if np.any(curve.contains(other, box=pbox)):
                return True
        else:
            if _winding_inside(
                    curve.point(2 * np.pi * np.arange(128) / 128),
                    other[0], pbox):
                return True
    return False


# ---------------------------------------------------------------------------
# presets

def preset_text(name):
    L = 2 * np.pi
    if name == "constriction":
        return (
            f"box = {L!r} {L!r}\n"
            "ca = 1.0\n"
            "flow = uniform 0.0 -1.0\n"
            f"drop = circle 0.0 2.1 1.0 lam=0.5 clean\n"
            f"solid = circle -1.375 0.0 1.0\n"
            f"solid = circle 1.375 0.0 1.0\n"
            "spacing = 0.05\n"
            "time_tol = 1e-8\n"
            "t_final = 1.0\n"
        )
    if name == "constriction-surfactant":
        return preset_text("constriction").replace(
            "lam=0.5 clean", "lam=0.5 rho=1.0") + "pe = 10.0\nelasticity = 0.2\n"
    if name == "channel":
        return (
            f"box = {L!r} {L!r}\n"
            "ca = 1.0\n"
            f"flow = poiseuille 1.0 {np.pi!r} 1.6\n"
            f"drop = circle {np.pi - 1.2!r} {np.pi!r} 0.5 lam=1.0 clean\n"
            f"solid = circle {np.pi + 1.4!r} {np.pi!r} 0.5\n"
            f"solid = wall {np.pi + 1.9!r} 0.25:1,0.1:2 above\n"
            f"solid = wall {np.pi - 1.9!r} 0.2:1,0.12:3 below\n"
            "spacing = 0.1\n"
            "time_tol = 1e-6\n"
            "t_final = 0.5\n"
        )
    if name == "relaxation":
        return (
            f"box = {L!r} {L!r}\n"
            "ca = 1.0\n"
            "flow = none\n"
            f"drop = ellipse {np.pi!r} {np.pi!r} 1.2 0.8 0.3 lam=1.0 clean\n"
            "spacing = 0.1\n"
            "time_tol = 1e-6\n"
            "t_final = 1.0\n"
        )
    raise ConfigError(f"unknown preset {name!r}")


def build_flow(flow_tuple):
    kind = flow_tuple[0]
    if kind == "none":
        return FlowField("none")
    if kind == "uniform":
        return FlowField("uniform",
                         strength=flow_tuple[1] + 1j * flow_tuple[2])
    if kind == "poiseuille":
        return FlowField("poiseuille", strength=flow_tuple[1],
                         center=flow_tuple[2], half_width=flow_tuple[3])
    if kind == "extensional":
        return FlowField("extensional", strength=flow_tuple[1])
    raise ConfigError(f"unknown flow kind {kind!r}")


# ---------------------------------------------------------------------------
# the velocity oracle binding the solver to the stepper

class VelocitySolver:
    """Per-stage boundary-integral solve shared by run() and diagnostics."""

    def __init__(self, solids, box, params, flow, ca, gmres_tol):
        self.solids = solids
        self.box = box
        self.params = params
        self.flow = flow
        self.ca = ca
        self.gmres_tol = gmres_tol
        self.last_x = None
        self.last_system = None
        self.gmres_iterations = []
        self.shared_cache = {}
        self._history = []  # (t, x) of recent solves for extrapolated guesses

    def _initial_guess(self, t, n):
        usable = [(tt, xx) for tt, xx in self._history if len(xx) == n]
        if not usable:
            return None
        if len(usable) == 1 or usable[-1][0] == usable[-2][0]:
            return usable[-1][1]
        (t2, x2), (t1, x1) = usable[-2], usable[-1]
        w = (t - t1) / (t1 - t2)
        return x1 + w * (x1 - x2)

    def __call__(self, drops, t):
        system = StokesSystem(drops, self.solids, self.box, self.params,
                              shared_cache=self.shared_cache)
        x0 = self._initial_guess(t, system.n_nodes)
        x, stats = system.solve(self.flow, self.ca, tol=self.gmres_tol,
                                max_iter=400, x0=x0)
        if not stats.converged:
            raise RuntimeError(
                f"velocity solve failed to converge at t = {t} "
                f"(residual {stats.final_residual:.3e})")
        self.last_x = x
        self.last_system = system
        self.gmres_iterations.append(stats.iterations)
        self._history.append((t, x))
        if len(self._history) > 3:
            self._history.pop(0)
        u_all, q = system.split(x)
        packets = []
        start = 0
        for d in drops:
            n = d.panels.n_points
            u_uni = to_uniform(d.panels, u_all[start:start + n])
            start += n
            u_n = np.real(u_uni * np.conj(d.grid.normals))
            u_t = np.imag(u_uni * np.conj(d.grid.normals))
            ut_mod = modify_tangential(u_uni, d.grid)
            packets.append(StageVelocity(
                u_tilde=(u_n + 1j * ut_mod) * d.grid.normals,
                u_n=u_n, u_t=u_t, u_t_mod=ut_mod))
        for k, s in enumerate(self.solids):
            nsol = s.panels.n_points
            s.q = q[sum(ss.panels.n_points for ss in self.solids[:k]):][:nsol]
        return packets, 1


def select_run_params(cfg, drops, solids, box):
    """Ewald parameters for a run, scaled by the initial source strengths."""
    from .layerpot import traction
    q_g = q_t = 0.0
    for d in drops:
        f = traction(d, cfg.ca)
        w = d.panels.arc_w
        q_g += float(np.sum((w * np.abs(f)) ** 2))
        q_t += float(np.sum(w ** 2))
    for s in solids:
        w = s.panels.arc_w
        q_g += float(np.sum(w ** 2))
        q_t += float(np.sum(w ** 2))
    return ewald.select_params(cfg.ewald_tol, cfg.r_c, box,
                               Q_G=max(q_g, 1.0), Q_T=max(q_t, 1.0),
                               window_p=int(cfg.window_p))


# ---------------------------------------------------------------------------
# diagnostics and output records

def drop_area(grid):
    return grid.area()


def min_pairwise_distance(drops, solids, box):
    bodies = [d.grid.points for d in drops] + [s.panels.nodes for s in solids]
    best = np.inf
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            d = np.abs(box.min_image(bodies[i][:, None] - bodies[j][None, :]))
            best = min(best, float(np.min(d)))
    return best


@dataclass
class Snapshot:
    time: float
    drops: list
    solids: list
    diagnostics: dict


@dataclass
class SimulationOutput:
    manifest: dict
    snapshots: list
    log: object = None

    def snapshot_times(self):
        return [s.time for s in self.snapshots]


def _fmt(x):
    return repr(float(x))


def write_snapshot(path, snap):
    lines = [f"time = {_fmt(snap.time)}",
             f"n_drops = {len(snap.drops)}",
             f"n_solids = {len(snap.solids)}"]
    for k, d in enumerate(snap.drops):
        n = len(d["x"])
        lines.append(f"drop {k} n={n} lam={_fmt(d['lam'])}")
        has_rho = d.get("rho") is not None
        lines.append("x y rho sigma" if has_rho else "x y")
        for m in range(n):
            if has_rho:
                lines.append(f"{_fmt(d['x'][m])} {_fmt(d['y'][m])} "
                             f"{_fmt(d['rho'][m])} {_fmt(d['sigma'][m])}")
            else:
                lines.append(f"{_fmt(d['x'][m])} {_fmt(d['y'][m])}")
    for k, s in enumerate(snap.solids):
        n = len(s["x"])
        lines.append(f"solid {k} n={n}")
        lines.append("x y q_re q_im")
        for m in range(n):
            lines.append(f"{_fmt(s['x'][m])} {_fmt(s['y'][m])} "
                         f"{_fmt(s['q_re'][m])} {_fmt(s['q_im'][m])}")
    lines.append("diagnostics " + " ".join(
        f"{k}={_fmt(v)}" for k, v in sorted(snap.diagnostics.items())))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    it = iter(lines)
    time = float(next(it).split("=")[1])
    n_drops = int(next(it).split("=")[1])
    n_solids = int(next(it).split("=")[1])
    drops, solids = [], []
    for _ in range(n_drops):
        head = next(it).split()
        n = int(head[2].split("=")[1])
        lam = float(head[3].split("=")[1])
        cols = next(it).split()
        data = np.array([[float(tok) for tok in next(it).split()]
                         for _ in range(n)])
        rec = {"lam": lam, "x": data[:, 0], "y": data[:, 1]}
        if "rho" in cols:
            rec["rho"] = data[:, 2]
            rec["sigma"] = data[:, 3]
        else:
            rec["rho"] = None
        drops.append(rec)
    for _ in range(n_solids):
        head = next(it).split()
        n = int(head[2].split("=")[1])
        next(it)
        data = np.array([[float(tok) for tok in next(it).split()]
                         for _ in range(n)])
        solids.append({"x": data[:, 0], "y": data[:, 1],
                       "q_re": data[:, 2], "q_im": data[:, 3]})
    diag = {}
    for line in it:
        if line.startswith("diagnostics"):
            for tok in line.split()[1:]:
                k, _, v = tok.partition("=")
                diag[k] = float(v)
    return Snapshot(time=time, drops=drops, solids=solids, diagnostics=diag)


def _snapshot_from_state(t, drops, solids, box, extra):
    drecs = []
    for d in drops:
        rec = {"lam": d.lam, "x": d.grid.points.real, "y": d.grid.points.imag,
               "rho": None}
        if d.rho is not None:
            rec["rho"] = d.rho.copy()
            rec["sigma"] = d.sigma.copy()
        drecs.append(rec)
    srecs = [{"x": s.panels.nodes.real, "y": s.panels.nodes.imag,
              "q_re": s.q.real, "q_im": s.q.imag} for s in solids]
    diag = {"min_distance": min_pairwise_distance(drops, solids, box)}
    for k, d in enumerate(drops):
        diag[f"area_{k}"] = drop_area(d.grid)
        if d.rho is not None:
            diag[f"mass_{k}"] = total_mass(d.grid, d.rho)
    diag.update(extra)
    return Snapshot(time=t, drops=drecs, solids=srecs, diagnostics=diag)


# ---------------------------------------------------------------------------
# running

def run(cfg, out_dir=None, progress=None):
    """Execute a configured scenario; returns SimulationOutput and writes
    the manifest, snapshots and diagnostics into the output directory."""
    out_dir = out_dir or os.environ.get("DROPFLOW_OUTDIR") or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    drops, solids, box = build_bodies(cfg)
    params = select_run_params(cfg, drops, solids, box)
    flow = build_flow(cfg.flow)
    gmres_tol = cfg.gmres_tol or 0.1 * cfg.time_tol
    oracle = VelocitySolver(solids, box, params, flow, cfg.ca, gmres_tol)
    control = StepControl(tol=cfg.time_tol, safety=cfg.safety,
                          krasny_level=cfg.krasny_level,
                          target_spacing=cfg.spacing)

    manifest = {"schema": SCHEMA_VERSION, "config": cfg.to_text(),
                "ewald_xi": float(params.xi), "ewald_rc": float(params.r_c),
                "ewald_kmax": float(params.k_max),
                "ewald_grid_m1": int(params.grid_m1),
                "ewald_grid_m2": int(params.grid_m2),
                "ewald_window_p": int(params.window_p)}
    snapshots = []
    snap_files = []

    def take_snapshot(t, dstate, log):
        extra = {"dt": log.dts[-1] if log.dts else 0.0,
                 "accepted": log.accepted, "rejected": log.rejected,
                 "velocity_solves": log.velocity_solves}
        snap = _snapshot_from_state(t, dstate, solids, box, extra)
        snapshots.append(snap)
        fname = os.path.join(out_dir, f"snap_{len(snapshots) - 1:06d}.txt")
        write_snapshot(fname, snap)
        snap_files.append(fname)

    next_snap = [cfg.snapshot_dt]

    def cb(t, dstate, log):
        if progress:
            progress(t, log)
        if t + 1e-12 >= next_snap[0] or abs(t - cfg.t_final) < 1e-12:
            take_snapshot(t, dstate, log)
            while next_snap[0] <= t + 1e-12:
                next_snap[0] += cfg.snapshot_dt

    take_snapshot(0.0, drops, _StepLogStub())
    try:
        final_drops, log = advance(drops, cfg.t_final, control, oracle,
                                   snapshot_cb=cb)
    except (ModelValidityError, RuntimeError):
        _write_manifest(out_dir, manifest, snap_files, failed=True)
        raise
    if not snapshots or abs(snapshots[-1].time - cfg.t_final) > 1e-10:
        take_snapshot(cfg.t_final, final_drops, log)
    manifest["accepted"] = log.accepted
    manifest["rejected"] = log.rejected
    manifest["velocity_solves"] = log.velocity_solves
    manifest["regrids"] = log.regrids
    _write_manifest(out_dir, manifest, snap_files)
    _write_diagnostics(os.path.join(out_dir, "diagnostics.txt"), snapshots)
    return SimulationOutput(manifest=manifest, snapshots=snapshots, log=log)


class _StepLogStub:
    dts = []
    accepted = 0
    rejected = 0
    velocity_solves = 0


def _write_manifest(out_dir, manifest, snap_files, failed=False):
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write(f"schema = {manifest['schema']}\n")
        fh.write(f"failed = {int(failed)}\n")
        for key in sorted(manifest):
            if key in ("schema", "config"):
                continue
            fh.write(f"{key} = {manifest[key]!r}\n")
        fh.write(f"snapshots = {len(snap_files)}\n")
        fh.write("begin config\n")
        fh.write(manifest["config"])
        fh.write("end config\n")


def read_manifest(path):
    out = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if line == "begin config":
            j = lines.index("end config", i)
            out["config"] = "\n".join(lines[i + 1:j]) + "\n"
            i = j + 1
            continue
        key, _, value = line.partition(" = ")
        out[key] = value
        i += 1
    return out


def _write_diagnostics(path, snapshots):
    keys = sorted({k for s in snapshots for k in s.diagnostics})
    with open(path, "w") as fh:
        fh.write("time " + " ".join(keys) + "\n")
        for s in snapshots:
            row = [_fmt(s.time)] + [_fmt(s.diagnostics.get(k, np.nan))
                                    for k in keys]
            fh.write(" ".join(row) + "\n")


# ---------------------------------------------------------------------------
# self-convergence study

def normal_projection_error(coarse_points, ref_grid):
    """Max over coarse nodes of the distance to the reference interface,
    by Newton projection onto its trig interpolant."""
    worst = 0.0
    pts = ref_grid.points
    for tau in coarse_points:
        idx = int(np.argmin(np.abs(pts - tau)))
        t = ref_grid.alphas[idx]
        ok = False
        for _ in range(60):
            f = ref_grid.interp(np.array([t]))[0] - tau
            fp = ref_grid.interp(np.array([t]), deriv=1)[0]
            step = np.real(f * np.conj(fp)) / abs(fp) ** 2
            t -= step
            if abs(step) < 1e-14:
                ok = True
                break
        if not ok:
            raise RuntimeError(f"normal projection failed for node {tau}")
        dist = abs(ref_grid.interp(np.array([t]))[0] - tau)
        worst = max(worst, dist)
    return worst


def surfactant_projection_error(coarse, ref_grid, ref_rho):
    """Max mismatch of the surfactant field against the reference,
    compared at the normal projections of the coarse nodes."""
    coeffs = spectral.trig_coeffs(ref_rho.astype(complex))
    worst = 0.0
    pts = ref_grid.points
    for tau, rho_c in coarse:
        idx = int(np.argmin(np.abs(pts - tau)))
        t = ref_grid.alphas[idx]
        for _ in range(60):
            f = ref_grid.interp(np.array([t]))[0] - tau
            fp = ref_grid.interp(np.array([t]), deriv=1)[0]
            step = np.real(f * np.conj(fp)) / abs(fp) ** 2
            t -= step
            if abs(step) < 1e-14:
                break
        rho_ref = float(np.real(spectral.trig_eval(coeffs, np.array([t]))[0]))
        worst = max(worst, abs(rho_ref - rho_c))
    return worst


def self_convergence(cfg, spacings, ref_spacing, out_dir=None):
    """Error-vs-resolution table against a fine reference run.

    Runs the scenario once per spacing plus once at the reference
    spacing, then measures, at every snapshot time, the maximum
    normal-projection distance of each coarse drop interface to the
    reference one (and the surfactant mismatch when present).
    """
    if min(spacings) <= ref_spacing:
        raise ConfigError("spacings must be coarser than the reference")
    base = out_dir or os.environ.get("DROPFLOW_OUTDIR") or cfg.out_dir
    ref_cfg = _with_spacing(cfg, ref_spacing)
    ref_cfg.params["time_tol"] = min(cfg.time_tol, 1e-9)
    ref_out = run(ref_cfg, out_dir=os.path.join(base, "reference"))
    rows = []
    for ds in spacings:
        out = run(_with_spacing(cfg, ds), out_dir=os.path.join(
            base, f"spacing_{ds:g}"))
        for snap, ref_snap in zip(out.snapshots, ref_out.snapshots):
            if snap.time == 0.0:
                continue
            for k, (d, rd) in enumerate(zip(snap.drops, ref_snap.drops)):
                ref_grid = geometry.UniformGrid(rd["x"] + 1j * rd["y"])
                err = normal_projection_error(d["x"] + 1j * d["y"], ref_grid)
                row = {"spacing": ds, "time": snap.time, "drop": k,
                       "position_error": err}
                if d.get("rho") is not None:
                    coarse = list(zip(d["x"] + 1j * d["y"], d["rho"]))
                    row["surfactant_error"] = surfactant_projection_error(
                        coarse, ref_grid, rd["rho"])
                rows.append(row)
    _write_convergence(os.path.join(base, "convergence.txt"), rows)
    return rows


def _with_spacing(cfg, spacing):
    import copy
    out = copy.deepcopy(cfg)
    out.params["spacing"] = spacing
    return out


def _write_convergence(path, rows):
    keys = ["spacing", "time", "drop", "position_error", "surfactant_error"]
    with open(path, "w") as fh:
        fh.write(" ".join(keys) + "\n")
        for r in rows:
            fh.write(" ".join(_fmt(r.get(k, np.nan)) for k in keys) + "\n")


# ---------------------------------------------------------------------------
# truncation-error harness

def ewald_error_table(xis=(5.0, 10.0, 15.0), n_src=1000, n_tgt=100,
                      box_length=2 * np.pi, seed=31):
    """Measured vs estimated truncation errors for randomly distributed
    point sources, for both kernels and both sum halves."""
    box = ewald.PeriodicBox(box_length, box_length)
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, box_length, n_src) \
        + 1j * rng.uniform(0, box_length, n_src)
    f = rng.normal(size=n_src) + 1j * rng.normal(size=n_src)
    nrm = np.exp(1j * rng.uniform(0, 2 * np.pi, n_src))
    src = ewald.SourceSet(pos, f, nrm)
    targets = rng.uniform(0, box_length, n_tgt) \
        + 1j * rng.uniform(0, box_length, n_tgt)
    q_g = float(np.sum(np.abs(f) ** 2))
    rows = []
    for xi in xis:
        for kind in ("stokeslet", "stresslet"):
            ref = ewald._real_part(
                kind, src, targets,
                ewald.EwaldParams(xi=xi, r_c=box_length / 2 - 1e-9, k_max=1,
                                  grid_m1=4, grid_m2=4), box)
            for r_c in np.linspace(0.15, 1.4, 12):
                part = ewald._real_part(
                    kind, src, targets,
                    ewald.EwaldParams(xi=xi, r_c=r_c, k_max=1,
                                      grid_m1=4, grid_m2=4), box)
                meas = float(np.sqrt(np.mean(np.abs(part - ref) ** 2)))
                est = ewald.estimate_truncation(f"{kind}-real", q_g,
                                                box_length, xi, r_c)
                rows.append({"kind": f"{kind}-real", "xi": xi,
                             "cutoff": r_c, "measured": meas,
                             "estimate": est})
            kref = _k_for(xi, 1e-15)
            full = ewald._fourier_direct(
                kind, src, targets,
                ewald.EwaldParams(xi=xi, r_c=1, k_max=kref,
                                  grid_m1=4, grid_m2=4), box)
            # k_inf >= 2 xi: the closed-form estimates are asymptotic in
            # k_inf/xi and only meaningful once the error is under ~1e-2
            for k_inf in xi * np.array([2.0, 2.5, 3.0, 3.5, 4.0, 4.5,
                                        5.0, 5.5]):
                part = ewald._fourier_direct(
                    kind, src, targets,
                    ewald.EwaldParams(xi=xi, r_c=1, k_max=k_inf,
                                      grid_m1=4, grid_m2=4), box)
                meas = float(np.sqrt(np.mean(np.abs(part - full) ** 2)))
                est = ewald.estimate_truncation(f"{kind}-fourier", q_g,
                                                box_length, xi, k_inf)
                rows.append({"kind": f"{kind}-fourier", "xi": xi,
                             "cutoff": k_inf, "measured": meas,
                             "estimate": est})
    return rows


def _k_for(xi, tol):
    k = xi
    while ewald.estimate_truncation("stresslet-fourier", 1.0, 2 * np.pi, xi,
                                    k) > tol:
        k *= 1.2
    return k


def write_error_table(path, rows):
    with open(path, "w") as fh:
        fh.write("kind xi cutoff measured estimate\n")
        for r in rows:
            fh.write(f"{r['kind']} {_fmt(r['xi'])} {_fmt(r['cutoff'])} "
                     f"{_fmt(r['measured'])} {_fmt(r['estimate'])}\n")
