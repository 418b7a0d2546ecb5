"""The four figure kinds rendered from simulation output files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import io  # noqa: E402


def plot_snapshots(snapshot_paths, out_path, times=None, box=None):
    """Drop outlines (coloured by surfactant concentration when present)
    and filled solid shapes, one panel per requested time.

    When ``times`` are given, the nearest stored snapshot is drawn and the
    actual time appears in the panel title.
    """
    snaps = [io.parse_snapshot(p) for p in snapshot_paths]
    snaps.sort(key=lambda s: s["time"])
    if times is not None:
        chosen = []
        for t in times:
            best = min(snaps, key=lambda s: abs(s["time"] - t))
            chosen.append(best)
    else:
        chosen = snaps
    n = len(chosen)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 4.2), squeeze=False)
    has_rho = any("rho" in d for s in chosen for d in s["drops"])
    norm = None
    if has_rho:
        lo = min(float(np.min(d["rho"])) for s in chosen for d in s["drops"]
                 if "rho" in d)
        hi = max(float(np.max(d["rho"])) for s in chosen for d in s["drops"]
                 if "rho" in d)
        norm = plt.Normalize(lo, hi if hi > lo else lo + 1e-12)
    mappable = None
    for ax, snap in zip(axes[0], chosen):
        for s in snap["solids"]:
            ax.fill(s["x"], s["y"], color="0.6", zorder=1)
        for d in snap["drops"]:
            x = np.append(d["x"], d["x"][0])
            y = np.append(d["y"], d["y"][0])
            if "rho" in d:
                rho = np.append(d["rho"], d["rho"][0])
                pts = np.array([x, y]).T.reshape(-1, 1, 2)
                segs = np.concatenate([pts[:-1], pts[1:]], axis=1)
                from matplotlib.collections import LineCollection
                lc = LineCollection(segs, cmap="viridis", norm=norm)
                lc.set_array(0.5 * (rho[:-1] + rho[1:]))
                lc.set_linewidth(2.0)
                mappable = ax.add_collection(lc)
            else:
                ax.plot(x, y, "-", color="C0", lw=1.5)
        if box:
            ax.plot([0, box[0], box[0], 0, 0], [0, 0, box[1], box[1], 0],
                    "k--", lw=0.6)
        ax.set_aspect("equal")
        ax.set_title(f"t = {snap['time']:g}")
    if mappable is not None:
        fig.colorbar(mappable, ax=axes[0].tolist(), shrink=0.8,
                     label="surfactant concentration")
    fig.savefig(out_path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_convergence(table_path, out_path):
    """Position (and surfactant) error against inverse grid spacing."""
    names, rows = io.parse_table(table_path)
    if not rows:
        raise io.ParseError(f"{table_path}: no data rows")
    fig, ax = plt.subplots(figsize=(5, 4))
    times = sorted({r["time"] for r in rows})
    for i, t in enumerate(times):
        sel = [r for r in rows if r["time"] == t]
        sel.sort(key=lambda r: r["spacing"], reverse=True)
        inv = [1.0 / r["spacing"] for r in sel]
        ax.loglog(inv, [r["position_error"] for r in sel], "o-",
                  color=f"C{i}", label=f"position, t = {t:g}")
        if any(np.isfinite(r.get("surfactant_error", np.nan)) for r in sel):
            ax.loglog(inv, [r["surfactant_error"] for r in sel], "s--",
                      color=f"C{i}", label=f"surfactant, t = {t:g}")
    ax.set_xlabel(r"1 / $\Delta s$")
    ax.set_ylabel("max-norm error vs reference")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(out_path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return out_path


def plot_truncation(table_path, out_path):
    """Measured truncation errors (solid) against estimates (dashed)."""
    names, rows = io.parse_table(table_path)
    if not rows:
        raise io.ParseError(f"{table_path}: no data rows")
    kinds = ["stokeslet-real", "stresslet-real",
             "stokeslet-fourier", "stresslet-fourier"]
    fig, axes = plt.subplots(2, 2, figsize=(9, 7))
    for ax, kind in zip(axes.ravel(), kinds):
        sub = [r for r in rows if r["kind"] == kind]
        xis = sorted({r["xi"] for r in sub})
        for i, xi in enumerate(xis):
            sel = sorted((r for r in sub if r["xi"] == xi),
                         key=lambda r: r["cutoff"])
            cut = [r["cutoff"] for r in sel]
            ax.semilogy(cut, [max(r["measured"], 1e-17) for r in sel],
                        "-", color="k", lw=1.0 + 0.7 * i,
                        label=f"measured, $\\xi$ = {xi:g}")
            ax.semilogy(cut, [r["estimate"] for r in sel], "--",
                        color=f"C{i}", label=f"estimate, $\\xi$ = {xi:g}")
        ax.set_title(kind)
        ax.set_xlabel("$r_c$" if kind.endswith("real") else "$k_\\infty$")
        ax.set_ylabel("RMS truncation error")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def plot_drift(diagnostics_path, out_path):
    """Relative area and surfactant-mass drift over time."""
    names, rows = io.parse_table(diagnostics_path)
    if not rows:
        raise io.ParseError(f"{diagnostics_path}: no data rows")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    t = np.array([r["time"] for r in rows])
    plotted = False
    for name in names:
        if name.startswith("area_") or name.startswith("mass_"):
            base = rows[0][name]
            drift = np.abs([r[name] - base for r in rows]) / abs(base)
            ax.semilogy(t, np.maximum(drift, 1e-17),
                        "o-" if name.startswith("area") else "s--",
                        label=f"{name} drift")
            plotted = True
    if not plotted:
        raise io.ParseError(f"{diagnostics_path}: no area/mass columns")
    ax.set_xlabel("t")
    ax.set_ylabel("relative drift")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.savefig(out_path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return out_path
