"""Parsers and re-serialisers for the simulation output files.

This package is a read-only consumer: it never recomputes physics, and
the file formats are the only coupling to the simulation code.  The
serialisers reproduce the writers' formatting (shortest round-trip float
repr), so parse -> serialise is byte-identical for well-formed files.
"""

import numpy as np


class ParseError(ValueError):
    pass


def _fmt(x):
    return repr(float(x))


def parse_snapshot(path):
    """Read one snapshot file into a dict of drops, solids and diagnostics."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    try:
        return _parse_snapshot_lines(lines)
    except (IndexError, StopIteration) as exc:
        raise ParseError(f"{path}: truncated snapshot file") from exc


def _parse_snapshot_lines(lines):
    it = enumerate(iter(lines), start=1)

    def next_line():
        return next(it)

    def field(line, lineno, key):
        name, _, value = line.partition("=")
        if name.strip() != key:
            raise ParseError(f"line {lineno}: expected '{key} = ...'")
        return value.strip()

    lineno, line = next_line()
    time = float(field(line, lineno, "time"))
    lineno, line = next_line()
    n_drops = int(field(line, lineno, "n_drops"))
    lineno, line = next_line()
    n_solids = int(field(line, lineno, "n_solids"))
    drops, solids = [], []
    for _ in range(n_drops):
        lineno, head = next_line()
        toks = head.split()
        if toks[0] != "drop":
            raise ParseError(f"line {lineno}: expected a drop header")
        n = int(toks[2].split("=")[1])
        lam = float(toks[3].split("=")[1])
        lineno, cols = next_line()
        names = cols.split()
        data = []
        for _ in range(n):
            lineno, row = next_line()
            vals = row.split()
            if len(vals) != len(names):
                raise ParseError(
                    f"line {lineno}: expected {len(names)} columns")
            data.append([float(v) for v in vals])
        data = np.array(data)
        rec = {"lam": lam, "columns": names,
               "x": data[:, 0], "y": data[:, 1]}
        if "rho" in names:
            rec["rho"] = data[:, names.index("rho")]
            rec["sigma"] = data[:, names.index("sigma")]
        drops.append(rec)
    for _ in range(n_solids):
        lineno, head = next_line()
        toks = head.split()
        if toks[0] != "solid":
            raise ParseError(f"line {lineno}: expected a solid header")
        n = int(toks[2].split("=")[1])
        next_line()  # column header
        data = []
        for _ in range(n):
            lineno, row = next_line()
            data.append([float(v) for v in row.split()])
        data = np.array(data)
        solids.append({"x": data[:, 0], "y": data[:, 1],
                       "q_re": data[:, 2], "q_im": data[:, 3]})
    diagnostics = {}
    for lineno, line in it:
        if line.startswith("diagnostics"):
            for tok in line.split()[1:]:
                k, _, v = tok.partition("=")
                diagnostics[k] = float(v)
    return {"time": time, "drops": drops, "solids": solids,
            "diagnostics": diagnostics}


def serialize_snapshot(snap):
    """Inverse of parse_snapshot, matching the simulation writer's bytes."""
    lines = [f"time = {_fmt(snap['time'])}",
             f"n_drops = {len(snap['drops'])}",
             f"n_solids = {len(snap['solids'])}"]
    for k, d in enumerate(snap["drops"]):
        n = len(d["x"])
        lines.append(f"drop {k} n={n} lam={_fmt(d['lam'])}")
        has_rho = "rho" in d and d.get("rho") is not None
        lines.append("x y rho sigma" if has_rho else "x y")
        for m in range(n):
            if has_rho:
                lines.append(f"{_fmt(d['x'][m])} {_fmt(d['y'][m])} "
                             f"{_fmt(d['rho'][m])} {_fmt(d['sigma'][m])}")
            else:
                lines.append(f"{_fmt(d['x'][m])} {_fmt(d['y'][m])}")
    for k, s in enumerate(snap["solids"]):
        n = len(s["x"])
        lines.append(f"solid {k} n={n}")
        lines.append("x y q_re q_im")
        for m in range(n):
            lines.append(f"{_fmt(s['x'][m])} {_fmt(s['y'][m])} "
                         f"{_fmt(s['q_re'][m])} {_fmt(s['q_im'][m])}")
    lines.append("diagnostics " + " ".join(
        f"{k}={_fmt(v)}" for k, v in sorted(snap["diagnostics"].items())))
    return "\n".join(lines) + "\n"


def parse_manifest(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    out = {}
    i = 0
    while i < len(lines):
        line = lines[i]
        if line == "begin config":
            try:
                j = lines.index("end config", i)
            except ValueError:
                raise ParseError(f"{path}: unterminated config block")
            out["config"] = "\n".join(lines[i + 1:j]) + "\n"
            i = j + 1
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ParseError(f"{path}: malformed manifest line {i + 1}")
        out[key] = value
        i += 1
    return out


def serialize_manifest(man):
    lines = [f"schema = {man['schema']}", f"failed = {man['failed']}"]
    skip = {"schema", "failed", "config", "snapshots"}
    for key in sorted(man):
        if key in skip:
            continue
        lines.append(f"{key} = {man[key]}")
    lines.append(f"snapshots = {man['snapshots']}")
    lines.append("begin config")
    lines.append(man["config"].rstrip("\n"))
    lines.append("end config")
    return "\n".join(lines) + "\n"


def parse_table(path):
    """Whitespace table with a header line (diagnostics, convergence,
    truncation-error files)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty table")
    names = lines[0].split()
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        toks = line.split()
        if len(toks) != len(names):
            raise ParseError(f"{path}: line {lineno}: expected "
                             f"{len(names)} columns, got {len(toks)}")
        row = {}
        for name, tok in zip(names, toks):
            try:
                row[name] = float(tok)
            except ValueError:
                row[name] = tok
        rows.append(row)
    return names, rows
