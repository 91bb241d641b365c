"""Text formats: XYZ input, report CSVs, surface grids and mesh dumps.

Mesh dump (``mesh.txt``)::

    # thbfit mesh r=2 M=<levels>
    # cell <level> <i_1> .. <i_r> <lo_1> .. <lo_r> <hi_1> .. <hi_r>
    # func <level> <j_1> .. <j_r> <lambda>
    cell 0 3 4 -0.6 -0.466 -0.466 -0.333
    ...
    func 1 7 9 0.25

Coefficient dump (``coeffs.txt``): ``<level> <j_1> .. <j_r> <lambda>`` per
line after a ``#`` header. Floats are written with 17 significant digits.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .localfit import ScatteredDataset

DEDUP_MODES = ("error", "keep-first", "average")


class XYZFormatError(ValueError):
    pass


def parse_xyz(lines, source: str = "<input>", dedup: str = "error") -> ScatteredDataset:
    """Dataset from ``x y z`` text lines; ``#`` lines and blank lines skipped."""
    if dedup not in DEDUP_MODES:
        raise ValueError(f"dedup mode must be one of {DEDUP_MODES}")
    rows, linenos = [], []
    for n, line in enumerate(lines, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 3:
            raise XYZFormatError(f"{source}:{n}: expected 3 fields, got {len(parts)}")
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise XYZFormatError(f"{source}:{n}: cannot parse {s!r}") from None
        if not all(np.isfinite(row)):
            raise XYZFormatError(f"{source}:{n}: non-finite value")
        rows.append(row)
        linenos.append(n)
    if not rows:
        raise XYZFormatError(f"{source}: no data points")
    data = np.array(rows)
    linenos = np.array(linenos)
    X, f = data[:, :2], data[:, 2]
    uniq, first, inverse, counts = np.unique(
        X, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    inverse = inverse.ravel()
    if uniq.shape[0] == X.shape[0]:
        return ScatteredDataset(X, f, check_distinct=False)
    if dedup == "error":
        g = int(np.flatnonzero(counts > 1)[0])
        dup = linenos[inverse == g]
        raise XYZFormatError(
            f"{source}:{dup[1]}: location repeats line {dup[0]} ({X[inverse == g][0].tolist()})"
        )
    order = np.sort(first)  # groups in order of first appearance
    group_of = inverse[order]
    if dedup == "keep-first":
        return ScatteredDataset(X[order], f[order], check_distinct=False)
    sums = np.bincount(inverse, weights=f)
    return ScatteredDataset(X[order], sums[group_of] / counts[group_of], check_distinct=False)


def load_xyz(path, dedup: str = "error") -> ScatteredDataset:
    path = Path(path)
    with path.open() as fh:
        return parse_xyz(fh, source=str(path), dedup=dedup)


def write_xyz(path, F: ScatteredDataset) -> None:
    np.savetxt(path, np.column_stack([F.points, F.values]), fmt="%.17g")


def fmt_sci(v: float) -> str:
    return f"{v:.3e}"


def export_reports(reports, outdir) -> tuple:
    """Write ``reports.csv`` and ``degrees.csv``; returns both paths."""
    if not reports:
        raise ValueError("no iteration reports to export")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rpath = outdir / "reports.csv"
    dpath = outdir / "degrees.csv"
    with rpath.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "elements", "NDOF", "e_max", "e_RMS"])
        for r in reports:
            w.writerow([r.M, r.elements_str, r.ndof, fmt_sci(r.e_max), fmt_sci(r.e_rms)])
    width = max(len(r.degree_counts) for r in reports)
    with dpath.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "NDOF"] + [f"deg{d}_pct" for d in range(width)])
        for r in reports:
            counts = np.zeros(width)
            counts[: len(r.degree_counts)] = r.degree_counts
            pct = 100.0 * counts / max(counts.sum(), 1)
            w.writerow([r.M, r.ndof] + [f"{p:.6f}" for p in pct])
    return rpath, dpath


def surface_grid(lo, hi, resolution):
    nx, ny = resolution
    if nx < 2 or ny < 2:
        raise ValueError("surface resolution must be at least 2 per direction")
    xs = np.linspace(lo[0], hi[0], nx)
    ys = np.linspace(lo[1], hi[1], ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def sample_surface(q, dom, resolution, path=None) -> np.ndarray:
    """``(n, 3)`` rows ``x y z`` on a regular grid over the base rectangle,
    with ``nan`` outside the trimmed domain."""
    base = q.hierarchy.space(0)
    lo, hi = (base.lo, base.hi) if dom is None else (dom.base.lo, dom.base.hi)
    pts = surface_grid(lo, hi, resolution)
    z = np.full(pts.shape[0], np.nan)
    inside = base.contains(pts) if dom is None else dom.contains(pts) & base.contains(pts)
    if inside.any():
        z[inside] = q(pts[inside])
    out = np.column_stack([pts, z])
    if path is not None:
        np.savetxt(path, out, fmt="%.17g", header="x y z (nan outside the domain)")
    return out


def dump_mesh(q, path) -> None:
    h = q.hierarchy
    with Path(path).open("w") as fh:
        fh.write(f"# thbfit mesh r={h.r} M={h.M}\n")
        fh.write("# cell <level> <i_1..i_r> <lo_1..lo_r> <hi_1..hi_r>\n")
        fh.write("# func <level> <j_1..j_r> <lambda>\n")
        for l in range(h.M):
            cells = h.active_cells(l)
            if cells.size == 0:
                continue
            multi = np.stack(h.space(l).unravel_cells(cells), axis=1)
            lo, hi = h.cell_bounds(l, cells)
            for m, a, b in zip(multi, lo, hi):
                fields = [str(l)] + [str(int(v)) for v in m]
                fields += [f"{v:.17g}" for v in a] + [f"{v:.17g}" for v in b]
                fh.write("cell " + " ".join(fields) + "\n")
        for l, J, lam in q.items():
            fh.write(f"func {l} " + " ".join(str(j) for j in J) + f" {lam:.17g}\n")


def dump_coeffs(q, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("# level " + " ".join(f"j{k + 1}" for k in range(q.hierarchy.r)) + " lambda\n")
        for l, J, lam in q.items():
            fh.write(f"{l} " + " ".join(str(j) for j in J) + f" {lam:.17g}\n")


def read_coeffs(path):
    """``{(level, J): lambda}`` from a coefficient dump."""
    out = {}
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split()
            out[(int(parts[0]), tuple(int(p) for p in parts[1:-1]))] = float(parts[-1])
    return out


def read_breaks(path):
    """Per-direction breakpoints, one whitespace-separated line per direction."""
    out = []
    with Path(path).open() as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                out.append(np.array([float(v) for v in s.split()]))
    return out
