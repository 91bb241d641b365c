"""Command-line front end.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Keys match the long flag names with dashes or underscores (``max-levels`` or
``max_levels``). Flags given on the command line override the file.

Exit codes: 0 converged, 2 a coefficient found no data, 3 tolerance not met
within the level budget, 1 usage or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adaptive, io
from .adaptive import FitConfig, fit_adaptive
from .datasets import graded_breaks, peak_samples
from .domain import Box, DomainSpec
from .localfit import GuardConfig, ScatteredDataset
from .splinecore import TensorSpace, poly_dim

log = logging.getLogger("thbfit")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_LAMBDA = 2
EXIT_LEVELS = 3

STATUS_EXIT = {
    adaptive.CONVERGED: EXIT_OK,
    adaptive.FAILURE_INITIAL_LAMBDA: EXIT_LAMBDA,
    adaptive.FAILURE_LAMBDA: EXIT_LAMBDA,
    adaptive.FAILURE_MAX_LEVELS: EXIT_LEVELS,
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    input: str = ""
    degree: str = "2"
    tol: float | None = None
    sigma: float = 1e-6
    max_levels: int = 8
    initial_mesh: str = ""
    domain: str = ""
    guard: str = "off"
    clean: str = "off"
    clean_max_levels: int = 6
    clean_tol: float | None = None
    out: str = "thbfit-out"
    workers: int = 1
    resolution: str = "200x200"
    dedup: str = "error"

    KEYS = (
        "input", "degree", "tol", "sigma", "max_levels", "initial_mesh", "domain", "guard",
        "clean", "clean_max_levels", "clean_tol", "out", "workers", "resolution", "dedup",
    )

    def update(self, pairs: dict):
        for key, raw in pairs.items():
            key = key.replace("-", "_")
            if key not in self.KEYS:
                raise UsageError(f"unknown config key {key!r}")
            current = RunConfig.__dataclass_fields__[key]
            kind = current.type
            try:
                if "float" in str(kind):
                    val = float(raw)
                elif "int" in str(kind):
                    val = int(raw)
                else:
                    val = str(raw)
            except ValueError:
                raise UsageError(f"bad value for {key}: {raw!r}") from None
            setattr(self, key, val)
        return self

    def dumps(self) -> str:
        lines = []
        for k in self.KEYS:
            v = getattr(self, k)
            if v is not None and v != "":
                lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def read_config(path) -> dict:
    out = {}
    with Path(path).open() as fh:
        for n, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise UsageError(f"{path}:{n}: expected key = value")
            k, v = s.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def parse_degrees(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad degree {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 0:
        raise UsageError(f"bad degree {text!r}")
    return vals


def parse_pair(text: str, what: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad {what} {text!r}, expected NxM") from None
    if len(vals) != 2:
        raise UsageError(f"bad {what} {text!r}, expected NxM")
    return vals


def _floats(text: str, n: int, what: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad {what} {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what} needs {n} numbers")
    return vals


def parse_domain(text: str, data_lo, data_hi) -> DomainSpec:
    """``rect:x0,y0,x1,y1; cut:x0,y0,x1,y1; ...``; the rectangle defaults to
    the data bounding box."""
    base = Box(tuple(data_lo), tuple(data_hi))
    cuts = []
    for item in [s.strip() for s in (text or "").split(";") if s.strip()]:
        kind, _, args = item.partition(":")
        vals = _floats(args, 4, kind.strip())
        try:
            box = Box(vals[:2], vals[2:])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if kind.strip() == "rect":
            base = box
        elif kind.strip() == "cut":
            cuts.append(box)
        else:
            raise UsageError(f"unknown domain item {kind!r}")
    try:
        return DomainSpec(base, tuple(cuts))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def parse_guard(text: str) -> GuardConfig | None:
    t = str(text).strip().lower()
    if t in ("", "off", "no", "false", "0"):
        return None
    if t in ("on", "yes", "true"):
        return GuardConfig()
    try:
        tau = float(t)
    except ValueError:
        raise UsageError(f"bad guard {text!r}, expected off, on or a tau value") from None
    if tau < 0:
        raise UsageError("guard tau must be non-negative")
    return GuardConfig(tau)


def default_cells(n: int, degrees, lo, hi) -> tuple:
    """Uniform cell counts with at least dim(P_d) points per cell on average."""
    d = min(degrees)
    per_cell = poly_dim(2, d)
    budget = max(n / per_cell, 1.0)
    w, h = float(hi[0] - lo[0]), float(hi[1] - lo[1])
    nx = max(int(math.floor(math.sqrt(budget * w / h))), 1)
    ny = max(int(math.floor(budget / nx)), 1)
    while nx * ny > budget and max(nx, ny) > 1:
        if nx >= ny:
            nx -= 1
        else:
            ny -= 1
    return max(nx, degrees[0] + 1), max(ny, degrees[1] + 1)


def build_initial(cfg: RunConfig, degrees, dom: DomainSpec, n: int) -> TensorSpace:
    lo, hi = dom.base.lo, dom.base.hi
    mesh = cfg.initial_mesh.strip()
    if not mesh:
        cells = default_cells(n, degrees, lo, hi)
        return TensorSpace.uniform(lo, hi, cells, degrees)
    if Path(mesh).is_file():
        breaks = io.read_breaks(mesh)
        if len(breaks) != 2:
            raise UsageError(f"{mesh}: expected two lines of breakpoints")
        for k, b in enumerate(breaks):
            if b[0] > lo[k] or b[-1] < hi[k]:
                raise UsageError(f"{mesh}: breakpoints do not cover the domain")
        try:
            return TensorSpace.from_breaks(breaks, degrees)
        except ValueError as exc:
            raise UsageError(f"{mesh}: {exc}") from None
    cells = parse_pair(mesh, "initial mesh")
    return TensorSpace.uniform(lo, hi, cells, degrees)


ROUNDOFF = 1e-12


def clean_outliers(F: ScatteredDataset, cfg: FitConfig):
    """Drop the points whose pre-pass residual exceeds the pre-pass e_RMS.

    A pre-pass that stops at the level limit still yields its last
    quasi-interpolant, which is used. Returns ``(dataset, removed, outcome)``.
    """
    pre = fit_adaptive(F, cfg)
    if pre.qi is None:
        raise RuntimeError(f"outlier pre-pass failed: {pre.status} ({pre.message})")
    e, _, e_rms = adaptive.compute_errors(pre.qi, F)
    # residuals at roundoff level count as exact reproduction
    floor = ROUNDOFF * float(np.max(np.abs(F.values)))
    keep = e <= max(e_rms, floor)
    removed = int((~keep).sum())
    if removed == 0:
        return F, 0, pre
    return F.subset(keep), removed, pre


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def run_fit(cfg: RunConfig) -> int:
    if not cfg.input:
        raise UsageError("no input file")
    if cfg.tol is None or not cfg.tol > 0:
        raise UsageError("a positive --tol is required")
    degrees = parse_degrees(cfg.degree)
    resolution = parse_pair(cfg.resolution, "resolution")
    if min(resolution) < 2:
        raise UsageError("resolution must be at least 2x2")
    guard = parse_guard(cfg.guard)
    try:
        F = io.load_xyz(cfg.input, dedup=cfg.dedup)
    except io.XYZFormatError as exc:
        raise UsageError(str(exc)) from None
    lo, hi = F.points.min(axis=0), F.points.max(axis=0)
    if np.any(hi <= lo):
        raise UsageError("data bounding box is degenerate")
    dom = parse_domain(cfg.domain, lo, hi)
    if not np.all(dom.contains(F.points)):
        raise UsageError("some data points lie outside the domain")
    space = build_initial(cfg, degrees, dom, F.n)
    # trimming only matters when the domain is smaller than the grid
    shrunk = np.any(np.array(dom.base.lo) > space.lo) or np.any(np.array(dom.base.hi) < space.hi)
    trimmed = dom if dom.cuts or shrunk else None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    fit_cfg = FitConfig(
        space, cfg.tol, cfg.sigma, cfg.max_levels, guard, trimmed, workers=cfg.workers
    )
    log.info("%d points, initial mesh %dx%d, degree %s", F.n, *space.cell_shape, degrees)
    if cfg.clean.strip().lower() in ("on", "yes", "true", "1"):
        pre_cfg = FitConfig(
            space, cfg.clean_tol or cfg.tol, cfg.sigma, cfg.clean_max_levels, guard, trimmed,
            workers=cfg.workers,
        )
        try:
            F, removed, _ = clean_outliers(F, pre_cfg)
        except RuntimeError as exc:
            log.error("%s", exc)
            return EXIT_LAMBDA
        log.info("outlier cleaning removed %d points, %d left", removed, F.n)
        io.write_xyz(out / "cleaned.xyz", F)

    def show(rep):
        log.info("M=%d elements=%s NDOF=%d e_max=%s e_RMS=%s", rep.M, rep.elements_str,
                 rep.ndof, io.fmt_sci(rep.e_max), io.fmt_sci(rep.e_rms))

    outcome = fit_adaptive(F, fit_cfg, on_report=show)
    if outcome.reports:
        io.export_reports(outcome.reports, out)
    if outcome.qi is not None:
        io.sample_surface(outcome.qi, dom, resolution, out / "surface.xyz")
        io.dump_mesh(outcome.qi, out / "mesh.txt")
        io.dump_coeffs(outcome.qi, out / "coeffs.txt")
    code = STATUS_EXIT[outcome.status]
    if code:
        log.error("%s: %s", outcome.status, outcome.message)
    else:
        log.info("converged with %d levels and NDOF %d", outcome.qi.hierarchy.M, outcome.qi.ndof)
    return code


def run_synth(args) -> int:
    X, f = peak_samples(args.n, args.seed)
    io.write_xyz(args.output, ScatteredDataset(X, f))
    if args.graded_mesh:
        bx = graded_breaks(-1.0, 1.0, args.cells, 0.3, 0.25, 6.0)
        by = graded_breaks(-1.0, 1.0, args.cells, -0.3, 0.25, 6.0)
        np.savetxt(args.graded_mesh, np.vstack([bx, by]), fmt="%.17g")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="thbfit", description="Adaptive THB-spline fitting of scattered data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit an x y z point file")
    f.add_argument("input", nargs="?", help="x y z point file")
    f.add_argument("--config", help="key = value config file")
    f.add_argument("--degree", help="spline degree, e.g. 2 or 2,3")
    f.add_argument("--tol", type=float, help="tolerance on the maximum residual")
    f.add_argument("--sigma", type=float, help="singular value threshold in (0, 1]")
    f.add_argument("--max-levels", type=int, dest="max_levels")
    f.add_argument("--initial-mesh", dest="initial_mesh",
                   help="NxM uniform cells or a file with one breakpoint line per direction")
    f.add_argument("--domain", help="rect:x0,y0,x1,y1; cut:x0,y0,x1,y1; ...")
    f.add_argument("--guard", help="off, on, or the guard tau")
    f.add_argument("--clean", help="on/off: drop points above the pre-pass RMS residual")
    f.add_argument("--clean-max-levels", type=int, dest="clean_max_levels")
    f.add_argument("--clean-tol", type=float, dest="clean_tol")
    f.add_argument("--out", help="output directory")
    f.add_argument("--workers", type=int)
    f.add_argument("--resolution", help="surface grid NxM")
    f.add_argument("--dedup", choices=io.DEDUP_MODES)

    s = sub.add_parser("synth", help="write peak-function sample data")
    s.add_argument("output")
    s.add_argument("--n", type=int, default=16000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--graded-mesh", dest="graded_mesh",
                   help="also write a graded breakpoint file concentrated at the peak")
    s.add_argument("--cells", type=int, default=15)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            return run_synth(args)
        cfg = RunConfig()
        if args.config:
            cfg.update(read_config(args.config))
        flags = {k: v for k, v in vars(args).items()
                 if k in RunConfig.KEYS and v is not None}
        cfg.update(flags)
        if cfg.workers < 1:
            raise UsageError("workers must be at least 1")
        return run_fit(cfg)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
