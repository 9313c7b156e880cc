"""Two-parameter stability charts.

A scan classifies the endemic equilibrium on a rectangular lattice of
parameter pairs, refines the stable/unstable boundary between neighbouring
lattice points, and renders the result as CSV or SVG.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .model import ModelParams, ParameterError
from .spectrum import StabilityClass, classify

AXES = ("nu", "tau", "r0", "d", "gamma", "beta")
SCAN_COLLOCATION = 48
RETRY_COLLOCATION = 96
BOUNDARY_TOL = 1e-8
THREADS_ENV = "IMMUNOBOOST_THREADS"

STABLE_CLASSES = (StabilityClass.ENDEMIC_STABLE, StabilityClass.DFE_GLOBALLY_STABLE)

COLORS = {
    StabilityClass.DFE_GLOBALLY_STABLE: "#2e9e44",
    StabilityClass.ENDEMIC_STABLE: "#2e9e44",
    StabilityClass.ENDEMIC_UNSTABLE: "#d62728",
    StabilityClass.MARGINAL: "#f2c14e",
    StabilityClass.ERROR: "#7f7f7f",
}


@dataclass(frozen=True)
class ScanSpec:
    """A rectangular scan in two parameters.

    ``fixed`` supplies the remaining parameters; when ``r0`` is given
    (fixed or as an axis) beta is derived per point as ``r0 * (gamma + d)``.
    """

    axis_x: str
    axis_y: str
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    resolution: tuple[int, int] = (121, 121)
    fixed: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        for axis in (self.axis_x, self.axis_y):
            if axis not in AXES:
                raise ParameterError(f"unknown axis {axis!r}; expected one of {AXES}", axis)
        if self.axis_x == self.axis_y:
            raise ParameterError("axis_x and axis_y must differ", self.axis_y)
        if {self.axis_x, self.axis_y} == {"r0", "beta"}:
            raise ParameterError("r0 and beta cannot both be axes", "beta")
        for key, rng in (("x_range", self.x_range), ("y_range", self.y_range)):
            lo, hi = (float(v) for v in rng)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ParameterError(f"{key} must be finite with lo < hi, got {rng}", key)
        nx, ny = self.resolution
        if int(nx) < 2 or int(ny) < 2:
            raise ParameterError("resolution must be at least 2 per axis", "resolution")
        axes = {self.axis_x, self.axis_y}
        for key in self.fixed:
            if key not in AXES:
                raise ParameterError(f"unknown fixed parameter {key!r}", key)
            if key in axes:
                raise ParameterError(f"{key!r} is both an axis and fixed", key)
        free = axes | set(self.fixed)
        if "r0" in free and "beta" in free:
            raise ParameterError("give either r0 or beta, not both", "beta")
        missing = [k for k in ("gamma", "d", "nu", "tau") if k not in free]
        if "r0" not in free and "beta" not in free:
            missing.append("r0")
        if missing:
            raise ParameterError(f"missing fixed parameter(s) {missing}", missing[0])
        object.__setattr__(self, "x_range", (float(self.x_range[0]), float(self.x_range[1])))
        object.__setattr__(self, "y_range", (float(self.y_range[0]), float(self.y_range[1])))
        object.__setattr__(self, "resolution", (int(nx), int(ny)))
        object.__setattr__(self, "fixed", {k: float(v) for k, v in self.fixed.items()})

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.resolution[0])

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(*self.y_range, self.resolution[1])

    def params_at(self, x: float, y: float) -> ModelParams:
        values = dict(self.fixed)
        values[self.axis_x] = float(x)
        values[self.axis_y] = float(y)
        if "r0" in values:
            r0 = values.pop("r0")
            return ModelParams.from_r0(r0, values["gamma"], values["d"], values["nu"], values["tau"])
        return ModelParams(**values)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "axis_x": self.axis_x,
            "axis_y": self.axis_y,
            "x_range": list(self.x_range),
            "y_range": list(self.y_range),
            "resolution": list(self.resolution),
            "fixed": dict(self.fixed),
        }

    @classmethod
    def from_dict(cls, record: dict) -> "ScanSpec":
        known = {"name", "axis_x", "axis_y", "x_range", "y_range", "resolution", "fixed"}
        for key in record:
            if key not in known:
                raise ParameterError(f"unknown scan key {key!r}", key)
        for key in ("axis_x", "axis_y", "x_range", "y_range"):
            if key not in record:
                raise ParameterError(f"missing scan key {key!r}", key)
        for key in ("x_range", "y_range"):
            rng = record[key]
            if not (isinstance(rng, (list, tuple)) and len(rng) == 2
                    and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in rng)):
                raise ParameterError(f"{key} must be a pair of numbers", key)
        res = record.get("resolution", (121, 121))
        if not (isinstance(res, (list, tuple)) and len(res) == 2 and all(isinstance(v, int) for v in res)):
            raise ParameterError("resolution must be a pair of integers", "resolution")
        fixed = record.get("fixed", {})
        if not isinstance(fixed, dict):
            raise ParameterError("fixed must be an object", "fixed")
        for key, v in fixed.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParameterError(f"fixed.{key} must be a number", key)
        return cls(record["axis_x"], record["axis_y"], tuple(record["x_range"]), tuple(record["y_range"]),
                   tuple(res), dict(fixed), record.get("name", ""))


PRESETS = {
    "fig1a": ScanSpec("nu", "tau", (0.0, 6.0), (0.0, 20.0), fixed={"r0": 15.0, "gamma": 17.0, "d": 0.02},
                      name="fig1a"),
    "fig1b": ScanSpec("nu", "r0", (0.0, 6.0), (1.05, 10.0), fixed={"tau": 15.0, "gamma": 17.0, "d": 0.02},
                      name="fig1b"),
    "fig2a": ScanSpec("nu", "tau", (0.0, 3.0), (0.0, 10.0), fixed={"r0": 15.0, "gamma": 17.0, "d": 0.013},
                      name="fig2a"),
    "fig2b": ScanSpec("nu", "tau", (0.0, 3.0), (0.0, 10.0), fixed={"r0": 15.0, "gamma": 17.0, "d": 0.02},
                      name="fig2b"),
    "fig2c": ScanSpec("nu", "tau", (0.0, 3.0), (0.0, 10.0), fixed={"r0": 15.0, "gamma": 17.0, "d": 0.05},
                      name="fig2c"),
    "fig2d": ScanSpec("nu", "tau", (0.0, 3.0), (0.0, 10.0), fixed={"r0": 15.0, "gamma": 17.0, "d": 0.2},
                      name="fig2d"),
}


def preset(name: str, resolution: tuple[int, int] | None = None) -> ScanSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    spec = PRESETS[name]
    return spec if resolution is None else replace(spec, resolution=tuple(resolution))


@dataclass(frozen=True)
class Cell:
    x: float
    y: float
    cls: StabilityClass
    rightmost_re: float
    rightmost_im: float = 0.0
    I_star: float = 0.0
    unstable_pairs: int = 0
    message: str = ""


@dataclass(frozen=True)
class BoundaryPoint:
    x: float
    y: float
    rightmost: complex
    cells: tuple[tuple[int, int], tuple[int, int]]


@dataclass
class StabilityGrid:
    """Classified lattice; ``cells[j][i]`` sits at ``(xs[i], ys[j])``."""

    spec: ScanSpec
    cells: list[list[Cell]]
    boundaries: list[BoundaryPoint] = field(default_factory=list)
    anomalies: list[dict] = field(default_factory=list)

    def classes(self) -> np.ndarray:
        return np.array([[c.cls.value for c in row] for row in self.cells])

    def counts(self) -> dict[str, int]:
        out = {cls.value: 0 for cls in StabilityClass}
        for row in self.cells:
            for c in row:
                out[c.cls.value] += 1
        return out

    @property
    def unstable_count(self) -> int:
        return self.counts()[StabilityClass.ENDEMIC_UNSTABLE.value]

    def segments(self) -> list[tuple[BoundaryPoint, BoundaryPoint]]:
        """Join boundary points that share a lattice square into line segments."""
        by_edge = {frozenset(p.cells): p for p in self.boundaries}
        nx, ny = self.spec.resolution
        out = []
        for j in range(ny - 1):
            for i in range(nx - 1):
                corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
                pts = []
                for a, b in zip(corners, corners[1:] + corners[:1]):
                    p = by_edge.get(frozenset((a, b)))
                    if p is not None:
                        pts.append(p)
                if len(pts) == 2:
                    out.append((pts[0], pts[1]))
                elif len(pts) == 4:
                    out.append((pts[0], pts[1]))
                    out.append((pts[2], pts[3]))
        return out


def _classify_point(spec: ScanSpec, x: float, y: float, n: int = SCAN_COLLOCATION,
                    retry: int = RETRY_COLLOCATION) -> Cell:
    try:
        params = spec.params_at(x, y)
        c = classify(params, n_collocation=n, retry_collocation=retry, check_convergence=False)
    except Exception as exc:  # recorded per cell, the scan carries on
        return Cell(float(x), float(y), StabilityClass.ERROR, math.nan, message=f"{type(exc).__name__}: {exc}")
    im = 0.0 if c.rightmost is None else abs(c.rightmost.imag)
    return Cell(float(x), float(y), c.cls, float(c.rightmost_re), float(im), float(c.I_star), c.unstable_pairs)


def _classify_row(args) -> list[Cell]:
    spec, j = args
    y = spec.ys[j]
    return [_classify_point(spec, x, y) for x in spec.xs]


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``IMMUNOBOOST_THREADS``, else the CPU count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ParameterError(f"{THREADS_ENV} must be an integer, got {env!r}", THREADS_ENV) from None
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ParameterError("threads must be >= 1", "threads")
    return threads


def _map(func, items, threads: int) -> list:
    if threads == 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def scan(spec: ScanSpec, threads: int | None = None) -> StabilityGrid:
    """Classify every lattice point (rows in parallel, results in fixed slots)."""
    threads = resolve_threads(threads)
    rows = _map(_classify_row, [(spec, j) for j in range(spec.resolution[1])], threads)
    return StabilityGrid(spec, rows)


def _rightmost_re(spec: ScanSpec, x: float, y: float) -> tuple[float, complex]:
    c = classify(spec.params_at(x, y), n_collocation=SCAN_COLLOCATION, retry_collocation=RETRY_COLLOCATION,
                 check_convergence=False)
    if c.cls is StabilityClass.DFE_GLOBALLY_STABLE:
        raise ValueError("boundary segment reaches R0 <= 1")
    return c.rightmost_re, c.rightmost


def _crossings(f, a: float, b: float, fa: float, fb: float, pieces: int):
    """Sub-intervals of ``[a, b]`` with a sign change after splitting into ``pieces``."""
    ts = np.linspace(a, b, pieces + 1)
    vals = [fa] + [f(t) for t in ts[1:-1]] + [fb]
    return [(ts[k], ts[k + 1], vals[k], vals[k + 1]) for k in range(pieces) if vals[k] * vals[k + 1] < 0]


def _refine_pair(args):
    spec, (i0, j0), (i1, j1), tol = args
    x0, y0 = spec.xs[i0], spec.ys[j0]
    x1, y1 = spec.xs[i1], spec.ys[j1]
    cache: dict[float, tuple[float, complex]] = {}

    def at(s: float):
        if s not in cache:
            cache[s] = _rightmost_re(spec, x0 + s * (x1 - x0), y0 + s * (y1 - y0))
        return cache[s]

    def f(s: float) -> float:
        return at(s)[0]

    points, anomaly = [], None
    try:
        f0, f1 = f(0.0), f(1.0)
        brackets = _crossings(f, 0.0, 1.0, f0, f1, 2)
        if len(brackets) != 1:
            # more than one crossing between the two lattice points: subdivide once
            brackets = _crossings(f, 0.0, 1.0, f0, f1, 4)
            if len(brackets) != 1:
                anomaly = {"cells": [[i0, j0], [i1, j1]], "crossings": len(brackets)}
        for a, b, fa, fb in brackets:
            s = brentq(f, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
            re, lam = at(s)
            if abs(re) >= tol:
                anomaly = {"cells": [[i0, j0], [i1, j1]], "residual_re": re}
                continue
            points.append(BoundaryPoint(float(x0 + s * (x1 - x0)), float(y0 + s * (y1 - y0)), complex(lam),
                                        ((i0, j0), (i1, j1))))
    except Exception as exc:
        anomaly = {"cells": [[i0, j0], [i1, j1]], "error": f"{type(exc).__name__}: {exc}"}
    return points, anomaly


def boundary_pairs(grid: StabilityGrid) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Neighbouring lattice points with one endemic-stable and one endemic-unstable class."""
    nx, ny = grid.spec.resolution
    endemic = (StabilityClass.ENDEMIC_STABLE, StabilityClass.ENDEMIC_UNSTABLE)
    out = []
    for j in range(ny):
        for i in range(nx):
            a = grid.cells[j][i].cls
            for di, dj in ((1, 0), (0, 1)):
                i1, j1 = i + di, j + dj
                if i1 >= nx or j1 >= ny:
                    continue
                b = grid.cells[j1][i1].cls
                if a in endemic and b in endemic and a is not b:
                    out.append(((i, j), (i1, j1)))
    return out


def refine_boundary(grid: StabilityGrid, tol: float = BOUNDARY_TOL, threads: int | None = None) -> StabilityGrid:
    """Locate ``Re(rightmost) = 0`` between each stable/unstable neighbour pair.

    Returns a new grid carrying the boundary points; pairs whose segment
    still shows several crossings after one subdivision are listed in
    ``anomalies`` (their located crossings are kept).
    """
    threads = resolve_threads(threads)
    jobs = [(grid.spec, a, b, tol) for a, b in boundary_pairs(grid)]
    results = _map(_refine_pair, jobs, threads)
    points, anomalies = [], []
    for pts, anomaly in results:
        points.extend(pts)
        if anomaly is not None:
            anomalies.append(anomaly)
    return StabilityGrid(grid.spec, grid.cells, points, anomalies)


CSV_COLUMNS = ("x", "y", "class", "rightmost_re", "I_star")


def to_csv(grid: StabilityGrid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in grid.cells:
        for c in row:
            w.writerow((repr(c.x), repr(c.y), c.cls.value, repr(c.rightmost_re), repr(c.I_star)))
    return buf.getvalue()


def parse_csv(text: str) -> list[Cell]:
    """Inverse of :func:`to_csv` for the columns it writes."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    cells = []
    for rec in reader:
        x, y, cls, re, I = rec
        cells.append(Cell(float(x), float(y), StabilityClass(cls), float(re), I_star=float(I)))
    return cells


def to_svg(grid: StabilityGrid, width: int = 600, height: int = 600) -> str:
    """Heatmap (green stable, red unstable) with refined boundary segments."""
    spec = grid.spec
    nx, ny = spec.resolution
    margin = 60
    (x_lo, x_hi), (y_lo, y_hi) = spec.x_range, spec.y_range
    cw, ch = width / nx, height / ny

    def px(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - cw) + cw / 2

    def py(y):
        return margin + height - ((y - y_lo) / (y_hi - y_lo) * (height - ch) + ch / 2)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + 2 * margin}" '
        f'height="{height + 2 * margin}" viewBox="0 0 {width + 2 * margin} {height + 2 * margin}">',
        f'<rect x="0" y="0" width="{width + 2 * margin}" height="{height + 2 * margin}" fill="white"/>',
    ]
    for j, row in enumerate(grid.cells):
        for i, c in enumerate(row):
            out.append(f'<rect x="{margin + i * cw:.3f}" y="{margin + height - (j + 1) * ch:.3f}" '
                       f'width="{cw:.3f}" height="{ch:.3f}" fill="{COLORS[c.cls]}" stroke="none"/>')
    for p, q in grid.segments():
        out.append(f'<line x1="{px(p.x):.3f}" y1="{py(p.y):.3f}" x2="{px(q.x):.3f}" y2="{py(q.y):.3f}" '
                   'stroke="black" stroke-width="1.2"/>')
    for p in grid.boundaries:
        out.append(f'<circle cx="{px(p.x):.3f}" cy="{py(p.y):.3f}" r="1.2" fill="black"/>')
    out.append(f'<rect x="{margin}" y="{margin}" width="{width}" height="{height}" fill="none" stroke="black"/>')
    label = 'font-family="sans-serif" font-size="14"'
    out.append(f'<text x="{margin + width / 2}" y="{margin + height + 40}" text-anchor="middle" {label}>'
               f'{spec.axis_x}</text>')
    out.append(f'<text x="20" y="{margin + height / 2}" text-anchor="middle" {label} '
               f'transform="rotate(-90 20 {margin + height / 2})">{spec.axis_y}</text>')
    for value, anchor_x, anchor_y, kw in (
        (x_lo, margin, margin + height + 18, 'text-anchor="start"'),
        (x_hi, margin + width, margin + height + 18, 'text-anchor="end"'),
    ):
        out.append(f'<text x="{anchor_x}" y="{anchor_y}" {kw} {label}>{value:g}</text>')
    out.append(f'<text x="{margin - 6}" y="{margin + height}" text-anchor="end" {label}>{y_lo:g}</text>')
    out.append(f'<text x="{margin - 6}" y="{margin + 12}" text-anchor="end" {label}>{y_hi:g}</text>')
    if spec.name:
        out.append(f'<text x="{margin + width / 2}" y="{margin - 20}" text-anchor="middle" {label}>'
                   f'{spec.name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary(grid: StabilityGrid) -> dict:
    return {
        "spec": grid.spec.to_dict(),
        "counts": grid.counts(),
        "boundary": [{"x": p.x, "y": p.y, "re": p.rightmost.real, "im": p.rightmost.imag} for p in grid.boundaries],
        "anomalies": grid.anomalies,
        "errors": [{"x": c.x, "y": c.y, "message": c.message}
                   for row in grid.cells for c in row if c.cls is StabilityClass.ERROR],
    }


def render(grid: StabilityGrid, fmt: str = "csv") -> str:
    """Serialize a grid as ``csv`` or ``svg``."""
    if fmt == "csv":
        return to_csv(grid)
    if fmt == "svg":
        return to_svg(grid)
    raise ValueError(f"unknown format {fmt!r}; expected 'csv' or 'svg'")
