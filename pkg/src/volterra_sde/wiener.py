"""Wiener integration of step functions against a Volterra process.

The pairing i(f) = sum_j f_j (b_{t_j} - b_{t_{j-1}}) is an isometry once f
is pushed through the kernel transform

    (K* f)(r) = int_r^inf f(u) dK/du(u, r) du,

namely E i(f)^2 = int ||(K* f)(r)||^2 dr.  Both sides are computed here
independently: the left by Monte Carlo over exactly sampled paths, the
right by quadrature (closed-form antiderivatives for the built-in power
kernels, graded panels for the outer r-integral).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch
from .kernels import VolterraKernel
from .quadrature import panel_nodes, graded_unit_edges, geometric_edges
from .sampling import PathGrid, ProcessPaths, sample_paths


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant integrand: value row j on [t_{j-1}, t_j)."""
    breakpoints: np.ndarray  # (n + 1,), strictly increasing
    values: np.ndarray       # (n, dim)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, float)
        vals = np.atleast_2d(np.asarray(self.values, float))
        if vals.shape[0] != len(bp) - 1 or len(bp) < 2:
            raise ValueError("values must have one row per interval")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _power_antideriv(kernel: VolterraKernel, r, lo, hi):
    """int_lo^hi c (u - r)^(alpha-1) du = (c/alpha)((hi-r)^a - (lo-r)^a).

    Inputs broadcast; intervals with hi <= lo contribute zero, and the
    whole transform vanishes for r below the kernel's support edge.
    """
    al = kernel.alpha
    c = kernel.regularity_constant
    glo = np.maximum(np.maximum(lo, r) - r, 0.0)
    ghi = np.maximum(hi - r, 0.0)
    out = (c / al) * (ghi ** al - glo ** al)
    out = np.where(ghi > glo, out, 0.0)
    if kernel.support_lower > -np.inf:
        out = np.where(r >= kernel.support_lower, out, 0.0)
    return out


def _kstar_batch(kernel: VolterraKernel, f: StepFunction,
                 r: np.ndarray) -> np.ndarray:
    """(K* f)(r) for an array of r values, shape (len(r), dim)."""
    r = np.asarray(r, float)
    bp = f.breakpoints
    if kernel.kind in ("fbm_mvn", "liouville"):
        pieces = _power_antideriv(kernel, r[:, None], bp[None, :-1],
                                  bp[None, 1:])
        return pieces @ f.values
    # generic kernel: per-interval quadrature in the gap variable g = u - r,
    # graded toward g = 0 where the derivative blows up
    out = np.zeros((len(r), f.dim))
    g_unit = graded_unit_edges(16)
    for j in range(len(bp) - 1):
        lo = np.maximum(bp[j], r)
        hi = np.full_like(r, bp[j + 1])
        width = np.maximum(hi - lo, 0.0)
        edges = (lo - r)[:, None] + width[:, None] * g_unit[None, :]
        gn, gw = panel_nodes(edges, 16)
        gn2 = gn.reshape(len(r), -1)
        gw2 = gw.reshape(len(r), -1)
        vals = kernel.deriv_gap(r[:, None] + gn2, gn2)
        if kernel.support_lower > -np.inf:
            vals = np.where(r[:, None] >= kernel.support_lower, vals, 0.0)
        integral = np.sum(np.where(width[:, None] > 0, vals * gw2, 0.0),
                          axis=1)
        out += integral[:, None] * f.values[j][None, :]
    return out


def kstar_transform(kernel: VolterraKernel, f: StepFunction,
                    r: float) -> np.ndarray:
    """(K* f)(r) as a dim-vector; zero for r past the last breakpoint."""
    if r >= f.breakpoints[-1]:
        return np.zeros(f.dim)
    return _kstar_batch(kernel, f, np.array([r]))[0]


def _tail_coefficient(kernel: VolterraKernel, f: StepFunction) -> float:
    """Bound constant: |(K* f)(r)| <= cf (t_min - r)^(alpha-1) far left."""
    return kernel.regularity_constant * float(
        np.sum(np.linalg.norm(f.values, axis=1) * np.diff(f.breakpoints)))


def _outer_mesh(kernel: VolterraKernel, breakpoints: np.ndarray, cf: float,
                rtol_tail: float = 1e-12) -> np.ndarray:
    """r-mesh for int ||K* f||^2 dr: graded into every breakpoint from
    below (the transform has (t_j - r)^alpha cusps there) plus a geometric
    tail to the left when the kernel support is unbounded.  ``cf`` is the
    far-field coefficient of the transform, used only to size the tail."""
    bp = list(breakpoints)
    lower = kernel.support_lower
    al = kernel.alpha
    if lower > -np.inf:
        start = lower
        if start >= bp[-1]:
            return np.array([bp[-1] - 1.0, bp[-1]])
        bp = [start] + [b for b in bp if b > start]
    else:
        # tail bound: integrand ~ cf^2 (t_min - r)^(2a-2); pick T with
        # cf^2 T^(2a-1)/(1-2a) <= rtol_tail * scale
        span = bp[-1] - bp[0]
        scale = max(cf * cf * span ** (2 * al), 1e-300)
        T = (cf * cf / ((1 - 2 * al) * rtol_tail * scale)) ** (1 / (1 - 2 * al))
        T = max(T, 4 * span)
        d = geometric_edges(min(span / 16, T / 16), T)
        bp = list(bp[0] - d[::-1]) + bp
    segs = []
    g = graded_unit_edges(16)
    for a, b in zip(bp[:-1], bp[1:]):
        segs.append(b - (b - a) * g[::-1])
    edges = np.unique(np.concatenate(segs))
    return edges


def kstar_norm_sq(kernel: VolterraKernel, f: StepFunction,
                  order: int = 16) -> float:
    """Quadrature of int_R ||(K* f)(r)||^2 dr."""
    edges = _outer_mesh(kernel, f.breakpoints, _tail_coefficient(kernel, f))
    rn, rw = panel_nodes(edges, order)
    r = rn.reshape(-1)
    w = rw.reshape(-1)
    vals = _kstar_batch(kernel, f, r)
    return float(np.sum(np.sum(vals * vals, axis=1) * w))


def kstar_inner(kernel: VolterraKernel, f: StepFunction, g: StepFunction,
                order: int = 16) -> float:
    """Quadrature of <K* f, K* g> over r, on the union breakpoint mesh."""
    bp = np.unique(np.concatenate([f.breakpoints, g.breakpoints]))
    cf = max(_tail_coefficient(kernel, f), _tail_coefficient(kernel, g))
    edges = _outer_mesh(kernel, bp, cf)
    rn, rw = panel_nodes(edges, order)
    r = rn.reshape(-1)
    w = rw.reshape(-1)
    vf = _kstar_batch(kernel, f, r)
    vg = _kstar_batch(kernel, g, r)
    return float(np.sum(np.sum(vf * vg, axis=1) * w))


# ---------------------------------------------------------------------------
# pathwise integral

def _grid_indices(f: StepFunction, grid: PathGrid) -> np.ndarray:
    idx = (f.breakpoints - grid.t0) / grid.dt
    k = np.rint(idx)
    if (np.any(np.abs(idx - k) > 1e-9) or np.any(k < 0)
            or np.any(k > grid.n_steps)):
        raise GridMismatch(
            f"breakpoints {f.breakpoints} do not lie on grid "
            f"(t0={grid.t0}, dt={grid.dt}, n={grid.n_steps})")
    return k.astype(int)


def wiener_integral(f: StepFunction, paths: ProcessPaths) -> np.ndarray:
    """i(f) per path: sum_j <f_j, b_{t_j} - b_{t_{j-1}}>.  Exact arithmetic
    on stored increments."""
    if f.dim != paths.dim:
        raise GridMismatch(
            f"integrand dim {f.dim} != paths dim {paths.dim}")
    k = _grid_indices(f, paths.grid)
    out = np.zeros(paths.n_paths)
    for j in range(len(k) - 1):
        inc = paths.values[:, :, k[j + 1]] - paths.values[:, :, k[j]]
        out += inc @ f.values[j]
    return out


@dataclass(frozen=True)
class IsometryReport:
    lhs_mc: float
    rhs_quad: float
    stderr: float
    z: float
    passed: bool

    def to_text(self) -> str:
        return "\n".join([
            f"lhs_mc={self.lhs_mc:.9g}",
            f"rhs_quad={self.rhs_quad:.9g}",
            f"stderr={self.stderr:.4g}",
            f"z={self.z:.4g}",
            f"pass={'true' if self.passed else 'false'}",
        ])


def grid_for(f: StepFunction) -> PathGrid:
    """Smallest uniform grid whose points contain all breakpoints."""
    bp = f.breakpoints
    dt = float(np.min(np.diff(bp)))
    offs = (bp - bp[0]) / dt
    if np.any(np.abs(offs - np.rint(offs)) > 1e-9):
        raise GridMismatch(
            "breakpoints are not commensurate with their minimum spacing")
    return PathGrid(float(bp[0]), dt, int(round(offs[-1])))


def verify_isometry(kernel: VolterraKernel, f: StepFunction,
                    n_paths: int, seed: int) -> IsometryReport:
    """Monte Carlo E i(f)^2 against the quadrature of ||K* f||^2."""
    grid = grid_for(f)
    paths = sample_paths(kernel, grid, f.dim, n_paths, seed)
    vals = wiener_integral(f, paths) ** 2
    lhs = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(n_paths))
    rhs = kstar_norm_sq(kernel, f)
    z = (lhs - rhs) / stderr if stderr > 0 else 0.0
    return IsometryReport(lhs_mc=lhs, rhs_quad=rhs, stderr=stderr, z=z,
                          passed=abs(z) <= 3.0)
