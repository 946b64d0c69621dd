"""Exact Gaussian sampling of Volterra processes on uniform grids.

Paths are drawn from the increment covariance matrix (assembled by the
kernel quadrature) through a Cholesky factor, so the sampler is exact up to
quadrature accuracy and serves as an independent oracle for the isometry
and ergodicity tests.

Stream derivation rule (part of the external contract): the increments of
path p, coordinate c are drawn from
``numpy.random.SeedSequence(entropy=seed, spawn_key=(p + path_offset, c))``.
Streams are therefore reproducible and order-independent, and disjoint path
blocks sampled with offsets match a single combined run.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz, cholesky

from .errors import CovarianceNotPSD, InsufficientSamples
from .kernels import VolterraKernel, CovarianceQuery, covariance_R, phi_gap
from .quadrature import panel_nodes


@dataclass(frozen=True)
class PathGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.n_steps


@dataclass(frozen=True)
class ProcessPaths:
    grid: PathGrid
    dim: int
    n_paths: int
    values: np.ndarray  # (n_paths, dim, n_steps + 1), anchored at 0 at t0
    seed: int

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-1)


# ---------------------------------------------------------------------------
# increment covariance

def _toeplitz_row(kernel: VolterraKernel, dt: float, n: int,
                  order: int = 12) -> np.ndarray:
    """gamma(k) = R(0, dt, k dt, (k+1) dt) for k = 0..n-1.

    Entries k >= 2 are far from the diagonal, so phi is smooth over the
    cell and a plain tensor Gauss rule suffices; they are evaluated in
    batches.  gamma(0) and gamma(1) go through the singularity-aware path.
    """
    row = np.empty(n)
    row[0] = covariance_R(kernel, CovarianceQuery(0.0, dt, 0.0, dt))
    if n > 1:
        row[1] = covariance_R(kernel, CovarianceQuery(0.0, dt, dt, 2 * dt))
    if n > 2:
        ks = np.arange(2, n)
        ue, uw = panel_nodes(np.array([0.0, dt]), order)
        un = ue.reshape(-1)
        uwt = uw.reshape(-1)
        chunk = 200
        for i0 in range(0, len(ks), chunk):
            kk = ks[i0:i0 + chunk]
            ve, vw = panel_nodes(np.stack([kk * dt, (kk + 1) * dt], axis=-1),
                                 order)
            vn = ve[:, 0, :]
            vwt = vw[:, 0, :]
            U = un[None, :, None] + 0 * vn[:, None, :]
            V = vn[:, None, :] + 0 * un[None, :, None]
            m = np.minimum(U, V)
            ph = phi_gap(kernel, m, U - m, V - m, order=order)
            row[2 + i0:2 + i0 + len(kk)] = np.einsum(
                "kuv,u,kv->k", ph, uwt, vwt)
    return row


def increment_covariance_matrix(kernel: VolterraKernel,
                                grid: PathGrid) -> np.ndarray:
    """n x n covariance of the grid increments.

    Stationary-increment kernels reduce to a Toeplitz matrix built from a
    single row; others fill the upper triangle cell by cell.
    """
    n = grid.n_steps
    dt = grid.dt
    if kernel.stationary_increments:
        return toeplitz(_toeplitz_row(kernel, dt, n))
    t = grid.times
    M = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            M[i, j] = covariance_R(
                kernel, CovarianceQuery(t[i], t[i + 1], t[j], t[j + 1]))
            M[j, i] = M[i, j]
    return M


# Cholesky factors are expensive at long horizons (tens of seconds of
# quadrature, ~1 GB at n ~ 10^4).  The factor of a leading principal
# submatrix is the leading block of the full factor, so one cache entry per
# (kernel, dt, t0) serves every shorter grid by slicing; keep the two most
# recent entries.
_CHOL_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
_CHOL_KEYS: list = []


def _cholesky_factor(kernel: VolterraKernel,
                     grid: PathGrid) -> tuple[np.ndarray, np.ndarray]:
    """Lower factor L of the increment covariance, plus the Toeplitz row
    (None for non-stationary kernels).

    Jitter escalates 1e-12 -> 1e-8 relative to the diagonal scale; failure
    past that points at a quadrature defect rather than roundoff, so it
    raises.
    """
    n = grid.n_steps
    if kernel.stationary_increments:
        key = (kernel.cache_key, grid.dt)
    else:
        key = (kernel.cache_key, grid.dt, grid.t0)
    if key in _CHOL_CACHE and _CHOL_CACHE[key][0].shape[0] >= n:
        L, row = _CHOL_CACHE[key]
        return L[:n, :n], (None if row is None else row[:n])
    M = increment_covariance_matrix(kernel, grid)
    row = M[0].copy() if kernel.stationary_increments else None
    scale = float(np.max(np.diag(M)))
    last = None
    for jit in (0.0, 1e-12, 1e-10, 1e-8):
        try:
            L = cholesky(M + jit * scale * np.eye(len(M)), lower=True)
            _CHOL_CACHE[key] = (L, row)
            _CHOL_KEYS.append(key)
            while len(_CHOL_KEYS) > 2:
                _CHOL_CACHE.pop(_CHOL_KEYS.pop(0), None)
            return L, row
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defect path
            last = exc
    raise CovarianceNotPSD(
        f"increment covariance not PSD after jitter escalation: {last}")


def cached_increment_row(kernel: VolterraKernel, dt: float,
                         n: int) -> np.ndarray:
    """Toeplitz first row gamma(0..n-1), via the shared cache when possible."""
    if not kernel.stationary_increments:
        raise ValueError("row form requires stationary increments")
    key = (kernel.cache_key, dt)
    if key in _CHOL_CACHE and _CHOL_CACHE[key][1] is not None \
            and len(_CHOL_CACHE[key][1]) >= n:
        return _CHOL_CACHE[key][1][:n]
    return _toeplitz_row(kernel, dt, n)


# ---------------------------------------------------------------------------
# sampling

def _stream(seed: int, path: int, coord: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(path, coord)))


def sample_increments(kernel: VolterraKernel, grid: PathGrid, dim: int,
                      n_paths: int, seed: int,
                      path_offset: int = 0) -> np.ndarray:
    """Increment array of shape (n_paths, dim, n_steps)."""
    if dim < 1 or n_paths < 1:
        raise ValueError("dim and n_paths must be positive")
    L, _ = _cholesky_factor(kernel, grid)
    n = grid.n_steps
    Z = np.empty((n, n_paths * dim))
    for p in range(n_paths):
        for c in range(dim):
            Z[:, p * dim + c] = _stream(seed, p + path_offset,
                                        c).standard_normal(n)
    inc = (L @ Z).T.reshape(n_paths, dim, n)
    return inc


def sample_paths(kernel: VolterraKernel, grid: PathGrid, dim: int,
                 n_paths: int, seed: int,
                 path_offset: int = 0) -> ProcessPaths:
    """Exact Gaussian paths anchored at value 0 at the grid origin."""
    inc = sample_increments(kernel, grid, dim, n_paths, seed, path_offset)
    values = np.zeros((n_paths, dim, grid.n_steps + 1))
    np.cumsum(inc, axis=-1, out=values[..., 1:])
    return ProcessPaths(grid=grid, dim=dim, n_paths=n_paths, values=values,
                        seed=seed)


# ---------------------------------------------------------------------------
# statistical checks

@dataclass(frozen=True)
class IncrementLawReport:
    stationarity_z: np.ndarray
    reflexivity_z: np.ndarray
    stationary_pass: bool
    reflexive_pass: bool

    def to_text(self) -> str:
        return "\n".join([
            f"stationarity_max_z={np.max(np.abs(self.stationarity_z)):.4g}",
            f"reflexivity_max_z={np.max(np.abs(self.reflexivity_z)):.4g}",
            f"stationary_pass={'true' if self.stationary_pass else 'false'}",
            f"reflexive_pass={'true' if self.reflexive_pass else 'false'}",
        ])


def _paired_z(a: np.ndarray, b: np.ndarray) -> float:
    """z-score for E a = E b using the per-path difference."""
    d = a - b
    se = np.std(d, ddof=1) / np.sqrt(len(d))
    if se == 0:
        return 0.0
    return float(np.mean(d) / se)


def test_increment_laws(paths: ProcessPaths,
                        n_lags: int) -> IncrementLawReport:
    """Second-moment tests of stationary and reflexive increments.

    Stationarity compares E[inc_0 inc_d] against the same product shifted
    by h grid steps; reflexivity compares E[(b_t - b_s)(b_t' - b_s')] with
    the time-reversed pair, found by mirroring grid indices around 0 (the
    grid must straddle 0 for that part to have content).  The laws are
    Gaussian and centered, so second moments decide equality.
    """
    if paths.n_paths < 2:
        raise InsufficientSamples(
            "need at least 2 paths to estimate moments")
    inc = paths.increments[:, 0, :]  # coordinate 0 carries the test
    n = inc.shape[1]
    z_stat = []
    for d in range(min(n_lags, n - 1)):
        base = inc[:, 0] * inc[:, d]
        n_shifts = min(4, n - 1 - d)
        for h in range(1, n_shifts + 1):
            z_stat.append(_paired_z(base, inc[:, h] * inc[:, h + d]))
    z_stat = np.array(z_stat) if z_stat else np.zeros(1)

    t = paths.grid.times
    z_refl = []
    # mirror t -> -t; usable only where both endpoints land back on the grid
    for i in range(len(t) - 1):
        j = i + 1
        mi = np.argmin(np.abs(t + t[j]))
        mj = np.argmin(np.abs(t + t[i]))
        if (abs(t[mi] + t[j]) > 1e-9 * paths.grid.dt
                or abs(t[mj] + t[i]) > 1e-9 * paths.grid.dt or mj <= mi):
            continue
        fwd = paths.values[:, 0, j] - paths.values[:, 0, i]
        rev = paths.values[:, 0, mj] - paths.values[:, 0, mi]
        z_refl.append(_paired_z(fwd * fwd, rev * rev))
        if len(z_refl) >= n_lags:
            break
    z_refl = np.array(z_refl) if z_refl else np.zeros(1)

    return IncrementLawReport(
        stationarity_z=z_stat,
        reflexivity_z=z_refl,
        stationary_pass=bool(np.max(np.abs(z_stat)) <= 3.0),
        reflexive_pass=bool(np.max(np.abs(z_refl)) <= 3.0),
    )


# ---------------------------------------------------------------------------
# export

def paths_to_csv(paths: ProcessPaths) -> str:
    """CSV with columns path_id, coord, t, value; 12 significant digits."""
    buf = io.StringIO()
    buf.write("path_id,coord,t,value\n")
    t = paths.grid.times
    for p in range(paths.n_paths):
        for c in range(paths.dim):
            for k in range(len(t)):
                buf.write(f"{p},{c},{t[k]:.12g},"
                          f"{paths.values[p, c, k]:.12g}\n")
    return buf.getvalue()
