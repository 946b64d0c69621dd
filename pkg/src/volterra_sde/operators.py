"""Finite-dimensional spectral realization of the neutral delay machinery.

A acts diagonally as -lambda_k; the delay operators split into a point part
at lag -r (matrices D1, F1) and a distributed part with constant matrix
densities D2, F2 integrated over the segment [-r, 0] by trapezoid weights
on the solver grid.  The deterministic neutral equation

    d/dt (x(t) - D x_t) = A (x(t) - D x_t) + F x_t

is marched by exponential Euler on v = x - D x_t, and x is recovered from
v step by step.  With dt <= r the point part of D only touches past values;
the distributed part contributes the current value with trapezoid weight
dt/2, which is absorbed by a small linear solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NegativeTime, SegmentUnderflow, StepLargerThanDelay
from .trajectory import Trajectory
from .sampling import PathGrid


def _as_matrix(m, n: int) -> np.ndarray:
    if m is None:
        return np.zeros((n, n))
    m = np.asarray(m, float)
    if m.ndim == 0:
        return float(m) * np.eye(n)
    return m.reshape(n, n)


@dataclass(frozen=True)
class SpectralSystem:
    eigenvalues: np.ndarray     # (N,), all > 0
    delay_r: float
    D1: np.ndarray              # (N, N) point delay in the neutral term
    F1: np.ndarray              # (N, N) point delay in the drift
    D2: np.ndarray              # (N, N) constant density over [-r, 0]
    F2: np.ndarray              # (N, N) constant density over [-r, 0]
    noise_B: np.ndarray         # (N, M)

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.eigenvalues, float))
        if np.any(lam <= 0):
            raise ValueError("all eigenvalues must be strictly positive")
        if self.delay_r <= 0:
            raise ValueError("delay_r must be positive")
        n = len(lam)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "D1", _as_matrix(self.D1, n))
        object.__setattr__(self, "F1", _as_matrix(self.F1, n))
        object.__setattr__(self, "D2", _as_matrix(self.D2, n))
        object.__setattr__(self, "F2", _as_matrix(self.F2, n))
        B = np.asarray(self.noise_B, float)
        if B.ndim == 0:
            B = float(B) * np.eye(n)[:, :n]
        if B.ndim == 1:
            B = B.reshape(n, -1)
        object.__setattr__(self, "noise_B", B)

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def noise_dim(self) -> int:
        return self.noise_B.shape[1]

    @property
    def coercivity_rate(self) -> float:
        return float(np.min(self.eigenvalues))

    @property
    def has_D(self) -> bool:
        return bool(np.any(self.D1) or np.any(self.D2))


def scalar_system(lam: float, delay_r: float = 1.0, d1: float = 0.0,
                  f1: float = 0.0, b: float = 1.0, d2: float = 0.0,
                  f2: float = 0.0) -> SpectralSystem:
    return SpectralSystem(np.array([lam]), delay_r,
                          np.array([[d1]]), np.array([[f1]]),
                          np.array([[d2]]), np.array([[f2]]),
                          np.array([[b]]))


@dataclass(frozen=True)
class LiftedState:
    """Product-space state (x(t) - D x_t, x_t); the segment stores x on the
    uniform grid over [-r, 0], oldest first, r/dt + 1 slots."""
    head: np.ndarray            # (N,)
    segment: np.ndarray         # (n_slots, N)

    @property
    def n_slots(self) -> int:
        return self.segment.shape[0]

    def norm(self, delay_r: float) -> float:
        dt = delay_r / (self.n_slots - 1)
        w = trapezoid_weights(self.n_slots, dt)
        seg_sq = float(np.sum(w * np.sum(self.segment ** 2, axis=1)))
        return float(np.sqrt(np.sum(self.head ** 2) + seg_sq))


def trapezoid_weights(n_slots: int, dt: float) -> np.ndarray:
    w = np.full(n_slots, dt)
    w[0] = w[-1] = dt / 2
    return w


def _check_segment(sys: SpectralSystem, segment: np.ndarray) -> np.ndarray:
    segment = np.atleast_2d(np.asarray(segment, float))
    if segment.shape[0] < 2:
        raise SegmentUnderflow("segment needs at least two slots over [-r, 0]")
    if segment.shape[1] != sys.dim:
        raise SegmentUnderflow(
            f"segment width {segment.shape[1]} != system dim {sys.dim}")
    return segment


def apply_semigroup(sys: SpectralSystem, t: float, x: np.ndarray) -> np.ndarray:
    if t < 0:
        raise NegativeTime(f"semigroup defined for t >= 0, got {t}")
    return np.exp(-sys.eigenvalues * t) * np.asarray(x, float)


def _apply_delay(M1: np.ndarray, M2: np.ndarray, segment: np.ndarray,
                 dt: float) -> np.ndarray:
    """M1 x(-r) + int_{-r}^0 M2 x(theta) dtheta by trapezoid."""
    out = M1 @ segment[0]
    if np.any(M2):
        w = trapezoid_weights(len(segment), dt)
        out = out + M2 @ (w @ segment)
    return out


def apply_D(sys: SpectralSystem, segment: np.ndarray,
            dt: Optional[float] = None) -> np.ndarray:
    segment = _check_segment(sys, segment)
    if dt is None:
        dt = sys.delay_r / (len(segment) - 1)
    return _apply_delay(sys.D1, sys.D2, segment, dt)


def apply_F(sys: SpectralSystem, segment: np.ndarray,
            dt: Optional[float] = None) -> np.ndarray:
    segment = _check_segment(sys, segment)
    if dt is None:
        dt = sys.delay_r / (len(segment) - 1)
    return _apply_delay(sys.F1, sys.F2, segment, dt)


def _grid_counts(sys: SpectralSystem, T: float, dt: float) -> tuple[int, int]:
    m = round(sys.delay_r / dt)
    if abs(m * dt - sys.delay_r) > 1e-9 * dt or m < 1:
        raise ValueError(f"delay_r={sys.delay_r} is not a multiple of dt={dt}")
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * dt or n < 0:
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    return m, n


def _history_from_segment(phi1: np.ndarray, m: int, N: int) -> np.ndarray:
    """Initial history x on the m+1 grid slots of [-r, 0] from phi1, which
    may be a constant vector or an (m+1, N) array."""
    phi1 = np.asarray(phi1, float)
    if phi1.ndim <= 1:
        return np.tile(np.broadcast_to(phi1, (N,)), (m + 1, 1))
    if phi1.shape != (m + 1, N):
        raise SegmentUnderflow(
            f"initial segment shape {phi1.shape} != ({m + 1}, {N})")
    return phi1.copy()


class _NeutralStepper:
    """Shared machinery for the deterministic and stochastic marchers.

    State layout: x has m + n + 1 rows for grid [-r, T]; v (= x - D x_t) is
    tracked on [0, T].  Each step solves
        (I - (dt/2) D2) x_{k+1} = v_{k+1} + D1 x_{k+1-m} + D2-trapezoid(past)
    which is the trapezoid rule with the newest slot moved to the left side.
    """

    def __init__(self, sys: SpectralSystem, T: float, dt: float):
        if sys.has_D and dt > sys.delay_r + 1e-12 * dt:
            raise StepLargerThanDelay(
                f"dt={dt} exceeds delay_r={sys.delay_r} with D != 0")
        m, n = _grid_counts(sys, T, dt)
        self.sys = sys
        self.m, self.n, self.dt = m, n, dt
        lam = sys.eigenvalues
        self.decay = np.exp(-lam * dt)
        self.psi = (1.0 - self.decay) / lam  # int_0^dt e^{sA} ds, diagonal
        self.w = trapezoid_weights(m + 1, dt)
        N = sys.dim
        self.solve_newest = None
        if np.any(sys.D2):
            self.solve_newest = np.linalg.inv(np.eye(N) - (dt / 2) * sys.D2)

    def recover_x(self, v_new: np.ndarray, x: np.ndarray, k_new: int
                  ) -> np.ndarray:
        """x_{k_new} from v_{k_new} and the already-known past of x."""
        sys, m = self.sys, self.m
        rhs = v_new + sys.D1 @ x[k_new - m]
        if np.any(sys.D2):
            past = x[k_new - m:k_new]
            rhs = rhs + sys.D2 @ (self.w[:-1] @ past)
            return self.solve_newest @ rhs
        return rhs

    def drift(self, x: np.ndarray, k: int) -> np.ndarray:
        """F x_{t_k} using the segment x[k-m .. k]."""
        return _apply_delay(self.sys.F1, self.sys.F2, x[k - self.m:k + 1],
                            self.dt)


def solve_deterministic_neutral(sys: SpectralSystem, phi0: np.ndarray,
                                phi1: np.ndarray, T: float,
                                dt: float) -> Trajectory:
    """Exponential-Euler solution of the neutral equation on [-r, T].

    Initial data: x = phi1 on [-r, 0) and x(0) = phi0 + D phi1 (with the
    newest trapezoid slot of a distributed D resolved implicitly).
    """
    st = _NeutralStepper(sys, T, dt)
    m, n = st.m, st.n
    N = sys.dim
    x = np.empty((m + n + 1, N))
    x[:m + 1] = _history_from_segment(phi1, m, N)
    v = np.empty((n + 1, N))
    v[0] = np.broadcast_to(np.asarray(phi0, float), (N,))
    x[m] = st.recover_x(v[0], x, m)
    for k in range(n):
        v[k + 1] = st.decay * v[k] + st.psi * st.drift(x, m + k)
        x[m + k + 1] = st.recover_x(v[k + 1], x, m + k + 1)
    grid = PathGrid(-sys.delay_r, dt, m + n)
    return Trajectory(grid=grid, states=x, head=v, seed=None, kernel_id=None,
                      delay_slots=m)


def fundamental_solution(sys: SpectralSystem, t: float, h: np.ndarray,
                         dt: float) -> np.ndarray:
    """G(t) h: zero for t < 0, else the homogeneous solution from (h, 0)."""
    h = np.asarray(h, float)
    if t < 0:
        return np.zeros_like(h, dtype=float)
    if t == 0:
        return h.astype(float)
    traj = solve_deterministic_neutral(sys, h, np.zeros(sys.dim), t, dt)
    return traj.states[-1]


def lifted_semigroup(sys: SpectralSystem, t: float, phi: LiftedState,
                     dt: float) -> LiftedState:
    """S(t) phi = (x(t) - D x_t, x_t) for the deterministic flow."""
    if t < 0:
        raise NegativeTime(f"semigroup defined for t >= 0, got {t}")
    if t == 0:
        return phi
    traj = solve_deterministic_neutral(sys, phi.head, phi.segment, t, dt)
    m = traj.delay_slots
    return LiftedState(head=traj.head[-1].copy(),
                       segment=traj.states[-(m + 1):].copy())


@dataclass(frozen=True)
class StabilityEstimate:
    M: float
    rho: float
    decays: bool

    def to_text(self) -> str:
        return (f"M={self.M:.6g}\nrho={self.rho:.6g}\n"
                f"decays={'true' if self.decays else 'false'}")


def estimate_stability(sys: SpectralSystem, horizon: float, dt: float,
                       n_probes: int, seed: int) -> StabilityEstimate:
    """Fit ||S(t) phi|| <= M e^{-rho t} from random unit initial states.

    rho is the decay rate of the worst probe (least-squares slope of the
    log product-space norm past the first delay interval); M the matching
    prefactor.  decays is rho > 0.
    """
    m, n = _grid_counts(sys, horizon, dt)
    rng = np.random.default_rng(seed)
    t_grid = dt * np.arange(n + 1)
    keep = t_grid >= sys.delay_r
    worst_rho = np.inf
    worst_M = 0.0
    for _ in range(n_probes):
        head = rng.standard_normal(sys.dim)
        seg = rng.standard_normal((m + 1, sys.dim))
        phi = LiftedState(head=head, segment=seg)
        scale = phi.norm(sys.delay_r)
        traj = solve_deterministic_neutral(sys, head / scale, seg / scale,
                                           horizon, dt)
        norms = _lifted_norm_series(traj, sys)
        logn = np.log(np.maximum(norms[keep], 1e-300))
        A = np.vstack([np.ones(keep.sum()), t_grid[keep]]).T
        coef, *_ = np.linalg.lstsq(A, logn, rcond=None)
        rho = -coef[1]
        M = float(np.exp(coef[0]))
        if rho < worst_rho:
            worst_rho = rho
            worst_M = M
    return StabilityEstimate(M=worst_M, rho=float(worst_rho),
                             decays=worst_rho > 0)


def _lifted_norm_series(traj: Trajectory, sys: SpectralSystem) -> np.ndarray:
    """||(v(t), x_t)|| on the product space for each grid time t >= 0."""
    m = traj.delay_slots
    dt = traj.grid.dt
    w = trapezoid_weights(m + 1, dt)
    x = traj.states
    v = traj.head
    out = np.empty(len(v))
    for k in range(len(v)):
        seg = x[k:k + m + 1]
        out[k] = np.sqrt(np.sum(v[k] ** 2)
                         + np.sum(w * np.sum(seg ** 2, axis=1)))
    return out
