"""One-dimensional grid quantum dynamics and its classical limit.

The Hamiltonian is discretized on a uniform grid with hard walls: the kinetic
term is the three-point second difference and momentum is the central first
difference.  With this pairing ``i[H, Q]/hbar = P/m`` holds exactly on the
lattice, so d<q>/dt = <p>/m is not polluted by discretization error.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal

from .quantum_core import (
    DensityOperator,
    HermitianOperator,
    PureState,
    QuantumError,
    ValidationError,
    q_expectation,
    uncertainty,
)

__all__ = [
    "GridSystem",
    "ExpectationTrajectory",
    "ClassicalTrajectory",
    "GridExitError",
    "build_operators",
    "gaussian_packet",
    "quantum_expectation_trajectory",
    "classical_trajectory",
    "approximation_bound_check",
    "classicality_deviation",
]

BOUNDARY_POINTS = 5
BOUNDARY_MASS = 1e-6
EHRENFEST_RTOL = 1e-3
HEISENBERG_SLACK = 1e-8


class GridExitError(RuntimeError):
    def __init__(self, time: float, position: float):
        super().__init__(f"classical trajectory left the grid at t={time:.6g} (q={position:.6g})")
        self.time = time
        self.position = position


@dataclass(frozen=True, eq=False)
class GridSystem:
    """A particle of scalar mass in a sampled potential on a uniform grid."""

    n_points: int
    x_min: float
    x_max: float
    mass: float
    hbar: float
    potential: np.ndarray

    def __post_init__(self) -> None:
        if self.n_points < 16:
            raise ValidationError("n_points must be at least 16")
        if not self.x_max > self.x_min:
            raise ValidationError("x_max must exceed x_min")
        if self.mass <= 0 or self.hbar <= 0:
            raise ValidationError("mass and hbar must be positive")
        v = np.array(self.potential, dtype=float)
        if v.shape != (self.n_points,):
            raise ValidationError(f"potential must have {self.n_points} samples, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "potential", v)

    @classmethod
    def from_function(
        cls,
        V: Callable[[np.ndarray], np.ndarray],
        n_points: int,
        x_min: float,
        x_max: float,
        mass: float = 1.0,
        hbar: float = 1.0,
    ) -> GridSystem:
        x = np.linspace(x_min, x_max, n_points)
        return cls(n_points, x_min, x_max, mass, hbar, np.asarray(V(x), dtype=float) * np.ones_like(x))

    @functools.cached_property
    def grid(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def kinetic_coupling(self) -> float:
        return self.hbar**2 / (2.0 * self.mass * self.spacing**2)

    @functools.cached_property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and (real orthogonal) eigenvectors of the tridiagonal H."""
        k = self.kinetic_coupling
        return eigh_tridiagonal(2.0 * k + self.potential, -k * np.ones(self.n_points - 1))

    @functools.cached_property
    def force_spline(self) -> CubicSpline:
        # central-difference gradient of the samples, interpolated cubically
        return CubicSpline(self.grid, -np.gradient(self.potential, self.spacing, edge_order=2))

    @functools.cached_property
    def potential_spline(self) -> CubicSpline:
        """Antiderivative of the interpolated gradient, anchored to the sampled potential."""
        anti = self.force_spline.antiderivative()
        i0 = self.n_points // 2
        offset = self.potential[i0] + anti(self.grid[i0])
        return _NegShift(anti, offset)


@dataclass(frozen=True)
class _NegShift:
    anti: CubicSpline
    offset: float

    def __call__(self, x):
        return self.offset - self.anti(x)


@dataclass(frozen=True, eq=False)
class ExpectationTrajectory:
    times: np.ndarray
    q_mean: np.ndarray
    p_mean: np.ndarray
    sigma_q: np.ndarray
    sigma_p: np.ndarray
    # 0.5*|<[Q,P]>| for the lattice operators; the Heisenberg bound they obey
    lattice_floor: np.ndarray
    hbar: float
    ehrenfest_error: float = 0.0
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if np.any(self.sigma_q < 0) or np.any(self.sigma_p < 0):
            raise ValidationError("negative uncertainty in trajectory")
        gap = self.sigma_q * self.sigma_p - self.lattice_floor
        if np.any(gap < -HEISENBERG_SLACK):
            raise ValidationError("uncertainty product below the lattice Heisenberg bound", float(-gap.min()))

    @property
    def heisenberg_products(self) -> np.ndarray:
        return self.sigma_q * self.sigma_p

    @property
    def boundary_contaminated(self) -> bool:
        return any("boundary" in w for w in self.warnings)


@dataclass(frozen=True, eq=False)
class ClassicalTrajectory:
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray


def build_operators(sys: GridSystem) -> tuple[HermitianOperator, HermitianOperator, HermitianOperator]:
    """Dense Hamiltonian, position and momentum matrices of a grid system."""
    n, h, hbar = sys.n_points, sys.spacing, sys.hbar
    k = sys.kinetic_coupling
    H = np.diag(2.0 * k + sys.potential) - k * (np.eye(n, k=1) + np.eye(n, k=-1))
    P = (-1j * hbar / (2.0 * h)) * (np.eye(n, k=1) - np.eye(n, k=-1))
    return HermitianOperator(H), HermitianOperator(np.diag(sys.grid)), HermitianOperator(P)


def gaussian_packet(sys: GridSystem, q0: float, p0: float, sigma: float) -> PureState:
    """Normalized Gaussian with position spread ``sigma`` and mean momentum ``p0``."""
    x = sys.grid
    psi = np.exp(-((x - q0) ** 2) / (4.0 * sigma**2) + 1j * p0 * x / sys.hbar)
    return PureState.normalized(psi)


def _apply_momentum(psi: np.ndarray, sys: GridSystem) -> np.ndarray:
    d = np.zeros_like(psi)
    d[1:-1] = psi[2:] - psi[:-2]
    d[0] = psi[1]
    d[-1] = -psi[-2]
    return (-1j * sys.hbar / (2.0 * sys.spacing)) * d


def _moments(psi: np.ndarray, sys: GridSystem):
    # psi has shape (n_points, n_times)
    x = sys.grid
    prob = np.abs(psi) ** 2
    q = x @ prob
    q2 = (x * x) @ prob
    ppsi = _apply_momentum(psi, sys)
    p = np.real(np.sum(psi.conj() * ppsi, axis=0))
    p2 = np.sum(np.abs(ppsi) ** 2, axis=0)
    sigma_q = np.sqrt(np.maximum(q2 - q * q, 0.0))
    sigma_p = np.sqrt(np.maximum(p2 - p * p, 0.0))
    # [Q, P] = (i hbar / 2)(S + S^T) for the central-difference momentum
    overlap = np.real(np.sum(psi[:-1].conj() * psi[1:], axis=0))
    floor = 0.5 * sys.hbar * np.abs(overlap)
    edge = BOUNDARY_POINTS
    edge_mass = prob[:edge].sum(axis=0) + prob[-edge:].sum(axis=0)
    return q, p, sigma_q, sigma_p, floor, edge_mass


def evolve_states(sys: GridSystem, psi0: PureState, t_grid: Sequence[float]) -> np.ndarray:
    """Exact lattice Schrodinger evolution; returns an (n_points, n_times) array."""
    lam, V = sys.spectrum
    c = V.T @ psi0.amplitudes
    t = np.asarray(t_grid, dtype=float)
    return V @ (np.exp(-1j * np.outer(lam, t) / sys.hbar) * c[:, None])


def quantum_expectation_trajectory(
    sys: GridSystem, psi0: PureState, t_grid: Sequence[float]
) -> ExpectationTrajectory:
    if psi0.dim != sys.n_points:
        raise QuantumError(f"state has dim {psi0.dim}, grid has {sys.n_points} points")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be ascending and start at 0")

    psi = evolve_states(sys, psi0, t)
    q, p, sigma_q, sigma_p, floor, edge_mass = _moments(psi, sys)

    warnings: list[str] = []
    if np.any(edge_mass > BOUNDARY_MASS):
        i = int(np.argmax(edge_mass > BOUNDARY_MASS))
        warnings.append(f"boundary contamination from t={t[i]:.6g} (edge mass {edge_mass[i]:.2e})")

    err = 0.0
    if t.size >= 3:
        dq = np.gradient(q, t)[1:-1]
        scale = max(float(np.max(np.abs(p))) / sys.mass, np.finfo(float).tiny)
        err = float(np.max(np.abs(dq - p[1:-1] / sys.mass))) / scale
        if err > EHRENFEST_RTOL:
            warnings.append(f"finite-difference d<q>/dt deviates from <p>/m by {err:.2e} (relative)")

    return ExpectationTrajectory(
        times=t,
        q_mean=q,
        p_mean=p,
        sigma_q=sigma_q,
        sigma_p=sigma_p,
        lattice_floor=floor,
        hbar=sys.hbar,
        ehrenfest_error=err,
        warnings=tuple(warnings),
    )


def classical_trajectory(sys: GridSystem, q0: float, p0: float, t_grid: Sequence[float]) -> ClassicalTrajectory:
    """Integrate Newton's equation with fixed-step RK4.

    The step is at most ``min(diff(t_grid)) / 16``.  The force is the cubic
    interpolant of the central-difference gradient of the sampled potential,
    and the reported energy uses that interpolant's antiderivative, so it is
    exactly conserved by the continuous flow.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly ascending")
    lo, hi = sys.x_min, sys.x_max
    if not lo <= q0 <= hi:
        raise GridExitError(float(t[0]), q0)
    force = sys.force_spline
    m = sys.mass

    def rhs(q: float, p: float) -> tuple[float, float]:
        return p / m, float(force(q))

    qs = np.empty_like(t)
    ps = np.empty_like(t)
    q, p = float(q0), float(p0)
    qs[0], ps[0] = q, p
    max_dt = np.min(np.diff(t)) / 16.0 if t.size > 1 else 0.0
    for i in range(1, t.size):
        span = t[i] - t[i - 1]
        n_sub = max(16, math.ceil(span / max_dt - 1e-12))
        dt = span / n_sub
        for j in range(n_sub):
            k1q, k1p = rhs(q, p)
            k2q, k2p = rhs(q + 0.5 * dt * k1q, p + 0.5 * dt * k1p)
            k3q, k3p = rhs(q + 0.5 * dt * k2q, p + 0.5 * dt * k2p)
            k4q, k4p = rhs(q + dt * k3q, p + dt * k3p)
            q += dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
            p += dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
            if not lo <= q <= hi:
                raise GridExitError(float(t[i - 1] + (j + 1) * dt), q)
        qs[i], ps[i] = q, p
    energy = 0.5 * ps**2 / m + sys.potential_spline(qs)
    return ClassicalTrajectory(times=t, q=qs, p=ps, energy=energy)


def approximation_bound_check(
    rho: DensityOperator,
    Q: HermitianOperator,
    f_values: Sequence[complex],
    f_second_derivative_bound: float,
) -> tuple[float, float]:
    """Both sides of |<f(q)> - f(<q>)| <= 1/2 sup|f''| sigma_q^2.

    ``Q`` must be diagonal (a grid position operator) and ``f_values`` holds f
    at its diagonal entries.  f(<q>) is evaluated by cubic interpolation.
    """
    if f_second_derivative_bound < 0:
        raise ValueError("second-derivative bound must be non-negative")
    if np.max(np.abs(Q.matrix - np.diag(np.diag(Q.matrix)))) > 0:
        raise QuantumError("Q must be diagonal")
    nodes = np.diag(Q.matrix).real
    f = np.asarray(f_values, dtype=complex)
    if f.shape != nodes.shape:
        raise QuantumError("f_values must match the diagonal of Q")
    order = np.argsort(nodes)
    nodes, f = nodes[order], f[order]

    qbar = q_expectation(rho, Q)
    if not nodes[0] <= qbar <= nodes[-1]:
        raise QuantumError(f"<Q> = {qbar} lies outside the grid range")
    diag_rho = np.real(np.diag(rho.matrix))[order]
    mean_f = complex(np.sum(diag_rho * f))
    if np.all(f.imag == 0):
        f_at_mean = complex(CubicSpline(nodes, f.real)(qbar))
    else:
        f_at_mean = complex(CubicSpline(nodes, f.real)(qbar), CubicSpline(nodes, f.imag)(qbar))
    lhs = abs(mean_f - f_at_mean)
    rhs = 0.5 * f_second_derivative_bound * uncertainty(rho, Q) ** 2
    return lhs, rhs


def classicality_deviation(
    traj: ExpectationTrajectory, sys: GridSystem, third_derivative_bound: float
) -> tuple[np.ndarray, np.ndarray]:
    """Residual of Newton's law for <q> and its uncertainty-based bound.

    Both arrays cover the interior times ``traj.times[1:-1]``.
    """
    t = traj.times
    if t.size < 3:
        raise ValueError("need at least 3 time samples")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("classicality_deviation needs a uniform time grid")
    q = traj.q_mean
    accel = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / dt[0] ** 2
    residual = np.abs(sys.mass * accel - sys.force_spline(q[1:-1]))
    bound = third_derivative_bound * traj.sigma_q[1:-1] ** 2
    return residual, bound
