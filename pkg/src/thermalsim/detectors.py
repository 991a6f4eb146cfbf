"""Detector models and the two conventions for measurement error.

The thermal convention takes the q-expectation <A> as the true value and
charges each raw reading with its distance from it; the Born convention takes
the nearest eigenvalue of A as the true value.  The remaining models cover
counting detectors (Poisson buckets), a bistable Langevin pointer, and binary
Stern-Gerlach outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from ._rng import SeedLike, substream
from .quantum_core import (
    DensityOperator,
    HermitianOperator,
    ValidationError,
    eigendecompose,
    q_expectation,
    uncertainty,
)

__all__ = [
    "MeasurementRecord",
    "ErrorLedger",
    "DoubleWellParams",
    "SpinEnsembleResult",
    "InstabilityError",
    "summarize",
    "dual_error_ledger",
    "born_outcome_distribution",
    "two_level_energy_truth",
    "bucket_count",
    "double_well_pointer",
    "double_well_ensemble",
    "occupancy_fractions",
    "boltzmann_occupancy",
    "stern_gerlach_ensemble",
    "sg_pointer_tally",
    "replicate_mean_spread",
    "scaling_slope",
]

DISPLAY_HALF_ULP = 0.0005
MAX_BUCKET_MEAN = 1e9
DIVERGENCE_LIMIT = 10.0
STABILITY_RANGE = 2.0
WELL_EDGE = 0.3


class InstabilityError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Distinct displayed readings and how often each occurred."""

    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        c = np.asarray(self.counts)
        if v.ndim != 1 or v.shape != c.shape or v.size == 0:
            raise ValidationError("values and counts must be equal-length non-empty vectors")
        if np.any(np.diff(v) <= 0):
            raise ValidationError("values must be strictly ascending")
        if not np.issubdtype(c.dtype, np.integer) or np.any(c < 1):
            raise ValidationError("counts must be positive integers")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_observations(cls, observations: Sequence[float]) -> MeasurementRecord:
        v, c = np.unique(np.asarray(observations, dtype=float), return_counts=True)
        return cls(v, c)


def summarize(record: MeasurementRecord, ddof: int = 0) -> tuple[float, float, float]:
    """Count-weighted mean, standard deviation, and standard error of the mean.

    ``ddof=0`` gives the population standard deviation (divide by N).
    """
    N = record.total
    if N - ddof < 1:
        raise ValueError("not enough observations for the requested ddof")
    w = record.counts / N
    mean = float(np.sum(w * record.values))
    var = float(np.sum(record.counts * (record.values - mean) ** 2)) / (N - ddof)
    std = math.sqrt(var)
    return mean, std, std / math.sqrt(N)


@dataclass(frozen=True, eq=False)
class ErrorLedger:
    observations: np.ndarray
    thermal_true_value: float
    thermal_errors: np.ndarray
    born_eigenvalues: np.ndarray
    born_errors: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.thermal_errors < 0) or np.any(self.born_errors < 0):
            raise ValidationError("errors must be non-negative")
        spread = float(self.born_eigenvalues[-1] - self.born_eigenvalues[0])
        if np.any(self.born_errors > self.thermal_errors + spread + 1e-12):
            raise ValidationError("Born error exceeds thermal error plus eigenvalue spread")

    @property
    def mean_thermal_error(self) -> float:
        return float(np.mean(self.thermal_errors))

    @property
    def mean_born_error(self) -> float:
        return float(np.mean(self.born_errors))

    def born_within_display(self, half_ulp: float = DISPLAY_HALF_ULP) -> np.ndarray:
        """Readings that coincide with an eigenvalue up to display rounding."""
        return self.born_errors <= half_ulp

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.observations.tolist(), self.thermal_errors.tolist(), self.born_errors.tolist()))


def dual_error_ledger(observations: Sequence[float], rho: DensityOperator, A: HermitianOperator) -> ErrorLedger:
    obs = np.asarray(observations, dtype=float)
    true_value = q_expectation(rho, A)
    eigenvalues, _ = eigendecompose(A)
    born = np.min(np.abs(obs[:, None] - eigenvalues[None, :]), axis=1) if obs.size else np.empty(0)
    return ErrorLedger(obs, true_value, np.abs(obs - true_value), eigenvalues, born)


def born_outcome_distribution(rho: DensityOperator, A: HermitianOperator) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of A and their probabilities <v_k| rho |v_k>."""
    lam, V = eigendecompose(A)
    probs = np.real(np.einsum("ik,ij,jk->k", V.conj(), rho.matrix, V))
    return lam, np.clip(probs, 0.0, None)


def two_level_energy_truth(p: float, E1: float, E2: float) -> tuple[float, float]:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    return p * E1 + (1.0 - p) * E2, math.sqrt(p * (1.0 - p)) * abs(E1 - E2)


def bucket_count(flow_rate: float, duration: float, bucket_size: float, seed: SeedLike) -> tuple[int, float]:
    """Count full buckets from a Poisson flow; returns (count, rate estimate).

    The estimate ``count * (bucket_size / duration)`` lives on an integer
    lattice, so flow below one bucket per duration is invisible.
    """
    if flow_rate <= 0 or duration <= 0 or bucket_size <= 0:
        raise ValueError("flow_rate, duration and bucket_size must be positive")
    lam = flow_rate * duration / bucket_size
    if lam > MAX_BUCKET_MEAN:
        raise OverflowError(f"expected bucket count {lam:.3g} exceeds {MAX_BUCKET_MEAN:.0e}")
    count = int(substream(seed).poisson(lam))
    return count, count * (bucket_size / duration)


@dataclass(frozen=True)
class DoubleWellParams:
    """Overdamped particle in W(x) = a (x^2 - 1)^2 with noise temperature theta."""

    barrier: float = 1.0
    theta: float = 0.05
    dt: float = 0.01
    n_steps: int = 100_000

    def __post_init__(self) -> None:
        if self.barrier <= 0 or self.dt <= 0 or self.theta < 0:
            raise ValidationError("barrier and dt must be positive, theta non-negative")
        if self.n_steps < 1:
            raise ValidationError("n_steps must be positive")
        if self.dt * self.max_curvature >= 0.5:
            raise ValidationError(
                f"dt = {self.dt} too large: dt * max|W''| = {self.dt * self.max_curvature:.3g} >= 0.5"
            )

    @property
    def max_curvature(self) -> float:
        """max |W''(x)| for |x| <= 2."""
        return self.barrier * abs(12.0 * STABILITY_RANGE**2 - 4.0)

    def drift(self, x):
        return -4.0 * self.barrier * x * (x * x - 1.0)


def double_well_pointer(params: DoubleWellParams, x0: float, seed: SeedLike) -> np.ndarray:
    """Euler-Maruyama path of dx = -W'(x) dt + sqrt(2 theta) dB.

    Returns ``n_steps + 1`` samples including ``x0``.
    """
    rng = substream(seed)
    kicks = math.sqrt(2.0 * params.theta * params.dt) * rng.standard_normal(params.n_steps)
    out = np.empty(params.n_steps + 1)
    out[0] = x = float(x0)
    a4, dt = 4.0 * params.barrier, params.dt
    for i, kick in enumerate(kicks.tolist(), start=1):
        x = x - a4 * x * (x * x - 1.0) * dt + kick
        if abs(x) > DIVERGENCE_LIMIT:
            raise InstabilityError(f"double-well path diverged at step {i} (x = {x:.3g})")
        out[i] = x
    return out


def double_well_ensemble(params: DoubleWellParams, n_paths: int, x0: float, seed: SeedLike) -> np.ndarray:
    """Independent pointer paths, shape ``(n_paths, n_steps + 1)``.

    Path ``k`` is driven by the stream keyed ``(seed, k)`` and matches
    ``double_well_pointer(params, x0, (seed, k))`` to floating-point roundoff.
    """
    base = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    sd = math.sqrt(2.0 * params.theta * params.dt)
    kicks = np.stack([sd * substream(*base, k).standard_normal(params.n_steps) for k in range(n_paths)])
    out = np.empty((n_paths, params.n_steps + 1))
    x = np.full(n_paths, float(x0))
    out[:, 0] = x
    a4, dt = 4.0 * params.barrier, params.dt
    for i in range(params.n_steps):
        x = x - a4 * x * (x * x - 1.0) * dt + kicks[:, i]
        if np.any(np.abs(x) > DIVERGENCE_LIMIT):
            raise InstabilityError(f"double-well ensemble diverged at step {i + 1}")
        out[:, i + 1] = x
    return out


def occupancy_fractions(samples: np.ndarray, edge: float = WELL_EDGE) -> dict[str, float]:
    """Fractions of samples in the left well, the barrier region, the right well."""
    s = np.asarray(samples).ravel()
    return {
        "left": float(np.mean(s < -edge)),
        "middle": float(np.mean(np.abs(s) <= edge)),
        "right": float(np.mean(s > edge)),
    }


def boltzmann_occupancy(params: DoubleWellParams, edge: float = WELL_EDGE) -> dict[str, float]:
    """Stationary occupancy from quadrature of exp(-W/theta)."""
    a, th = params.barrier, params.theta
    if th < 1e-3 * a:
        # barrier-region weight ~ exp(-a (1 - edge^2)^2 / theta) is below double precision
        return {"left": 0.5, "middle": 0.0, "right": 0.5}

    def weight(x: float) -> float:
        return math.exp(-a * (x * x - 1.0) ** 2 / th)

    reach = 1.0 + math.sqrt(40.0 * th / a) + 1.0
    left = integrate.quad(weight, -reach, -edge, points=[-1.0], limit=200)[0]
    middle = integrate.quad(weight, -edge, edge, limit=200)[0]
    right = integrate.quad(weight, edge, reach, points=[1.0], limit=200)[0]
    Z = left + middle + right
    return {"left": left / Z, "middle": middle / Z, "right": right / Z}


@dataclass(frozen=True, eq=False)
class SpinEnsembleResult:
    n: int
    outcomes: np.ndarray
    mean: float
    std_of_mean: float

    def __post_init__(self) -> None:
        if self.outcomes.shape != (self.n,):
            raise ValidationError("outcome count does not match n")
        if abs(self.mean) > 1.0:
            raise ValidationError("mean spin outside [-1, 1]")

    def thermal_errors(self, s_mean: float) -> np.ndarray:
        """|outcome - <sigma_3>| for each single reading."""
        return np.abs(self.outcomes - s_mean)


def stern_gerlach_ensemble(s_mean: float, N: int, seed: SeedLike) -> SpinEnsembleResult:
    """N binary spots (+1 / -1) whose expected mean is ``s_mean``."""
    if not -1.0 <= s_mean <= 1.0:
        raise ValueError("s_mean must lie in [-1, 1]")
    if N < 1:
        raise ValueError("N must be positive")
    draws = substream(seed).random(N)
    outcomes = np.where(draws < 0.5 * (1.0 + s_mean), 1, -1).astype(np.int64)
    outcomes.setflags(write=False)
    mean = int(outcomes.sum()) / N
    return SpinEnsembleResult(N, outcomes, mean, math.sqrt(1.0 - s_mean * s_mean) / math.sqrt(N))


def sg_pointer_tally(outcomes: Sequence[int]) -> float:
    o = np.asarray(outcomes)
    if o.size == 0:
        raise ValueError("no outcomes")
    if not np.all(np.abs(o) == 1):
        raise ValueError("outcomes must be +1 or -1")
    return int(o.sum()) / o.size


def replicate_mean_spread(s_mean: float, N: int, replicates: int, seed: int) -> np.ndarray:
    """Mean spin of ``replicates`` independent ensembles of size N."""
    return np.array([stern_gerlach_ensemble(s_mean, N, (seed, N, r)).mean for r in range(replicates)])


def scaling_slope(Ns: Sequence[int], spreads: Sequence[float]) -> float:
    """Least-squares slope of log(spread) against log(N)."""
    return float(np.polyfit(np.log(np.asarray(Ns, dtype=float)), np.log(np.asarray(spreads)), 1)[0])
