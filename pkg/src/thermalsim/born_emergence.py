"""Binary pointer outcomes from a qubit coupled to an environment.

Two routes feed the same pointer formula

    Xbar_t = p * x_t + (1 - p) * y_t + 2 * Re(alpha * z_t)

where (x_t, y_t, z_t) are entries of the reduced pointer matrix:

* a stochastic environment model whose ratio x/(x - y) converges to a
  uniform random variable, used for Monte Carlo outcome statistics;
* an exact small universe (qubit tensor a finite environment) where the
  reduced pointer matrix is computed from the full unitary.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from ._rng import SeedLike, key_path, substream
from .quantum_core import (
    DensityOperator,
    DimensionError,
    HermitianOperator,
    ValidationError,
    propagator,
    q_expectation,
    tensor,
)

__all__ = [
    "QubitState",
    "EnvironmentTrajectoryModel",
    "EnvironmentSample",
    "PointerTrajectory",
    "Outcome",
    "OutcomeTally",
    "SmallUniverse",
    "ModelInconsistentError",
    "validate_qubit",
    "sample_environment",
    "pointer_expectation",
    "factored_pointer_expectation",
    "pointer_trajectory",
    "classify_outcome",
    "born_statistics",
    "plus_frequency_interval",
    "reduced_pointer_matrix",
    "direct_pointer_expectation",
    "small_universe_diagnostics",
]

NOISE_CLIP = 3.0
MAX_REJECT_FRACTION = 0.01
UNDECIDED_WARN_FRACTION = 0.05
RUN_BLOCK = 256


class ModelInconsistentError(ValueError):
    pass


@dataclass(frozen=True)
class QubitState:
    p: float
    alpha: complex = 0j

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            margin = max(-self.p, self.p - 1.0)
            raise ValidationError(f"p = {self.p} outside [0, 1]", margin)
        limit = math.sqrt(self.p * (1.0 - self.p))
        excess = abs(self.alpha) - limit
        if excess > 1e-12:
            raise ValidationError(f"|alpha| = {abs(self.alpha):.6g} exceeds sqrt(p(1-p)) = {limit:.6g}", excess)
        object.__setattr__(self, "alpha", complex(self.alpha))

    @property
    def density(self) -> DensityOperator:
        a = self.alpha
        return DensityOperator([[self.p, a.conjugate()], [a, 1.0 - self.p]])


def validate_qubit(p: float, alpha: complex = 0j) -> QubitState:
    return QubitState(float(p), complex(alpha))


@dataclass(frozen=True)
class EnvironmentTrajectoryModel:
    """Parameters of the stochastic pointer-matrix generator.

    x(t) =  u g t (1 + eta e^{-gamma t} xi1)
    y(t) = -(1-u) g t (1 + eta e^{-gamma t} xi2)
    z(t) =  zeta e^{-gamma t} (xi3 + i xi4)

    with u ~ U(0, 1) drawn once per realization and xi standard normals
    clipped at +-3.
    """

    growth_rate: float = 1.0
    noise_scale: float = 0.25
    noise_decay: float = 0.1
    coherence_scale: float = 1.0
    horizon: float = 200.0
    n_steps: int = 100

    def __post_init__(self) -> None:
        if self.growth_rate <= 0 or self.noise_decay <= 0 or self.horizon <= 0:
            raise ValidationError("growth_rate, noise_decay and horizon must be positive")
        if self.noise_scale < 0 or self.coherence_scale < 0:
            raise ValidationError("noise_scale and coherence_scale must be non-negative")
        if self.n_steps < 2:
            raise ValidationError("n_steps must be at least 2")

    @property
    def times(self) -> np.ndarray:
        return self.horizon * np.arange(1, self.n_steps + 1) / self.n_steps


@dataclass(frozen=True, eq=False)
class EnvironmentSample:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u: float
    rejections: int = 0


@dataclass(frozen=True, eq=False)
class PointerTrajectory:
    times: np.ndarray
    xbar: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray

    def __post_init__(self) -> None:
        if not (self.times.shape == self.xbar.shape == self.u_hat.shape == self.v_hat.shape):
            raise ValidationError("pointer trajectory arrays must have equal lengths")


class Outcome(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"
    UNDECIDED = "undecided"


@dataclass(frozen=True, eq=False)
class OutcomeTally:
    """Outcome counts plus the diagnostics gathered while producing them.

    ``final_u`` holds u_hat at the horizon for every run (run order);
    ``mean_pointer_matrix`` is the empirical mean of the pointer matrix at the
    horizon, i.e. the preparation-averaged effective matrix.
    """

    n_plus: int
    n_minus: int
    n_undecided: int
    final_u: np.ndarray = field(default_factory=lambda: np.empty(0))
    mean_pointer_matrix: np.ndarray = field(default_factory=lambda: np.zeros((2, 2), dtype=complex))
    warnings: tuple[str, ...] = ()

    @property
    def n_total(self) -> int:
        return self.n_plus + self.n_minus + self.n_undecided

    @property
    def n_decided(self) -> int:
        return self.n_plus + self.n_minus

    @property
    def plus_fraction(self) -> float:
        """Plus frequency among decided runs."""
        return self.n_plus / self.n_decided if self.n_decided else float("nan")

    @property
    def undecided_fraction(self) -> float:
        return self.n_undecided / self.n_total if self.n_total else 0.0

    @property
    def u_ks_statistic(self) -> float:
        if self.final_u.size == 0:
            return float("nan")
        return float(stats.kstest(self.final_u, "uniform").statistic)

    def merge(self, other: OutcomeTally) -> OutcomeTally:
        n_self, n_other = self.n_total, other.n_total
        total = n_self + n_other
        mean = (
            (self.mean_pointer_matrix * n_self + other.mean_pointer_matrix * n_other) / total
            if total
            else self.mean_pointer_matrix
        )
        return OutcomeTally(
            self.n_plus + other.n_plus,
            self.n_minus + other.n_minus,
            self.n_undecided + other.n_undecided,
            np.concatenate([self.final_u, other.final_u]),
            mean,
            self.warnings + tuple(w for w in other.warnings if w not in self.warnings),
        )

    def to_json(self, qubit: QubitState | None = None) -> dict:
        doc: dict = {}
        if qubit is not None:
            doc.update(p=qubit.p, alpha_re=qubit.alpha.real, alpha_im=qubit.alpha.imag)
        doc.update(
            n_plus=self.n_plus,
            n_minus=self.n_minus,
            n_undecided=self.n_undecided,
            n_total=self.n_total,
            plus_fraction=self.plus_fraction,
            u_ks_statistic=self.u_ks_statistic,
            x_eff=float(self.mean_pointer_matrix[0, 0].real),
            y_eff=float(self.mean_pointer_matrix[1, 1].real),
            z_eff_re=float(self.mean_pointer_matrix[0, 1].real),
            z_eff_im=float(self.mean_pointer_matrix[0, 1].imag),
            warnings=list(self.warnings),
        )
        return doc


def sample_environment(model: EnvironmentTrajectoryModel, seed: SeedLike) -> EnvironmentSample:
    """Draw one realization of (x, y, z) on the model's time grid.

    Steps that would give x <= 0 or y >= 0 are redrawn; more than 1% of
    redrawn steps means the noise scale is inconsistent with the sign
    constraint and raises ModelInconsistentError.
    """
    rng = substream(seed)
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    t = model.times
    n = t.size
    g, eta = model.growth_rate, model.noise_scale
    decay = np.exp(-model.noise_decay * t)
    xi = np.clip(rng.standard_normal((4, n)), -NOISE_CLIP, NOISE_CLIP)

    fx = 1.0 + eta * decay * xi[0]
    fy = 1.0 + eta * decay * xi[1]
    rejections = 0
    limit = MAX_REJECT_FRACTION * n
    bad = (fx <= 0) | (fy <= 0)
    while bad.any():
        rejections += int(bad.sum())
        if rejections > limit:
            raise ModelInconsistentError(
                f"{rejections} of {n} steps violated x > 0 > y; reduce noise_scale"
            )
        redraw = np.clip(rng.standard_normal((2, int(bad.sum()))), -NOISE_CLIP, NOISE_CLIP)
        fx[bad] = 1.0 + eta * decay[bad] * redraw[0]
        fy[bad] = 1.0 + eta * decay[bad] * redraw[1]
        bad = (fx <= 0) | (fy <= 0)

    x = u * g * t * fx
    y = -(1.0 - u) * g * t * fy
    z = model.coherence_scale * decay * (xi[2] + 1j * xi[3])
    for a in (t, x, y, z):
        a.setflags(write=False)
    return EnvironmentSample(t, x, y, z, float(u), rejections)


def pointer_expectation(qubit: QubitState, x, y, z):
    """Pointer q-expectation from the entries of the reduced pointer matrix.

    ``z`` is the entry multiplying ``alpha``, i.e. X^S[0, 1].  Accepts scalars
    or equal-shape arrays.
    """
    p, a = qubit.p, qubit.alpha
    return p * np.asarray(x) + (1.0 - p) * np.asarray(y) + 2.0 * np.real(a * np.asarray(z))


def factored_pointer_expectation(qubit: QubitState, x, y, z):
    """Same quantity written as x (1 - (1-p)/u_hat + 2 Re(alpha v_hat))."""
    x = np.asarray(x, dtype=float)
    u_hat = x / (x - np.asarray(y))
    v_hat = np.asarray(z) / x
    return x * (1.0 - (1.0 - qubit.p) / u_hat + 2.0 * np.real(qubit.alpha * v_hat))


def pointer_trajectory(qubit: QubitState, times, x, y, z) -> PointerTrajectory:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_hat = x / (x - y)
        v_hat = z / x
    return PointerTrajectory(np.asarray(times, dtype=float), pointer_expectation(qubit, x, y, z), u_hat, v_hat)


def classify_outcome(traj: PointerTrajectory, threshold: float) -> Outcome:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    final = traj.xbar[-1]
    if final > threshold:
        return Outcome.PLUS
    if final < -threshold:
        return Outcome.MINUS
    return Outcome.UNDECIDED


def _tally_chunk(
    qubit: QubitState,
    model: EnvironmentTrajectoryModel,
    runs: range,
    threshold: float,
    seed: tuple[int, ...],
    keep: int,
) -> tuple[OutcomeTally, list[tuple[int, PointerTrajectory]]]:
    counts = {o: 0 for o in Outcome}
    final_u = np.empty(len(runs))
    acc = np.zeros((2, 2), dtype=complex)
    kept = []
    for i, run in enumerate(runs):
        s = sample_environment(model, (*seed, run))
        traj = pointer_trajectory(qubit, s.times, s.x, s.y, s.z)
        counts[classify_outcome(traj, threshold)] += 1
        final_u[i] = traj.u_hat[-1]
        acc += [[s.x[-1], s.z[-1]], [np.conj(s.z[-1]), s.y[-1]]]
        if run < keep:
            kept.append((run, traj))
    mean = acc / len(runs) if len(runs) else acc
    tally = OutcomeTally(counts[Outcome.PLUS], counts[Outcome.MINUS], counts[Outcome.UNDECIDED], final_u, mean)
    return tally, kept


def born_statistics(
    qubit: QubitState,
    model: EnvironmentTrajectoryModel,
    n_runs: int,
    threshold: float,
    seed: SeedLike,
    workers: int = 1,
    keep_trajectories: int = 0,
) -> OutcomeTally | tuple[OutcomeTally, list[tuple[int, PointerTrajectory]]]:
    """Monte Carlo tally of pointer outcomes over independent realizations.

    Run ``i`` uses the random stream keyed by ``(seed, i)``, so the tally does
    not depend on ``workers``.  When ``keep_trajectories`` is positive the
    first that many pointer trajectories are returned alongside the tally.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    base = key_path(seed)
    # fixed blocks merged in order keep floating-point sums independent of ``workers``
    chunks = [range(a, min(a + RUN_BLOCK, n_runs)) for a in range(0, n_runs, RUN_BLOCK)]
    workers = max(1, min(int(workers), len(chunks)))
    if workers == 1:
        results = [_tally_chunk(qubit, model, r, threshold, base, keep_trajectories) for r in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda r: _tally_chunk(qubit, model, r, threshold, base, keep_trajectories), chunks)
            )
    tally = results[0][0]
    kept = list(results[0][1])
    for t, k in results[1:]:
        tally = tally.merge(t)
        kept.extend(k)
    if tally.undecided_fraction > UNDECIDED_WARN_FRACTION:
        tally = OutcomeTally(
            tally.n_plus,
            tally.n_minus,
            tally.n_undecided,
            tally.final_u,
            tally.mean_pointer_matrix,
            tally.warnings
            + (f"{tally.undecided_fraction:.1%} of runs undecided at the horizon; raise horizon or lower threshold",),
        )
    if keep_trajectories > 0:
        return tally, kept
    return tally


def plus_frequency_interval(p: float, n: int, coverage: float = 0.997) -> tuple[float, float]:
    """Central binomial acceptance interval for the Plus frequency at n trials."""
    lo = stats.binom.ppf((1 - coverage) / 2, n, p)
    hi = stats.binom.ppf(1 - (1 - coverage) / 2, n, p)
    return float(lo) / n, float(hi) / n


@dataclass(frozen=True, eq=False)
class SmallUniverse:
    """A qubit tensor a finite environment, with system as the outer factor."""

    dim_env: int
    H_universe: HermitianOperator
    rho_env: DensityOperator
    X_env: HermitianOperator
    hbar: float = 1.0

    def __post_init__(self) -> None:
        if self.dim_env < 2:
            raise DimensionError("environment dimension must be at least 2")
        if self.H_universe.dim != 2 * self.dim_env:
            raise DimensionError(f"universe Hamiltonian must have dim {2 * self.dim_env}")
        if self.rho_env.dim != self.dim_env or self.X_env.dim != self.dim_env:
            raise DimensionError("environment state and pointer must have dim_env")
        if self.hbar <= 0:
            raise ValidationError("hbar must be positive")

    @classmethod
    def random(cls, dim_env: int = 8, coupling: float = 1.0, seed: SeedLike = 0, hbar: float = 1.0) -> SmallUniverse:
        """Gaussian-Hermitian system, environment and interaction terms."""
        rng = substream(seed)

        def gue(n: int) -> np.ndarray:
            g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            return (g + g.conj().T) / (2.0 * math.sqrt(n))

        H = (
            np.kron(gue(2), np.eye(dim_env))
            + np.kron(np.eye(2), gue(dim_env))
            + coupling * gue(2 * dim_env)
        )
        G = rng.standard_normal((dim_env, dim_env)) + 1j * rng.standard_normal((dim_env, dim_env))
        rho = G @ G.conj().T
        rho /= np.trace(rho).real
        return cls(dim_env, HermitianOperator(H), DensityOperator(rho), HermitianOperator(gue(dim_env)), hbar)

    @classmethod
    def decoupled(cls, H_system: HermitianOperator, rho_env: DensityOperator, X_env: HermitianOperator, hbar: float = 1.0) -> SmallUniverse:
        d = rho_env.dim
        return cls(d, tensor(H_system, HermitianOperator.identity(d)), rho_env, X_env, hbar)


def reduced_pointer_matrix(universe: SmallUniverse, t: float) -> HermitianOperator:
    """X^S(t)[j, k] = sum_l Tr_E(rho_E U_lj(t)^H X_E U_lk(t))."""
    d = universe.dim_env
    U = propagator(universe.H_universe, t, universe.hbar)
    blocks = U.reshape(2, d, 2, d).transpose(0, 2, 1, 3)  # blocks[l, k] = U_lk
    rho, X = universe.rho_env.matrix, universe.X_env.matrix
    out = np.zeros((2, 2), dtype=complex)
    for j in range(2):
        for k in range(2):
            out[j, k] = sum(np.trace(rho @ blocks[l, j].conj().T @ X @ blocks[l, k]) for l in range(2))
    return HermitianOperator(out)


def direct_pointer_expectation(universe: SmallUniverse, qubit: QubitState, t: float) -> float:
    """Tr[(rho_S x rho_E) U^H (1 x X_E) U] computed on the full universe."""
    U = propagator(universe.H_universe, t, universe.hbar)
    rho0 = np.kron(qubit.density.matrix, universe.rho_env.matrix)
    X = np.kron(np.eye(2), universe.X_env.matrix)
    rho_t = DensityOperator(U @ rho0 @ U.conj().T)
    return q_expectation(rho_t, HermitianOperator(X))


def small_universe_diagnostics(universe: SmallUniverse, t_grid: Sequence[float]) -> EnvironmentSample:
    """Pointer-matrix entries (x, y, z) along a time grid.

    x = X^S[0, 0], y = X^S[1, 1] and z = X^S[0, 1], the entry that
    multiplies alpha in the pointer formula.
    """
    t = np.asarray(t_grid, dtype=float)
    x = np.empty(t.size)
    y = np.empty(t.size)
    z = np.empty(t.size, dtype=complex)
    for i, ti in enumerate(t):
        XS = reduced_pointer_matrix(universe, float(ti)).matrix
        x[i], y[i], z[i] = XS[0, 0].real, XS[1, 1].real, XS[0, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = float(x[-1] / (x[-1] - y[-1])) if t.size else float("nan")
    return EnvironmentSample(t, x, y, z, u)
