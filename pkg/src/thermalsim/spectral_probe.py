"""Probing a discrete spectrum with a damped, driven classical oscillator.

The probed system's q-expectation <A(t)> acts as the driving force.  It is a
finite sum of exponentials at the transition frequencies (E_k - E_j)/hbar, so
the oscillator's steady state and the short-time-averaged energy have closed
forms; peaks of the energy versus oscillator frequency sit at the transition
frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .quantum_core import DensityOperator, HermitianOperator, QuantumError, ValidationError

__all__ = [
    "DiscreteSpectrumSystem",
    "ForceSignal",
    "OscillatorParams",
    "ResonanceScan",
    "ResonanceError",
    "rydberg_ritz_frequencies",
    "heisenberg_signal",
    "force_decomposition",
    "steady_state_amplitudes",
    "steady_state_response",
    "mean_energy_scan",
    "time_averaged_energy",
    "recover_spectrum",
]

GROUPING_TOL = 1e-9


class ResonanceError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteSpectrumSystem:
    """Levels, state and probed quantity, all in the energy eigenbasis."""

    levels: np.ndarray
    rho: DensityOperator
    A: HermitianOperator
    hbar: float = 1.0

    def __post_init__(self) -> None:
        levels = np.array(self.levels, dtype=float)
        if levels.ndim != 1 or levels.size != self.rho.dim or self.rho.dim != self.A.dim:
            raise QuantumError("levels, rho and A must share one dimension")
        if np.any(np.diff(levels) <= 0):
            raise ValidationError("levels must be strictly ascending")
        if self.hbar <= 0:
            raise ValidationError("hbar must be positive")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @property
    def dim(self) -> int:
        return self.levels.size

    @property
    def hamiltonian(self) -> HermitianOperator:
        return HermitianOperator.diag(self.levels)


@dataclass(frozen=True, eq=False)
class ForceSignal:
    """F(t) = sum_l amplitudes[l] * exp(i * omegas[l] * t), omegas ascending."""

    omegas: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.omegas, dtype=float).reshape(-1)
        F = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if w.shape != F.shape:
            raise ValidationError("one amplitude per frequency required")
        if np.any(np.diff(w) <= 0):
            raise ValidationError("mode frequencies must be distinct and ascending")
        w.setflags(write=False)
        F.setflags(write=False)
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "amplitudes", F)

    @property
    def modes(self) -> list[tuple[float, complex]]:
        return [(float(w), complex(F)) for w, F in zip(self.omegas, self.amplitudes)]

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.exp(1j * np.multiply.outer(t, self.omegas)) @ self.amplitudes

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        """True if the mode set is closed under (w, F) -> (-w, conj F)."""
        for w, F in zip(self.omegas, self.amplitudes):
            j = int(np.argmin(np.abs(self.omegas + w)))
            if abs(self.omegas[j] + w) > tol or abs(self.amplitudes[j] - np.conj(F)) > tol:
                return False
        return True

    def scaled(self, s: float) -> ForceSignal:
        return ForceSignal(self.omegas, s * self.amplitudes)


@dataclass(frozen=True)
class OscillatorParams:
    mass: float
    damping: float

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ValidationError("oscillator mass must be positive")
        if self.damping < 0:
            raise ValidationError("damping must be non-negative")


@dataclass(frozen=True, eq=False)
class ResonanceScan:
    omegas: np.ndarray
    response: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.omegas, dtype=float)
        a = np.asarray(self.response, dtype=float)
        if w.shape != a.shape or w.ndim != 1:
            raise ValidationError("omegas and response must be equal-length vectors")
        if np.any(a < 0):
            raise ValidationError("response must be non-negative")

    def to_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.omegas.tolist(), self.response.tolist()))


def rydberg_ritz_frequencies(levels: Sequence[float], hbar: float = 1.0) -> np.ndarray:
    """Matrix of transition frequencies, entry [k, j] = (E_k - E_j) / hbar."""
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    E = np.asarray(levels, dtype=float)
    return np.subtract.outer(E, E) / hbar


def heisenberg_signal(sys: DiscreteSpectrumSystem, t: float) -> float:
    omega = rydberg_ritz_frequencies(sys.levels, sys.hbar)
    # sum_jk rho_jk * exp(i w_kj t) * A_kj
    z = complex(np.sum(sys.rho.matrix * (np.exp(1j * omega * t) * sys.A.matrix).T))
    if abs(z.imag) > 1e-10 * max(1.0, abs(z.real)):
        raise QuantumError(f"signal has imaginary residual {z.imag:.3e}")
    return float(z.real)


def force_decomposition(sys: DiscreteSpectrumSystem) -> ForceSignal:
    """Group the terms rho_jk A_kj by their frequency w_kj.

    Frequencies closer than 1e-9 are merged and their amplitudes summed.
    Modes whose merged amplitude vanishes are dropped.
    """
    omega = rydberg_ritz_frequencies(sys.levels, sys.hbar)
    weight = sys.rho.matrix.T * sys.A.matrix  # [k, j] -> rho_jk A_kj
    w = omega.ravel()
    F = weight.ravel()
    order = np.argsort(w, kind="stable")
    w, F = w[order], F[order]

    groups_w: list[float] = []
    groups_F: list[complex] = []
    start = 0
    for i in range(1, w.size + 1):
        if i == w.size or w[i] - w[i - 1] > GROUPING_TOL:
            groups_w.append(float(np.mean(w[start:i])))
            groups_F.append(complex(np.sum(F[start:i])))
            start = i
    gw = np.array(groups_w)
    gF = np.array(groups_F, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(F))) if F.size else 1.0)
    keep = np.abs(gF) > 1e-14 * scale
    return ForceSignal(gw[keep], gF[keep])


def steady_state_amplitudes(
    force: ForceSignal, osc: OscillatorParams, omega: float
) -> list[tuple[float, complex]]:
    """Mode amplitudes of the persistent solution of m q'' + c q' + m omega^2 q = F."""
    if omega <= 0:
        raise ValueError("oscillator frequency must be positive")
    w = force.omegas
    denom = osc.mass * (omega**2 - w**2) + 1j * osc.damping * w
    if np.any(denom == 0):
        bad = w[denom == 0]
        raise ResonanceError(f"undamped oscillator driven at its resonance (modes {bad.tolist()})")
    q = force.amplitudes / denom
    return [(float(a), complex(b)) for a, b in zip(w, q)]


def steady_state_response(force: ForceSignal, osc: OscillatorParams, omega: float, t) -> np.ndarray:
    """Steady-state displacement q(t) for the given oscillator frequency."""
    amps = steady_state_amplitudes(force, osc, omega)
    sig = ForceSignal(force.omegas, np.array([q for _, q in amps], dtype=complex))
    return sig(t)


def mean_energy_scan(force: ForceSignal, osc: OscillatorParams, omegas: Sequence[float]) -> ResonanceScan:
    """Sum over non-DC modes of |F_l|^2 / (m^2 (w^2 - w_l^2)^2 + c^2 w_l^2)."""
    if osc.damping <= 0:
        raise ResonanceError("a resonance scan requires positive damping")
    grid = np.asarray(omegas, dtype=float)
    if grid.ndim != 1 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("scan frequencies must be positive and ascending")
    ac = force.omegas != 0.0
    w_l = force.omegas[ac]
    F2 = np.abs(force.amplitudes[ac]) ** 2
    if w_l.size == 0:
        return ResonanceScan(grid, np.zeros_like(grid))
    m, c = osc.mass, osc.damping
    denom = m**2 * (grid[:, None] ** 2 - w_l[None, :] ** 2) ** 2 + c**2 * w_l[None, :] ** 2
    return ResonanceScan(grid, (F2[None, :] / denom).sum(axis=1))


def time_averaged_energy(
    force: ForceSignal, osc: OscillatorParams, omega: float, window: float, samples_per_period: int = 64
) -> float:
    """Numerical time average of |q(t)|^2 over [0, window], DC mode removed.

    Trapezoidal average of the steady-state response on a uniform time grid.
    This is the brute-force counterpart of ``mean_energy_scan``.
    """
    ac = ForceSignal(force.omegas[force.omegas != 0], force.amplitudes[force.omegas != 0])
    if ac.omegas.size == 0:
        return 0.0
    w_max = max(float(np.max(np.abs(ac.omegas))), omega)
    n = int(np.ceil(window * w_max / (2 * np.pi) * samples_per_period)) + 1
    t = np.linspace(0.0, window, n)
    q = steady_state_response(ac, osc, omega, t)
    return float(np.trapezoid(np.abs(q) ** 2, t) / window)


def recover_spectrum(scan: ResonanceScan, prominence: float) -> np.ndarray:
    """Peak frequencies of a scan, refined by a 3-point parabola.

    A peak's prominence is its height minus the higher of the two valleys
    separating it from the neighbouring peaks (or the scan ends).
    """
    if prominence <= 0:
        raise ValueError("prominence must be positive")
    w, a = scan.omegas, scan.response
    n = a.size
    if n < 3:
        return np.array([])
    # plateau-safe local maxima: strictly above the left, not below the right
    idx = [i for i in range(1, n - 1) if a[i] > a[i - 1] and a[i] >= a[i + 1]]
    peaks = []
    for pos, i in enumerate(idx):
        left_end = idx[pos - 1] if pos > 0 else 0
        right_end = idx[pos + 1] if pos + 1 < len(idx) else n - 1
        valley = max(a[left_end : i + 1].min(), a[i : right_end + 1].min())
        if a[i] - valley < prominence:
            continue
        y0, y1, y2 = a[i - 1], a[i], a[i + 1]
        curv = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / curv if curv != 0 else 0.0
        h_left, h_right = w[i] - w[i - 1], w[i + 1] - w[i]
        peaks.append(w[i] + shift * (h_right if shift > 0 else h_left))
    return np.array(sorted(peaks))
