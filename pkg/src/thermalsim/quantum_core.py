"""Finite-dimensional quantum states and operators.

All values are immutable numpy-backed dataclasses; every operation is a pure
function of its arguments.  Tensor products use the convention that the
system index is the outer (slow) index, i.e. ``kron(A_system, B_env)``.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, replace
from typing import Any, Iterator

import numpy as np

__all__ = [
    "Tolerances",
    "tolerances",
    "override_tolerances",
    "QuantumError",
    "ValidationError",
    "DimensionError",
    "ConvergenceError",
    "HermitianOperator",
    "DensityOperator",
    "PureState",
    "ProductSplit",
    "q_expectation",
    "uncertainty",
    "tensor",
    "partial_trace_env",
    "evolve",
    "propagator",
    "eigendecompose",
]


@dataclass(frozen=True)
class Tolerances:
    herm: float = 1e-12
    trace: float = 1e-10
    psd: float = 1e-10
    norm: float = 1e-12
    imag: float = 1e-10


_TOLERANCES: contextvars.ContextVar[Tolerances] = contextvars.ContextVar(
    "thermalsim_tolerances", default=Tolerances()
)


def tolerances() -> Tolerances:
    """Return the validation tolerances active in the current context."""
    return _TOLERANCES.get()


@contextlib.contextmanager
def override_tolerances(**changes: float) -> Iterator[Tolerances]:
    """Temporarily replace validation tolerances (the single override point)."""
    token = _TOLERANCES.set(replace(_TOLERANCES.get(), **changes))
    try:
        yield _TOLERANCES.get()
    finally:
        _TOLERANCES.reset(token)


class QuantumError(ValueError):
    """Base class for invalid quantum objects or operations."""


class ValidationError(QuantumError):
    """An invariant of a state or operator is violated.

    ``margin`` is the size of the violation in the units of the checked
    quantity (e.g. how far the trace is from 1).
    """

    def __init__(self, message: str, margin: float = float("nan")):
        super().__init__(message)
        self.margin = margin


class DimensionError(QuantumError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual norm {residual:.3e})")
        self.residual = residual


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


def _square(matrix: Any) -> np.ndarray:
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise DimensionError(f"expected a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    return m


def _hermitize(m: np.ndarray, what: str) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(m))))
    dev = float(np.max(np.abs(m - m.conj().T)))
    if dev > tolerances().herm * scale:
        raise ValidationError(f"{what} is not Hermitian (max |A - A^H| = {dev:.3e})", dev)
    return 0.5 * (m + m.conj().T)


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """A Hermitian matrix representing a physical quantity."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = _hermitize(_square(self.matrix), "operator")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int) -> HermitianOperator:
        return cls(np.eye(dim))

    @classmethod
    def diag(cls, values) -> HermitianOperator:
        return cls(np.diag(np.asarray(values, dtype=float)))

    def __add__(self, other: HermitianOperator) -> HermitianOperator:
        _check_dims(self.dim, other.dim)
        return HermitianOperator(self.matrix + other.matrix)

    def scale(self, s: float) -> HermitianOperator:
        return HermitianOperator(float(s) * self.matrix)

    def to_json(self) -> dict:
        return _matrix_to_json(self.matrix)

    @classmethod
    def from_json(cls, doc: dict) -> HermitianOperator:
        return cls(_matrix_from_json(doc))


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, positive-semidefinite, unit-trace matrix."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        tol = tolerances()
        m = _hermitize(_square(self.matrix), "density operator")
        tr = float(np.trace(m).real)
        if abs(tr - 1.0) > tol.trace:
            raise ValidationError(f"trace is {tr!r}, expected 1", abs(tr - 1.0))
        lam_min = float(np.linalg.eigvalsh(m)[0])
        if lam_min < -tol.psd:
            raise ValidationError(
                f"density operator not positive semidefinite (smallest eigenvalue {lam_min:.3e})",
                -lam_min,
            )
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_pure(cls, psi: PureState | np.ndarray) -> DensityOperator:
        v = psi.amplitudes if isinstance(psi, PureState) else PureState(psi).amplitudes
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> DensityOperator:
        return cls(np.eye(dim) / dim)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def to_json(self) -> dict:
        return _matrix_to_json(self.matrix)

    @classmethod
    def from_json(cls, doc: dict) -> DensityOperator:
        return cls(_matrix_from_json(doc))


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.amplitudes, dtype=complex)
        if v.ndim != 1 or v.size == 0:
            raise DimensionError(f"expected a non-empty vector, got shape {v.shape}")
        n = float(np.linalg.norm(v))
        if abs(n - 1.0) > tolerances().norm:
            raise ValidationError(f"state vector has norm {n!r}, expected 1", abs(n - 1.0))
        object.__setattr__(self, "amplitudes", _frozen(v))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @classmethod
    def normalized(cls, amplitudes) -> PureState:
        v = np.asarray(amplitudes, dtype=complex)
        return cls(v / np.linalg.norm(v))


@dataclass(frozen=True)
class ProductSplit:
    dim_system: int
    dim_env: int

    def __post_init__(self) -> None:
        if self.dim_system < 1 or self.dim_env < 1:
            raise DimensionError("subsystem dimensions must be positive")

    @property
    def dim(self) -> int:
        return self.dim_system * self.dim_env


def _matrix_to_json(m: np.ndarray) -> dict:
    return {"dim": int(m.shape[0]), "re": m.real.tolist(), "im": m.imag.tolist()}


def _matrix_from_json(doc: dict) -> np.ndarray:
    try:
        dim = int(doc["dim"])
        re = np.asarray(doc["re"], dtype=float)
        im = np.asarray(doc.get("im", np.zeros_like(re)), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed operator document: {exc}") from exc
    if re.shape != (dim, dim) or im.shape != (dim, dim):
        raise DimensionError(f"operator document declares dim {dim} but holds {re.shape}/{im.shape}")
    return re + 1j * im


def _check_dims(a: int, b: int) -> None:
    if a != b:
        raise DimensionError(f"dimension mismatch: {a} vs {b}")


def _real(z: complex, what: str) -> float:
    if abs(z.imag) > tolerances().imag * max(1.0, abs(z.real)):
        raise QuantumError(f"{what} has imaginary residual {z.imag:.3e}")
    return float(z.real)


def q_expectation(rho: DensityOperator, A: HermitianOperator) -> float:
    """Return ``Tr(rho A)``."""
    _check_dims(rho.dim, A.dim)
    # Tr(rho A) = sum_jk rho_jk A_kj
    return _real(complex(np.sum(rho.matrix * A.matrix.T)), "q-expectation")


def uncertainty(rho: DensityOperator, A: HermitianOperator) -> float:
    _check_dims(rho.dim, A.dim)
    mean = q_expectation(rho, A)
    # centre first: <A^2> - <A>^2 cancels catastrophically when sigma << |<A>|
    B = A.matrix - mean * np.eye(A.dim)
    var = _real(complex(np.sum(rho.matrix * (B @ B).T)), "variance")
    return float(np.sqrt(max(0.0, var)))


def tensor(A: HermitianOperator, B: HermitianOperator) -> HermitianOperator:
    return HermitianOperator(np.kron(A.matrix, B.matrix))


def partial_trace_env(rho: DensityOperator, split: ProductSplit) -> DensityOperator:
    """Trace out the environment factor of a composite state."""
    if rho.dim != split.dim:
        raise DimensionError(
            f"state of dim {rho.dim} does not factor as {split.dim_system} x {split.dim_env}"
        )
    ds, de = split.dim_system, split.dim_env
    r = rho.matrix.reshape(ds, de, ds, de)
    return DensityOperator(np.einsum("iaja->ij", r))


def eigendecompose(A: HermitianOperator) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and a unitary matrix of eigenvectors.

    Raises ConvergenceError if LAPACK fails or the returned decomposition does
    not reproduce ``A`` to 1e-9 (relative to ``max(1, |A|)``).
    """
    try:
        lam, V = np.linalg.eigh(A.matrix)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigendecomposition failed: {exc}", float("inf")) from exc
    scale = max(1.0, float(np.max(np.abs(A.matrix))))
    resid = float(np.max(np.abs(A.matrix @ V - V * lam))) / scale
    if resid > 1e-9:
        raise ConvergenceError("eigendecomposition inaccurate", resid)
    return lam, V


def propagator(H: HermitianOperator, t: float, hbar: float = 1.0) -> np.ndarray:
    """Unitary ``exp(-i t H / hbar)`` built from the eigendecomposition of H."""
    if hbar <= 0:
        raise QuantumError("hbar must be positive")
    lam, V = eigendecompose(H)
    return (V * np.exp(-1j * t * lam / hbar)) @ V.conj().T


def evolve(rho: DensityOperator, H: HermitianOperator, t: float, hbar: float = 1.0) -> DensityOperator:
    _check_dims(rho.dim, H.dim)
    if t == 0:
        return rho
    U = propagator(H, t, hbar)
    return DensityOperator(U @ rho.matrix @ U.conj().T)
