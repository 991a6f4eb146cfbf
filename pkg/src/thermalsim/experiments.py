"""Experiment parameter schemas and runners used by the command line.

Each runner takes validated parameters, a seed and an output directory,
writes its artifacts and returns their paths.  Parameter models forbid
unknown keys and do not coerce strings into numbers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Callable, Iterable, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import born_emergence as born
from . import detectors as det
from . import ehrenfest as ehr
from . import spectral_probe as spec
from .quantum_core import DensityOperator, HermitianOperator, PureState


class Params(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class FieldError(ValueError):
    """A cross-field validation failure attributed to one parameter."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _domain_check(build: Callable[[], Any], field: str) -> Any:
    """Run a domain constructor at validation time, reporting failures as config errors."""
    try:
        return build()
    except (ValueError, ArithmeticError) as exc:
        raise FieldError(field, str(exc)) from None


class OperatorDoc(Params):
    dim: int = Field(ge=1)
    re: list[list[float]]
    im: Optional[list[list[float]]] = None

    def as_dict(self) -> dict:
        d = {"dim": self.dim, "re": self.re}
        if self.im is not None:
            d["im"] = self.im
        return d


class EhrenfestParams(Params):
    n_points: int = Field(1500, ge=16, le=6000)
    x_min: float = -2.0
    x_max: float = 2.0
    mass: float = Field(1.0, gt=0)
    hbar: float = Field(0.05, gt=0)
    potential: Literal["harmonic", "quartic", "free"] = "quartic"
    omega: float = Field(1.0, gt=0)
    strength: float = Field(1.0, gt=0)
    q0: float = 1.0
    p0: float = 0.0
    sigma: float = Field(0.15, gt=0)
    t_max: float = Field(0.2, gt=0)
    n_times: int = Field(129, ge=3, le=20000)
    third_derivative_bound: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def _check(self) -> EhrenfestParams:
        if not self.x_max > self.x_min:
            raise FieldError("x_max", "x_max must exceed x_min")
        if not self.x_min <= self.q0 <= self.x_max:
            raise FieldError("q0", "q0 must lie inside [x_min, x_max]")
        return self


class SpectrumParams(Params):
    levels: list[float] = Field(default_factory=lambda: [0.0, 1.0, 2.5], min_length=2, max_length=64)
    hbar: float = Field(1.0, gt=0)
    amplitudes: Optional[list[float]] = None
    rho: Optional[OperatorDoc] = None
    A: Optional[OperatorDoc] = None
    mass: float = Field(1.0, gt=0)
    damping: float = Field(0.02, gt=0)
    omega_min: float = Field(0.5, gt=0)
    omega_max: float = Field(3.0, gt=0)
    omega_step: float = Field(0.002, gt=0)
    prominence: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check(self) -> SpectrumParams:
        if self.amplitudes is not None and self.rho is not None:
            raise FieldError("amplitudes", "give either amplitudes or rho, not both")
        if self.amplitudes is not None and (len(self.amplitudes) != len(self.levels) or not any(self.amplitudes)):
            raise FieldError("amplitudes", "amplitudes must be a non-zero vector with one entry per level")
        if not self.omega_max > self.omega_min:
            raise FieldError("omega_max", "omega_max must exceed omega_min")
        if (self.omega_max - self.omega_min) / self.omega_step > 2_000_000:
            raise FieldError("omega_step", "omega grid too large")
        _domain_check(lambda: _spectrum_system(self), "rho" if self.rho is not None else "levels")
        return self


class EnvironmentParams(Params):
    growth_rate: float = Field(1.0, gt=0)
    noise_scale: float = Field(0.25, ge=0)
    noise_decay: float = Field(0.1, gt=0)
    coherence_scale: float = Field(1.0, ge=0)
    horizon: float = Field(200.0, gt=0)
    n_steps: int = Field(100, ge=2, le=100_000)


class QubitParams(Params):
    p: float = Field(0.5, ge=0, le=1)
    alpha_re: float = 0.0
    alpha_im: float = 0.0

    @model_validator(mode="after")
    def _check_qubit(self) -> QubitParams:
        _domain_check(lambda: _qubit(self), "alpha_re")
        return self


class BornParams(QubitParams):
    n_runs: int = Field(10_000, ge=1, le=10_000_000)
    threshold: float = Field(1.0, gt=0)
    model: EnvironmentParams = EnvironmentParams()
    dump_limit: int = Field(20, ge=0)


class BornUniverseParams(QubitParams):
    dim_env: int = Field(8, ge=2, le=128)
    coupling: float = Field(1.0, ge=0)
    hbar: float = Field(1.0, gt=0)
    t_max: float = Field(10.0, ge=0)
    n_times: int = Field(51, ge=1, le=10_000)


class LedgerParams(Params):
    values: list[float] = Field(default_factory=lambda: [6.57, 6.58], min_length=1)
    counts: list[int] = Field(default_factory=lambda: [20, 80], min_length=1)
    X: OperatorDoc = OperatorDoc(dim=2, re=[[6.578, 0.004], [0.004, 6.572]])
    rho: OperatorDoc = OperatorDoc(dim=2, re=[[1.0, 0.0], [0.0, 0.0]])

    @model_validator(mode="after")
    def _check(self) -> LedgerParams:
        if len(self.values) != len(self.counts):
            raise FieldError("counts", "values and counts must have equal length")
        _domain_check(lambda: det.MeasurementRecord(np.asarray(self.values), np.asarray(self.counts)), "counts")
        rho = _domain_check(lambda: DensityOperator.from_json(self.rho.as_dict()), "rho")
        X = _domain_check(lambda: HermitianOperator.from_json(self.X.as_dict()), "X")
        if rho.dim != X.dim:
            raise FieldError("X", "rho and X must have the same dim")
        return self


class BucketParams(Params):
    flow_rate: float = Field(0.05, gt=0)
    duration: float = Field(10.0, gt=0)
    bucket_size: float = Field(1.0, gt=0)
    n_seeds: int = Field(1000, ge=1, le=1_000_000)

    @model_validator(mode="after")
    def _check(self) -> BucketParams:
        if self.flow_rate * self.duration / self.bucket_size > det.MAX_BUCKET_MEAN:
            raise FieldError("flow_rate", "flow_rate * duration / bucket_size exceeds the 1e9 count guard")
        return self


class DoubleWellConfig(Params):
    barrier: float = Field(1.0, gt=0)
    theta: float = Field(0.05, ge=0)
    dt: float = Field(0.01, gt=0)
    n_steps: int = Field(100_000, ge=1, le=10_000_000)
    x0: float = Field(0.0, ge=-2.0, le=2.0)
    n_paths: int = Field(1, ge=1, le=10_000)

    @model_validator(mode="after")
    def _check(self) -> DoubleWellConfig:
        _domain_check(lambda: det.DoubleWellParams(self.barrier, self.theta, self.dt, self.n_steps), "dt")
        if self.n_paths * self.n_steps > 50_000_000:
            raise FieldError("n_paths", "n_paths * n_steps exceeds 5e7 samples")
        return self


class SternGerlachParams(Params):
    s_mean: float = Field(0.0, ge=-1, le=1)
    Ns: list[Annotated[int, Field(ge=1, le=10_000_000)]] = Field(default_factory=lambda: [100, 1000, 10000], min_length=1)
    replicates: int = Field(200, ge=2, le=100_000)


@dataclass(frozen=True)
class RunContext:
    seed: int
    out: Path
    threads: int = 1
    debug_dump: bool = False


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_json(path: Path, doc: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return "" if math.isnan(f) else repr(f)
    return str(v)


def _jsonable(doc: Any) -> Any:
    if isinstance(doc, dict):
        return {str(k): _jsonable(v) for k, v in doc.items()}
    if isinstance(doc, (list, tuple)):
        return [_jsonable(v) for v in doc]
    if isinstance(doc, np.ndarray):
        return _jsonable(doc.tolist())
    if isinstance(doc, (np.integer,)):
        return int(doc)
    if isinstance(doc, (float, np.floating)):
        f = float(doc)
        return None if not math.isfinite(f) else f
    return doc


def run_ehrenfest(params: EhrenfestParams, ctx: RunContext) -> list[Path]:
    mass = params.mass
    if params.potential == "harmonic":
        def V(x):
            return 0.5 * mass * params.omega**2 * x**2
        c3 = 0.0
    elif params.potential == "quartic":
        def V(x):
            return params.strength * x**4
        c3 = 24.0 * params.strength * max(abs(params.x_min), abs(params.x_max))
    else:
        def V(x):
            return np.zeros_like(x)
        c3 = 0.0
    C = params.third_derivative_bound if params.third_derivative_bound is not None else c3

    sys = ehr.GridSystem.from_function(V, params.n_points, params.x_min, params.x_max, mass, params.hbar)
    psi0 = ehr.gaussian_packet(sys, params.q0, params.p0, params.sigma)
    t = np.linspace(0.0, params.t_max, params.n_times)
    traj = ehr.quantum_expectation_trajectory(sys, psi0, t)
    residual, bound = ehr.classicality_deviation(traj, sys, C)
    res_full = [None, *residual.tolist(), None]
    bnd_full = [None, *bound.tolist(), None]

    paths = [
        write_csv(
            ctx.out / "trajectory.csv",
            ["t", "q_mean", "p_mean", "sigma_q", "sigma_p", "residual", "bound"],
            zip(traj.times, traj.q_mean, traj.p_mean, traj.sigma_q, traj.sigma_p, res_full, bnd_full),
        )
    ]
    summary = {
        "third_derivative_bound": C,
        "max_residual": float(residual.max()),
        "max_excess": float(np.max(residual - bound)),
        "ehrenfest_error": traj.ehrenfest_error,
        "min_uncertainty_product": float(traj.heisenberg_products.min()),
        "warnings": list(traj.warnings),
    }
    try:
        cl = ehr.classical_trajectory(sys, float(traj.q_mean[0]), float(traj.p_mean[0]), t)
        paths.append(write_csv(ctx.out / "classical.csv", ["t", "q", "p", "energy"], zip(cl.times, cl.q, cl.p, cl.energy)))
        summary["max_quantum_classical_gap"] = float(np.max(np.abs(cl.q - traj.q_mean)))
    except ehr.GridExitError as exc:
        summary["classical_exit_time"] = exc.time
    paths.append(write_json(ctx.out / "ehrenfest_summary.json", summary))
    return paths


def _spectrum_system(params: SpectrumParams) -> spec.DiscreteSpectrumSystem:
    n = len(params.levels)
    if params.rho is not None:
        rho = DensityOperator.from_json(params.rho.as_dict())
    else:
        amps = params.amplitudes if params.amplitudes is not None else [1.0] * n
        rho = DensityOperator.from_pure(PureState.normalized(amps))
    A = HermitianOperator.from_json(params.A.as_dict()) if params.A is not None else HermitianOperator(np.ones((n, n)) - np.eye(n))
    return spec.DiscreteSpectrumSystem(np.asarray(params.levels), rho, A, params.hbar)


def run_spectrum(params: SpectrumParams, ctx: RunContext) -> list[Path]:
    sys = _spectrum_system(params)
    force = spec.force_decomposition(sys)
    osc = spec.OscillatorParams(params.mass, params.damping)
    n = int(math.floor((params.omega_max - params.omega_min) / params.omega_step + 1e-9)) + 1
    grid = params.omega_min + params.omega_step * np.arange(n)
    scan = spec.mean_energy_scan(force, osc, grid)
    prom = params.prominence if params.prominence is not None else 0.01 * float(scan.response.max(initial=0.0))
    peaks = spec.recover_spectrum(scan, prom) if prom > 0 else np.array([])
    omega = spec.rydberg_ritz_frequencies(sys.levels, sys.hbar)
    expected = sorted({round(float(w), 12) for w in omega.ravel() if w > 0})
    return [
        write_csv(ctx.out / "scan.csv", ["omega", "response"], scan.to_rows()),
        write_json(ctx.out / "peaks.json", peaks.tolist()),
        write_json(
            ctx.out / "spectrum_summary.json",
            {"rydberg_ritz_positive": expected, "modes": [[w, F.real, F.imag] for w, F in force.modes], "prominence": prom},
        ),
    ]


def _qubit(params: QubitParams) -> born.QubitState:
    return born.validate_qubit(params.p, complex(params.alpha_re, params.alpha_im))


def run_born(params: BornParams, ctx: RunContext) -> list[Path]:
    qubit = _qubit(params)
    model = born.EnvironmentTrajectoryModel(**params.model.model_dump())
    keep = params.dump_limit if ctx.debug_dump else 0
    result = born.born_statistics(qubit, model, params.n_runs, params.threshold, ctx.seed, workers=ctx.threads, keep_trajectories=keep)
    tally, kept = result if keep else (result, [])
    paths = [write_json(ctx.out / "tally.json", tally.to_json(qubit))]
    for run, traj in kept:
        paths.append(
            write_csv(
                ctx.out / "trajectories" / f"run_{run:06d}.csv",
                ["t", "xbar", "u_hat", "v_re", "v_im"],
                zip(traj.times, traj.xbar, traj.u_hat, traj.v_hat.real, traj.v_hat.imag),
            )
        )
    return paths


def run_born_universe(params: BornUniverseParams, ctx: RunContext) -> list[Path]:
    qubit = _qubit(params)
    universe = born.SmallUniverse.random(params.dim_env, params.coupling, ctx.seed, params.hbar)
    t = np.linspace(0.0, params.t_max, params.n_times)
    diag = born.small_universe_diagnostics(universe, t)
    xbar = born.pointer_expectation(qubit, diag.x, diag.y, diag.z)
    direct = np.array([born.direct_pointer_expectation(universe, qubit, float(ti)) for ti in t])
    rows = zip(t, diag.x, diag.y, diag.z.real, diag.z.imag, xbar, direct)
    return [
        write_csv(ctx.out / "universe.csv", ["t", "x_hat", "y_hat", "z_re", "z_im", "xbar", "xbar_direct"], rows),
        write_json(ctx.out / "universe_summary.json", {"max_abs_deviation": float(np.max(np.abs(xbar - direct)))}),
    ]


def run_ledger(params: LedgerParams, ctx: RunContext) -> list[Path]:
    if len(params.values) != len(params.counts):
        raise ValueError("values and counts must have equal length")
    record = det.MeasurementRecord(np.asarray(params.values), np.asarray(params.counts))
    mean, std, stderr = det.summarize(record)
    obs = np.repeat(record.values, record.counts)
    ledger = det.dual_error_ledger(obs, DensityOperator.from_json(params.rho.as_dict()), HermitianOperator.from_json(params.X.as_dict()))
    summary = {
        "mean": mean,
        "std": std,
        "std_of_mean": stderr,
        "thermal_true_value": ledger.thermal_true_value,
        "eigenvalues": ledger.born_eigenvalues,
        "mean_thermal_error": ledger.mean_thermal_error,
        "mean_born_error": ledger.mean_born_error,
        "all_born_within_display": bool(np.all(ledger.born_within_display())),
    }
    return [
        write_csv(ctx.out / "ledger.csv", ["observation", "thermal_error", "born_error"], ledger.rows()),
        write_json(ctx.out / "ledger_summary.json", summary),
    ]


def run_bucket(params: BucketParams, ctx: RunContext) -> list[Path]:
    rows = []
    for k in range(params.n_seeds):
        count, rate = det.bucket_count(params.flow_rate, params.duration, params.bucket_size, (ctx.seed, k))
        rows.append((k, count, rate))
    rates = np.array([r[2] for r in rows])
    summary = {
        "flow_rate": params.flow_rate,
        "lattice_step": params.bucket_size / params.duration,
        "mean_rate_estimate": float(rates.mean()),
        "relative_error_of_mean": float(abs(rates.mean() - params.flow_rate) / params.flow_rate),
    }
    return [
        write_csv(ctx.out / "buckets.csv", ["seed", "count", "rate_estimate"], rows),
        write_json(ctx.out / "bucket_summary.json", summary),
    ]


def run_doublewell(params: DoubleWellConfig, ctx: RunContext) -> list[Path]:
    dw = det.DoubleWellParams(params.barrier, params.theta, params.dt, params.n_steps)
    if params.n_paths == 1:
        paths_x = det.double_well_pointer(dw, params.x0, (ctx.seed, 0))[None, :]
    else:
        paths_x = det.double_well_ensemble(dw, params.n_paths, params.x0, ctx.seed)
    summary = {
        "occupancy": det.occupancy_fractions(paths_x[:, 1:]),
        "boltzmann": det.boltzmann_occupancy(dw),
        "n_paths": params.n_paths,
        "final_positions_positive": int(np.sum(paths_x[:, -1] > 0)),
    }
    return [
        write_csv(ctx.out / "doublewell_path.csv", ["step", "x"], enumerate(paths_x[0].tolist())),
        write_json(ctx.out / "doublewell_summary.json", summary),
    ]


def run_sg(params: SternGerlachParams, ctx: RunContext) -> list[Path]:
    rows = []
    spreads = []
    for N in params.Ns:
        means = det.replicate_mean_spread(params.s_mean, N, params.replicates, ctx.seed)
        spreads.append(float(np.std(means)))
        rows.extend((N, r, m) for r, m in enumerate(means.tolist()))
    summary = {
        "Ns": params.Ns,
        "replicate_std_of_mean": spreads,
        "predicted_std_of_mean": [math.sqrt(1 - params.s_mean**2) / math.sqrt(N) for N in params.Ns],
    }
    if len(set(params.Ns)) >= 2 and all(s > 0 for s in spreads):
        summary["slope"] = det.scaling_slope(params.Ns, spreads)
    return [
        write_csv(ctx.out / "ensemble.csv", ["N", "replicate", "mean"], rows),
        write_json(ctx.out / "sg_summary.json", summary),
    ]


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    params: type[Params]
    runner: Callable[[Any, RunContext], list[Path]]


EXPERIMENTS: dict[str, Experiment] = {
    e.name: e
    for e in [
        Experiment("born", "Born statistics of pointer outcomes from the stochastic environment model", BornParams, run_born),
        Experiment("born-universe", "Reduced pointer matrix of an exact qubit-plus-environment universe", BornUniverseParams, run_born_universe),
        Experiment("detectors-bucket", "Quantized rate estimates from a Poisson bucket counter", BucketParams, run_bucket),
        Experiment("detectors-doublewell", "Bistable Langevin pointer in a double-well potential", DoubleWellConfig, run_doublewell),
        Experiment("detectors-ledger", "Thermal versus Born error bookkeeping for a 3-digit instrument", LedgerParams, run_ledger),
        Experiment("detectors-sg", "Stern-Gerlach mean-spin ensembles and their N^-1/2 spread", SternGerlachParams, run_sg),
        Experiment("ehrenfest", "Grid quantum dynamics of <q> against Newton's law and its uncertainty-based bound", EhrenfestParams, run_ehrenfest),
        Experiment("spectrum", "Resonance scan of a driven damped oscillator and recovery of transition frequencies", SpectrumParams, run_spectrum),
    ]
}
