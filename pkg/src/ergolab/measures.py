"""Empirical invariant measures and their structural diagnostics.

Occupation measures (time averages of one long path) and ensemble snapshot
measures (many paths at a fixed time) both estimate the invariant law.
Diagnostics: the weak adjoint identity (the generator integrates to zero
against the measure), tail-mass tightness, per-coordinate Kolmogorov-Smirnov
and moment distances between measures, and the rho-sweep convergence study
of the regularized models toward the degenerate one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Ensemble, SimConfig, Trajectory, simulate_path
from .fields import EnvelopedField, PolyField, markov_gen_many
from .models import DiffusionModel, DriftSpec, build_model, regularize_model


@dataclass
class EmpiricalMeasure:
    """Weighted sample cloud.  Weights are renormalized to sum to one at
    construction; occupation samples keep their time order (batch-means
    standard errors rely on it)."""

    samples: np.ndarray
    weights: np.ndarray
    provenance: str                  # "occupation" | "ensemble"
    burn_in: float = 0.0
    thinning: int = 1

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape[0] != self.samples.shape[0]:
            raise ValueError("weights and samples disagree in length")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("weights must have positive finite mass")
        self.weights = w / total
        if not np.isfinite(self.samples).all():
            raise ValueError("samples must be finite")
        if self.provenance not in ("occupation", "ensemble"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.samples

    def cov(self) -> np.ndarray:
        mu = self.mean()
        centered = self.samples - mu
        return np.einsum("n,ni,nj->ij", self.weights, centered, centered)

    def expect(self, fn) -> float:
        """Integral of a field or vectorized callable against the measure."""
        vals = fn.value_many(self.samples) if hasattr(fn, "value_many") \
            else np.asarray(fn(self.samples), dtype=np.float64)
        return float(np.dot(self.weights, vals))


def occupation_measure(traj: Trajectory, burn_in: float,
                       thin: int = 1) -> EmpiricalMeasure:
    """Uniform weights over the post-burn-in, thinned recorded states."""
    if thin < 1:
        raise ValueError("thin must be >= 1")
    states = traj.valid_states
    dt_rec = traj.dt * traj.record_stride
    first = int(np.ceil(burn_in / dt_rec)) if burn_in > 0 else 0
    kept = states[first::thin]
    if kept.shape[0] == 0:
        raise ValueError("no samples left after burn-in")
    return EmpiricalMeasure(samples=kept,
                            weights=np.full(kept.shape[0], 1.0),
                            provenance="occupation", burn_in=burn_in,
                            thinning=thin)


def ensemble_snapshot_measure(ens: Ensemble, t: float) -> EmpiricalMeasure:
    """Uniform weights over the M states at recorded time t."""
    if ens.states is None or ens.record_times is None:
        raise ValueError("ensemble was simulated without recording")
    horizon = ens.record_times[-1]
    if t > horizon + 1e-12:
        raise ValueError(f"t = {t} beyond horizon {horizon}")
    idx = int(np.argmin(np.abs(ens.record_times - t)))
    snap = ens.states[:, idx, :]
    return EmpiricalMeasure(samples=snap,
                            weights=np.full(snap.shape[0], 1.0),
                            provenance="ensemble")


# -- standard errors -----------------------------------------------------------

def batch_means_se(values: np.ndarray, n_batches: int = 32) -> float:
    """SE of the mean of an autocorrelated, time-ordered series."""
    n = len(values)
    nb = min(n_batches, n)
    if nb < 2:
        return float("nan")
    cut = (n // nb) * nb
    batches = values[:cut].reshape(nb, -1).mean(axis=1)
    return float(np.std(batches, ddof=1) / np.sqrt(nb))


def measure_se(measure: EmpiricalMeasure, values: np.ndarray,
               n_batches: int = 32) -> float:
    if measure.provenance == "occupation":
        return batch_means_se(values, n_batches)
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


# -- adjoint identity ----------------------------------------------------------

@dataclass
class ResidualRow:
    name: str
    residual: float
    se: float
    passed: bool


@dataclass
class ResidualReport:
    rows: list[ResidualRow]
    abs_tol: float

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {"abs_tol": self.abs_tol,
                "all_passed": self.all_passed,
                "rows": [{"psi": r.name, "residual": r.residual, "se": r.se,
                          "passed": r.passed} for r in self.rows]}


def default_dictionary(dim: int = 3, scale: float = 5.0):
    """Degree <= 2 monomials times the Gaussian envelope exp(-|x|^2/(2 s^2));
    named test functions for the adjoint residual."""
    fields = []
    for i in range(dim):
        exp = [0] * dim
        exp[i] = 1
        fields.append((f"x{i + 1}", EnvelopedField(
            PolyField(dim, {tuple(exp): 1.0}), scale)))
    for i in range(dim):
        exp = [0] * dim
        exp[i] = 2
        fields.append((f"x{i + 1}^2", EnvelopedField(
            PolyField(dim, {tuple(exp): 1.0}), scale)))
    for i in range(dim):
        for j in range(i + 1, dim):
            exp = [0] * dim
            exp[i] = 1
            exp[j] = 1
            fields.append((f"x{i + 1}x{j + 1}", EnvelopedField(
                PolyField(dim, {tuple(exp): 1.0}), scale)))
    return fields


def adjoint_residual(model: DiffusionModel, measure: EmpiricalMeasure,
                     dictionary=None, abs_tol: float = 1e-3,
                     n_batches: int = 32) -> ResidualReport:
    """For each test function psi, the weighted mean of the generator
    (-L psi) over the measure; zero in expectation when the measure is
    invariant.  Pass: |residual| <= 3 SE + abs_tol."""
    if dictionary is None:
        dictionary = default_dictionary(model.dim)
    rows = []
    for name, psi in dictionary:
        vals = markov_gen_many(model, psi, measure.samples)
        if not np.isfinite(vals).all():
            raise ValueError(f"non-finite generator values for {name}")
        res = float(np.dot(measure.weights, vals))
        se = measure_se(measure, vals, n_batches)
        passed = abs(res) <= 3.0 * (0.0 if np.isnan(se) else se) + abs_tol
        rows.append(ResidualRow(name=name, residual=res, se=se,
                                passed=bool(passed)))
    return ResidualReport(rows=rows, abs_tol=abs_tol)


# -- tail mass -----------------------------------------------------------------

@dataclass
class TailMassReport:
    radii: np.ndarray
    tail_masses: np.ndarray
    phi_integral: float | None = None

    def to_dict(self) -> dict:
        d = {"radii": list(map(float, self.radii)),
             "tail_masses": list(map(float, self.tail_masses))}
        if self.phi_integral is not None:
            d["phi_integral"] = self.phi_integral
        return d


def tail_mass(measure: EmpiricalMeasure, radii,
              phi=None) -> TailMassReport:
    """Weight outside each ball; optionally the integral of a witness
    observable phi (bounded-in-rho tightness proxy)."""
    radii = np.sort(np.asarray(radii, dtype=np.float64))
    norms = np.linalg.norm(measure.samples, axis=1)
    masses = np.array([measure.weights[norms > r].sum() for r in radii])
    phi_int = measure.expect(phi) if phi is not None else None
    return TailMassReport(radii=radii, tail_masses=masses,
                          phi_integral=phi_int)


# -- measure comparison ----------------------------------------------------------

def ks_one_sample(samples: np.ndarray, weights: np.ndarray, cdf) -> float:
    """sup |F_hat - F| for a weighted scalar sample against a CDF callable."""
    order = np.argsort(samples, kind="stable")
    x = samples[order]
    cum = np.cumsum(weights[order])
    f = cdf(x)
    lower = np.concatenate([[0.0], cum[:-1]])
    return float(np.max(np.maximum(np.abs(f - cum), np.abs(f - lower))))


def ks_two_sample(xa: np.ndarray, wa: np.ndarray, xb: np.ndarray,
                  wb: np.ndarray) -> float:
    """sup |F_a - F_b| for weighted scalar samples."""
    grid = np.concatenate([xa, xb])
    grid.sort(kind="stable")
    oa = np.argsort(xa, kind="stable")
    ob = np.argsort(xb, kind="stable")
    ca = np.concatenate([[0.0], np.cumsum(wa[oa])])
    cb = np.concatenate([[0.0], np.cumsum(wb[ob])])
    fa = ca[np.searchsorted(xa[oa], grid, side="right")]
    fb = cb[np.searchsorted(xb[ob], grid, side="right")]
    return float(np.max(np.abs(fa - fb)))


@dataclass
class MeasureDistance:
    ks_per_coordinate: np.ndarray
    mean_distance: float
    cov_distance: float
    low_power: bool

    def to_dict(self) -> dict:
        return {"ks_per_coordinate": list(map(float, self.ks_per_coordinate)),
                "mean_distance": self.mean_distance,
                "cov_distance": self.cov_distance,
                "low_power": self.low_power}


def compare_measures(a: EmpiricalMeasure, b: EmpiricalMeasure) -> MeasureDistance:
    """Per-coordinate two-sample KS plus moment-vector distances."""
    if a.dim != b.dim:
        raise ValueError("measures live in different dimensions")
    ks = np.array([ks_two_sample(a.samples[:, i], a.weights,
                                 b.samples[:, i], b.weights)
                   for i in range(a.dim)])
    mean_d = float(np.linalg.norm(a.mean() - b.mean()))
    cov_d = float(np.linalg.norm(a.cov() - b.cov(), ord="fro"))
    return MeasureDistance(ks_per_coordinate=ks, mean_distance=mean_d,
                           cov_distance=cov_d,
                           low_power=(a.n < 100 or b.n < 100))


# -- rho sweep -----------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    T: float = 200.0
    burn_in: float = 20.0
    dt: float = 1e-3
    record_stride: int = 10
    seed: int = 0
    x0: tuple[float, ...] = (0.0, 0.0, 0.0)
    tail_radii: tuple[float, ...] = (5.0, 10.0, 20.0)
    residual_abs_tol: float = 1e-3


@dataclass
class SweepRow:
    rho: float
    mean: np.ndarray
    cov: np.ndarray
    residuals_passed: bool
    max_abs_residual: float
    ks_to_baseline: np.ndarray
    tail_masses: np.ndarray

    def to_dict(self) -> dict:
        return {"rho": self.rho, "mean": list(map(float, self.mean)),
                "cov": [list(map(float, r)) for r in self.cov],
                "residuals_passed": self.residuals_passed,
                "max_abs_residual": self.max_abs_residual,
                "ks_to_baseline": list(map(float, self.ks_to_baseline)),
                "tail_masses": list(map(float, self.tail_masses))}


def rho_sweep_study(model_kind: str, drift: DriftSpec, rho_list,
                    cfg: SweepConfig) -> list[SweepRow]:
    """Occupation measures of the regularized models across rho, compared
    against the rho = 0 baseline.

    All runs share (seed, stream) and the rho = 0 baseline is built with the
    regularized noise layout (zero third column), so every model consumes
    identical Brownian increments: differences between m_rho and m_0 isolate
    the rho-channel contribution rather than Monte Carlo noise."""
    rho_list = [float(r) for r in rho_list]
    if any(r <= 0 for r in rho_list):
        raise ValueError("rho_list entries must be positive (baseline 0 is implicit)")
    if sorted(rho_list, reverse=True) != rho_list:
        raise ValueError("rho_list must be sorted descending")
    rhos = rho_list + [0.0]

    measures = {}
    for rho in rhos:
        if rho == 0.0:
            # regularized noise layout with a zero extra column, so the
            # baseline consumes the same increments as the rho > 0 runs
            model = regularize_model(build_model(model_kind, drift), 0.0)
        else:
            model = build_model(model_kind, drift, rho=rho)
        cfg_sim = SimConfig(dt=cfg.dt, steps=int(round(cfg.T / cfg.dt)),
                            x0=cfg.x0, seed=cfg.seed,
                            record_stride=cfg.record_stride)
        traj = simulate_path(model, cfg_sim, stream=0)
        measures[rho] = (model, occupation_measure(traj, cfg.burn_in))

    baseline = measures[0.0][1]
    rows = []
    for rho in rhos:
        model, m = measures[rho]
        rep = adjoint_residual(model, m, abs_tol=cfg.residual_abs_tol)
        dist = compare_measures(m, baseline)
        tails = tail_mass(m, cfg.tail_radii)
        rows.append(SweepRow(
            rho=rho, mean=m.mean(), cov=m.cov(),
            residuals_passed=rep.all_passed,
            max_abs_residual=max(abs(r.residual) for r in rep.rows),
            ks_to_baseline=dist.ks_per_coordinate,
            tail_masses=tails.tail_masses))
    return rows
