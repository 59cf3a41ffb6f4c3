"""Lyapunov-condition verification for the catalogue generators.

Checks L_rho w >= k on sampled spheres outside a candidate radius, locates
the minimal such radius by bisection, reproduces the closed-form expression
of L_rho w for the canonical Heisenberg candidate, computes sufficient
drift constants for the alpha = 0 case, and builds the shifted witness
(w + K + K_G + 1, chi, phi) whose sampled phi must stay >= 1 everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .fields import CallableField, PolyField, ScalarField, elliptic_L_many
from .models import (DiffusionModel, DriftSpec, GRUSHIN, HEISENBERG,
                     regularize_model)


class NoPassingRadiusError(RuntimeError):
    """No scanned radius satisfies the Lyapunov inequality."""


class WitnessFailureError(RuntimeError):
    def __init__(self, point, value):
        self.point = np.asarray(point)
        self.value = float(value)
        super().__init__(f"phi(x) = {value:.6g} < 1 at x = {self.point}")


def canonical_w(model_kind: str) -> PolyField:
    """The quartic-plus-quadratic Lyapunov candidates for the degenerate
    models: (x1^4 + x2^4)/12 + x3^2/2 (Heisenberg), x1^4/12 + x2^2/2
    (Grushin)."""
    if model_kind == HEISENBERG:
        return PolyField(3, {(4, 0, 0): 1 / 12, (0, 4, 0): 1 / 12,
                             (0, 0, 2): 0.5})
    if model_kind == GRUSHIN:
        return PolyField(2, {(4, 0): 1 / 12, (0, 2): 0.5})
    raise ValueError(f"no canonical Lyapunov candidate for {model_kind!r}")


def heisenberg_Lw_closed_form(drift: DriftSpec, rho: float, x) -> float:
    """L_rho w for the canonical Heisenberg candidate:
    -5(x1^2 + x2^2) - rho^2 - (b1 x1^3 + b2 x2^3)/3 - b3 x3."""
    return float(heisenberg_Lw_closed_form_many(
        drift, rho, np.asarray(x, dtype=np.float64)[None, :])[0])


def heisenberg_Lw_closed_form_many(drift: DriftSpec, rho: float,
                                   X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B = drift.evaluate(X)
    return (-5.0 * (X[:, 0] ** 2 + X[:, 1] ** 2) - rho**2
            - (B[:, 0] * X[:, 0] ** 3 + B[:, 1] * X[:, 1] ** 3) / 3.0
            - B[:, 2] * X[:, 2])


# -- sphere sampling -----------------------------------------------------------

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def sphere_points(dim: int, n: int, kind: str = "low-discrepancy",
                  seed: int = 2025) -> np.ndarray:
    """n unit vectors in R^dim.  Golden-angle sequences for dim 2 and 3,
    deterministic Gaussian directions beyond."""
    if n < 1:
        raise ValueError("need at least one sample")
    if dim == 1:
        return np.array([[1.0], [-1.0]] * ((n + 1) // 2))[:n]
    if dim == 2:
        if kind == "grid":
            theta = 2.0 * np.pi * np.arange(n) / n
        else:
            theta = 2.0 * np.pi * ((np.arange(n) * (_GOLDEN - 1.0)) % 1.0)
        return np.stack([np.cos(theta), np.sin(theta)], axis=1)
    if dim == 3:
        if kind == "grid":
            k = int(np.ceil(np.sqrt(n)))
            lat = np.linspace(0, np.pi, k + 2)[1:-1]
            lon = np.linspace(0, 2 * np.pi, k, endpoint=False)
            LA, LO = np.meshgrid(lat, lon, indexing="ij")
            pts = np.stack([np.sin(LA) * np.cos(LO), np.sin(LA) * np.sin(LO),
                            np.cos(LA)], axis=-1).reshape(-1, 3)
            return pts[:n] if len(pts) >= n else np.vstack(
                [pts, sphere_points(3, n - len(pts), "low-discrepancy")])
        i = np.arange(n)
        z = 1.0 - 2.0 * (i + 0.5) / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        theta = 2.0 * np.pi * ((i * (_GOLDEN - 1.0)) % 1.0)
        return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    g = np.random.default_rng(seed).standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


# -- scan types ----------------------------------------------------------------

@dataclass(frozen=True)
class ShellScanConfig:
    r_min: float
    r_max: float
    shells: int = 32
    samples_per_shell: int = 512
    sampling: str = "low-discrepancy"

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ValueError("need r_min < r_max")
        if self.shells < 1 or self.samples_per_shell < 1:
            raise ValueError("counts must be >= 1")
        if self.sampling not in ("grid", "low-discrepancy"):
            raise ValueError(f"unknown sampling {self.sampling!r}")

    @property
    def radii(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.shells)

    @property
    def resolution(self) -> float:
        return (self.r_max - self.r_min) / self.shells


@dataclass(frozen=True)
class LyapunovCandidate:
    """Candidate w for L_rho w >= target outside a ball.  The model must
    already carry the regularization; passing rho on an unregularized model
    regularizes it here."""

    field: ScalarField
    model: DiffusionModel
    target: float = 1.0
    rho: float | None = None

    def __post_init__(self):
        rho = self.rho
        model = self.model
        if rho is None:
            object.__setattr__(self, "rho", model.rho)
        elif rho != model.rho:
            if model.rho != 0.0:
                raise ValueError("model already carries a different rho")
            if rho > 0.0:
                object.__setattr__(self, "model", regularize_model(model, rho))
        if self.field.dim != self.model.dim:
            raise ValueError("field and model dimensions differ")

    def values_on(self, X: np.ndarray) -> np.ndarray:
        return elliptic_L_many(self.model, self.field, X)


@dataclass
class ShellRow:
    radius: float
    min_value: float
    argmin: np.ndarray
    n_violations: int


@dataclass
class LyapunovReport:
    target: float
    rows: list[ShellRow]
    violations: list[tuple[float, np.ndarray, float]]  # (radius, point, value)
    r0_estimate: float | None
    passed: bool

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "passed": bool(self.passed),
            "r0_estimate": self.r0_estimate,
            "shells": [{"r": r.radius, "min": r.min_value,
                        "argmin": list(r.argmin),
                        "violations": r.n_violations} for r in self.rows],
            "violations": [{"r": r, "x": list(p), "value": v}
                           for r, p, v in self.violations],
        }


def scan_shells(candidate: LyapunovCandidate,
                cfg: ShellScanConfig) -> LyapunovReport:
    """Evaluate L_rho w on sampled spheres; report per-shell minima,
    violations (< target), and the smallest scanned radius beyond which no
    shell violates."""
    dim = candidate.model.dim
    unit = sphere_points(dim, cfg.samples_per_shell, cfg.sampling)
    rows: list[ShellRow] = []
    violations: list[tuple[float, np.ndarray, float]] = []
    clean_from = None
    for r in cfg.radii:
        pts = r * unit
        vals = candidate.values_on(pts)
        imin = int(np.argmin(vals))
        bad = np.nonzero(vals < candidate.target)[0]
        rows.append(ShellRow(radius=float(r), min_value=float(vals[imin]),
                             argmin=pts[imin], n_violations=len(bad)))
        if len(bad):
            clean_from = None
            for j in bad[np.argsort(vals[bad])][:16]:
                violations.append((float(r), pts[j], float(vals[j])))
        elif clean_from is None:
            clean_from = float(r)
    passed = not violations
    return LyapunovReport(target=candidate.target, rows=rows,
                          violations=violations, r0_estimate=clean_from,
                          passed=passed)


def find_min_R0(candidate: LyapunovCandidate, cfg: ShellScanConfig) -> float:
    """Bisection on the shell radius to resolution (r_max - r_min)/shells;
    requires the inequality to hold at r_max."""
    unit = sphere_points(candidate.model.dim, cfg.samples_per_shell,
                         cfg.sampling)

    def shell_ok(r: float) -> bool:
        return bool(np.min(candidate.values_on(r * unit)) >= candidate.target)

    if not shell_ok(cfg.r_max):
        raise NoPassingRadiusError(
            f"L_rho w < {candidate.target} persists at r = {cfg.r_max}")
    if shell_ok(cfg.r_min):
        return cfg.r_min
    lo, hi = cfg.r_min, cfg.r_max
    while hi - lo > cfg.resolution:
        mid = 0.5 * (lo + hi)
        if shell_ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def alpha0_thresholds(R: float, K1: float, K2: float,
                      K3: float) -> tuple[float, float, float]:
    """Sufficient drift constants for the alpha = 0 case: C1, C2 > 15 and
    C3 above the most conservative of the case bounds,
    10 R^2 + R^3 (K1 + K2)/3 + K3 R + 1, where K_i = max |b_i| on [-R, R]."""
    if min(R, K1, K2, K3) < 0:
        raise ValueError("R and K_i must be >= 0")
    c3 = 10.0 * R**2 + R**3 * (K1 + K2) / 3.0 + K3 * R + 1.0
    return (15.0, 15.0, float(c3))


# -- appendix witness ----------------------------------------------------------

@dataclass
class WitnessC2Barra:
    w_flat: PolyField
    K: float
    K_G: float
    chi: CallableField
    phi_radii: np.ndarray
    phi_min_per_radius: np.ndarray
    phi_min: float
    phi_argmin: np.ndarray
    ray_monotone_beyond_2R0: bool
    R0: float

    def phi_values(self, candidate: LyapunovCandidate,
                   X: np.ndarray) -> np.ndarray:
        return _phi_many(candidate, self.w_flat, self.chi, X)


def _phi_many(candidate, w_flat, chi, X):
    return (elliptic_L_many(candidate.model, w_flat, X)
            + chi.value_many(X) * w_flat.value_many(X))


def _ball_max(fn_many, dim: int, R0: float, grid_points: int,
              polish: bool = True) -> float:
    """max of fn over the closed ball B(0, R0): dense lattice + local polish
    on the best candidates (fn evaluated on radially clipped points)."""
    k = max(3, int(round(grid_points ** (1.0 / dim))))
    axes = [np.linspace(-R0, R0, k)] * dim
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    lattice = lattice[np.linalg.norm(lattice, axis=1) <= R0]
    boundary = R0 * sphere_points(dim, max(1024, k * k))
    pts = np.vstack([lattice, boundary, np.zeros((1, dim))])
    vals = fn_many(pts)
    best = float(np.max(vals))
    if polish:
        def clipped(x):
            x = np.asarray(x, dtype=np.float64)
            nrm = np.linalg.norm(x)
            if nrm > R0:
                x = x * (R0 / nrm)
            return -float(fn_many(x[None, :])[0])
        for idx in np.argsort(vals)[-8:]:
            res = minimize(clipped, pts[idx], method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-12,
                                    "maxiter": 400})
            best = max(best, -res.fun)
    return best


def build_c2barra_witness(candidate: LyapunovCandidate, R0: float,
                          grid_points: int = 1_000_000,
                          verify_samples: int = 512,
                          verify_radii: int = 81) -> WitnessC2Barra:
    """Shifted witness w + K + K_G + 1 with a smooth cutoff chi (~1 on
    B(0,R0), effectively supported in B(0,2R0)) and the sampled check
    phi = L w_flat + chi w_flat >= 1 on a radial verification grid.

    chi is a super-Gaussian surrogate exp(-a (|x|/R0)^12); exact compact
    support is not required for the numerical verification, the residual
    mass beyond 2R0 is ~1e-9."""
    w = candidate.field
    if not isinstance(w, PolyField):
        raise TypeError("witness construction needs a polynomial candidate")
    dim = candidate.model.dim
    K = _ball_max(lambda X: np.abs(w.value_many(X)), dim, R0, grid_points)
    K_G = _ball_max(lambda X: np.abs(candidate.values_on(X)), dim, R0,
                    grid_points)
    w_flat = w.add_constant(K + K_G + 1.0)

    a, p = 0.005, 6.0
    inv_r02 = 1.0 / (R0 * R0)

    def chi_fn(X):
        q = np.sum(np.atleast_2d(X) ** 2, axis=1) * inv_r02
        return np.exp(-a * q**p)

    chi = CallableField(chi_fn, dim)

    unit = sphere_points(dim, verify_samples)
    radii = np.linspace(0.0, 4.0 * R0, verify_radii)
    mins = np.empty_like(radii)
    argmins = np.zeros((len(radii), dim))
    ray_vals = np.empty((len(radii), len(unit)))
    for i, r in enumerate(radii):
        pts = r * unit if r > 0 else np.zeros((1, dim))
        vals = _phi_many(candidate, w_flat, chi, pts)
        ray_vals[i] = vals if r > 0 else vals[0]
        j = int(np.argmin(vals))
        mins[i] = vals[j]
        argmins[i] = pts[j]
    imin = int(np.argmin(mins))
    phi_min = float(mins[imin])
    if phi_min < 1.0:
        raise WitnessFailureError(argmins[imin], phi_min)
    outer = radii >= 2.0 * R0
    diffs = np.diff(ray_vals[outer], axis=0)
    ray_monotone = bool((diffs > 0).all()) if outer.sum() >= 2 else True
    return WitnessC2Barra(w_flat=w_flat, K=float(K), K_G=float(K_G), chi=chi,
                          phi_radii=radii, phi_min_per_radius=mins,
                          phi_min=phi_min, phi_argmin=argmins[imin],
                          ray_monotone_beyond_2R0=ray_monotone, R0=R0)
