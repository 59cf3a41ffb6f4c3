"""Catalogue of diffusion models dX = b(X) dt + sqrt(2) sigma(X) dW.

Four families: the Heisenberg-group diffusion on R^3 (noise columns generate
the Heisenberg vector fields), the Grushin diffusion on R^2, the isotropic
Ornstein-Uhlenbeck calibration model (sigma = I, exact transition known in
closed form), and the bounded variant of the Grushin matrix with
sigma_22 = x1 / sqrt(1 + x1^2).  Each model carries an optional
regularization rho that appends a constant noise column making
A_rho = sigma sigma^T + rho^2 E (locally elliptic) while leaving the
original columns untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

HEISENBERG = "heisenberg"
GRUSHIN = "grushin"
OU_IDENTITY = "ou_identity"
LIONS_MUSIELA = "lions_musiela"

_MODEL_IDS = {HEISENBERG: 0, GRUSHIN: 1, OU_IDENTITY: 2, LIONS_MUSIELA: 3}
_DRIFT_IDS = {"ou": 0, "power": 1, "zero": 2}


class ConfigurationError(ValueError):
    """Invalid model or drift parameters."""


class UnsupportedModelError(TypeError):
    """Operation applied to a model kind it does not support."""


@dataclass(frozen=True)
class DriftSpec:
    """Per-coordinate drift b_i(x_i).

    kind='ou'     : b = -gamma x, gamma > 0.
    kind='power'  : b_i = -C_i x_i (x_i^2 + 1)^((alpha-2)/2), the smooth odd
                    representative of the dissipativity condition
                    b_i(x_i) <= -C_i' |x_i|^(alpha-1) for x_i >= R (and the
                    mirror bound for x_i <= -R); see certified_constants().
    kind='zero'   : b = 0 (deliberately non-dissipative, for diagnostics).
    kind='custom' : closure-based drift, fn maps (n, N) -> (n, N).
    """

    kind: str = "ou"
    gamma: float = 1.0
    C: tuple[float, ...] = ()
    alpha: float = 1.0
    R: float = 1.0
    fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("ou", "power", "zero", "custom"):
            raise ConfigurationError(f"unknown drift kind {self.kind!r}")
        if self.kind == "ou" and not self.gamma > 0:
            raise ConfigurationError("OU drift needs gamma > 0")
        if self.kind == "power":
            if not self.C or any(c <= 0 for c in self.C):
                raise ConfigurationError("power drift needs constants C_i > 0")
            if not 0.0 <= self.alpha <= 2.0:
                raise ConfigurationError(
                    "power drift supports alpha in [0, 2] (linear growth)")
            if not self.R > 0:
                raise ConfigurationError("power drift needs R > 0")
        if self.kind == "custom" and self.fn is None:
            raise ConfigurationError("custom drift needs fn")

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Drift at a batch of points, shape (n, N) -> (n, N)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "ou":
            return -self.gamma * X
        if self.kind == "power":
            C = np.asarray(self.C)
            if self.alpha == 2.0:
                return -C * X
            return -C * X * np.power(X * X + 1.0, (self.alpha - 2.0) * 0.5)
        if self.kind == "zero":
            return np.zeros_like(X)
        return np.asarray(self.fn(X), dtype=np.float64)

    def certified_constants(self, dim: int) -> tuple[tuple[float, ...], float, float]:
        """(C_eff, alpha, R) such that the dissipativity bounds hold outside
        [-R, R] for the concrete representative.  For alpha < 2 the smooth
        form loses the factor (R^2/(R^2+1))^((2-alpha)/2) against the pure
        power law."""
        if self.kind == "ou":
            return ((self.gamma,) * dim, 2.0, self.R)
        if self.kind != "power":
            raise ConfigurationError(f"no (C, alpha, R) certificate for kind {self.kind!r}")
        if self.alpha == 2.0:
            return (tuple(self.C), 2.0, self.R)
        shrink = (self.R**2 / (self.R**2 + 1.0)) ** ((2.0 - self.alpha) * 0.5)
        return (tuple(c * shrink for c in self.C), self.alpha, self.R)


@dataclass(frozen=True)
class RegularizationParams:
    """rho >= 0; rho = 0 keeps the law of the unregularized model (the extra
    noise column is identically zero)."""

    rho: float = 0.0

    def __post_init__(self):
        if self.rho < 0:
            raise ConfigurationError("rho must be >= 0")


@dataclass(frozen=True)
class DiffusionModel:
    """Immutable diffusion spec; safe to share across threads."""

    name: str
    kind: str
    dim: int
    noise_dim: int
    drift_spec: DriftSpec
    rho: float = 0.0
    growth_bound: float = field(default=0.0)

    def __post_init__(self):
        if self.growth_bound == 0.0:
            object.__setattr__(self, "growth_bound", self._growth_bound())

    # -- coefficient fields -------------------------------------------------
    def sigma(self, x) -> np.ndarray:
        """Diffusion matrix at a point, shape (dim, noise_dim)."""
        return self.sigma_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def drift(self, x) -> np.ndarray:
        return self.drift_spec.evaluate(np.asarray(x, dtype=np.float64)[None, :])[0]

    def sigma_batch(self, X: np.ndarray) -> np.ndarray:
        """(n, dim, noise_dim) diffusion matrices."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        S = np.zeros((n, self.dim, self.noise_dim))
        if self.kind == HEISENBERG:
            S[:, 0, 0] = 1.0
            S[:, 1, 1] = 1.0
            S[:, 2, 0] = 2.0 * X[:, 1]
            S[:, 2, 1] = -2.0 * X[:, 0]
            if self.noise_dim == 3:
                S[:, 2, 2] = self.rho
        elif self.kind == GRUSHIN:
            S[:, 0, 0] = 1.0
            S[:, 1, 1] = X[:, 0]
            if self.noise_dim == 3:
                S[:, 1, 2] = self.rho
        elif self.kind == OU_IDENTITY:
            idx = np.arange(self.dim)
            S[:, idx, idx] = 1.0
            if self.noise_dim == 2 * self.dim:
                S[:, idx, self.dim + idx] = self.rho
        elif self.kind == LIONS_MUSIELA:
            S[:, 0, 0] = 1.0
            S[:, 1, 1] = X[:, 0] / np.sqrt(1.0 + X[:, 0] ** 2)
            if self.noise_dim == 3:
                S[:, 1, 2] = self.rho
        else:  # pragma: no cover
            raise UnsupportedModelError(self.kind)
        return S

    def drift_batch(self, X: np.ndarray) -> np.ndarray:
        return self.drift_spec.evaluate(X)

    def diffusion_matrix_batch(self, X: np.ndarray) -> np.ndarray:
        """A(x) = sigma sigma^T, shape (n, dim, dim)."""
        S = self.sigma_batch(X)
        return np.einsum("nik,njk->nij", S, S)

    def diffusion_matrix(self, x) -> np.ndarray:
        return self.diffusion_matrix_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    # -- kernel plumbing ----------------------------------------------------
    def kernel_args(self) -> dict:
        """Arguments consumed by the simulation kernels; drift_fn is set for
        closure drifts (python backend only)."""
        ds = self.drift_spec
        cvec = np.asarray(ds.C if ds.kind == "power" else (0.0,) * self.dim,
                          dtype=np.float64)
        if cvec.shape[0] != self.dim:
            cvec = np.resize(cvec, self.dim)
        args = dict(
            model_id=_MODEL_IDS[self.kind],
            dim=self.dim,
            m=self.noise_dim,
            rho=self.rho,
            drift_id=_DRIFT_IDS.get(ds.kind, 0),
            gamma=ds.gamma,
            alpha=ds.alpha,
            cvec=cvec,
        )
        if ds.kind == "custom":
            args["drift_id"] = _DRIFT_IDS["zero"]
            args["drift_fn"] = lambda X: ds.evaluate(X)
        return args

    @property
    def kernel_compiled_ok(self) -> bool:
        return self.drift_spec.kind != "custom"

    def _growth_bound(self) -> float:
        # ||sigma(x)||_F and ||b(x)|| are <= C (|x| + 1) with the constants
        # below; random-sampling tests exercise the claim.
        if self.kind == HEISENBERG:
            c_sigma = max(2.0, np.sqrt(2.0 + self.rho**2))
        elif self.kind in (GRUSHIN, LIONS_MUSIELA):
            c_sigma = max(1.0, np.sqrt(1.0 + self.rho**2))
        else:
            c_sigma = np.sqrt(self.dim * (1.0 + self.rho**2))
        ds = self.drift_spec
        if ds.kind == "ou":
            c_drift = ds.gamma
        elif ds.kind == "power":
            c_drift = max(ds.C)
        elif ds.kind == "zero":
            c_drift = 0.0
        else:
            c_drift = _sampled_growth_constant(ds, self.dim)
        return float(max(c_sigma, c_drift))

    def sigma_column_exprs(self):
        """Noise columns as polynomial vector fields (coefficient maps), or
        None when a column is not polynomial (bounded variant)."""
        if self.kind == LIONS_MUSIELA:
            return None
        cols = []
        if self.kind == HEISENBERG:
            cols = [
                [{(0, 0, 0): 1.0}, {}, {(0, 1, 0): 2.0}],
                [{}, {(0, 0, 0): 1.0}, {(1, 0, 0): -2.0}],
            ]
            if self.noise_dim == 3:
                cols.append([{}, {}, {(0, 0, 0): self.rho}])
        elif self.kind == GRUSHIN:
            cols = [
                [{(0, 0): 1.0}, {}],
                [{}, {(1, 0): 1.0}],
            ]
            if self.noise_dim == 3:
                cols.append([{}, {(0, 0): self.rho}])
        elif self.kind == OU_IDENTITY:
            zero = tuple([0] * self.dim)
            for j in range(self.noise_dim):
                col = [{} for _ in range(self.dim)]
                i = j % self.dim
                col[i] = {zero: 1.0 if j < self.dim else self.rho}
                cols.append(col)
        return cols


def _sampled_growth_constant(ds: DriftSpec, dim: int, n: int = 4096) -> float:
    rng_ = np.random.default_rng(12345)
    X = rng_.uniform(-1e3, 1e3, size=(n, dim))
    B = ds.evaluate(X)
    denom = np.linalg.norm(X, axis=1) + 1.0
    return float(np.max(np.linalg.norm(B, axis=1) / denom))


# -- builders ----------------------------------------------------------------

def build_heisenberg(drift: DriftSpec) -> DiffusionModel:
    """Heisenberg-group diffusion on R^3: sigma rows (1,0), (0,1),
    (2 x2, -2 x1)."""
    _check_drift_dim(drift, 3)
    return DiffusionModel(name="heisenberg", kind=HEISENBERG, dim=3,
                          noise_dim=2, drift_spec=drift)


def regularize_heisenberg(model: DiffusionModel,
                          params: RegularizationParams) -> DiffusionModel:
    """Append the noise column (0, 0, rho): A_rho = A + rho^2 E_33."""
    if model.kind != HEISENBERG:
        raise UnsupportedModelError(
            f"regularize_heisenberg needs a Heisenberg model, got {model.kind}")
    return DiffusionModel(name=f"heisenberg_rho={params.rho:g}",
                          kind=HEISENBERG, dim=3, noise_dim=3,
                          drift_spec=model.drift_spec, rho=params.rho)


def regularize_model(model: DiffusionModel, rho: float) -> DiffusionModel:
    """Model-appropriate regularization: single paper column for Heisenberg,
    Grushin and the bounded variant; rho * identity columns otherwise."""
    params = RegularizationParams(rho=rho)
    if model.kind == HEISENBERG:
        return regularize_heisenberg(model, params)
    if model.kind in (GRUSHIN, LIONS_MUSIELA):
        return DiffusionModel(name=f"{model.name}_rho={rho:g}", kind=model.kind,
                              dim=2, noise_dim=3, drift_spec=model.drift_spec,
                              rho=rho)
    return DiffusionModel(name=f"{model.name}_rho={rho:g}", kind=model.kind,
                          dim=model.dim, noise_dim=2 * model.dim,
                          drift_spec=model.drift_spec, rho=rho)


def build_grushin(drift: DriftSpec, rho: float = 0.0) -> DiffusionModel:
    """Grushin diffusion on R^2: sigma = [[1, 0], [0, x1]]; the regularized
    variant appends the column (0, rho)."""
    _check_drift_dim(drift, 2)
    model = DiffusionModel(name="grushin", kind=GRUSHIN, dim=2, noise_dim=2,
                           drift_spec=drift)
    if rho > 0:
        model = regularize_model(model, rho)
    return model


def build_lions_musiela(drift: DriftSpec, rho: float = 0.0) -> DiffusionModel:
    """Bounded-coefficient variant: sigma_22 = x1 / sqrt(1 + x1^2)."""
    _check_drift_dim(drift, 2)
    model = DiffusionModel(name="lions_musiela", kind=LIONS_MUSIELA, dim=2,
                           noise_dim=2, drift_spec=drift)
    if rho > 0:
        model = regularize_model(model, rho)
    return model


def build_ou_identity(gamma: float, dim: int) -> DiffusionModel:
    """Calibration model: sigma = I_N, b = -gamma x.  Stationary law is the
    product Gaussian with variance 1/gamma per coordinate."""
    if gamma <= 0:
        raise ConfigurationError("gamma must be > 0")
    if dim < 1:
        raise ConfigurationError("dim must be >= 1")
    drift = DriftSpec(kind="ou", gamma=gamma)
    return DiffusionModel(name=f"ou_identity{dim}d", kind=OU_IDENTITY,
                          dim=dim, noise_dim=dim, drift_spec=drift)


def build_model(kind: str, drift: DriftSpec, rho: float = 0.0,
                gamma: float = 1.0, dim: int = 3) -> DiffusionModel:
    """Name-based construction used by the CLI."""
    if kind == HEISENBERG:
        model = build_heisenberg(drift)
        if rho > 0:
            model = regularize_heisenberg(model, RegularizationParams(rho))
        return model
    if kind == GRUSHIN:
        return build_grushin(drift, rho)
    if kind == LIONS_MUSIELA:
        return build_lions_musiela(drift, rho)
    if kind == OU_IDENTITY:
        model = build_ou_identity(drift.gamma if drift.kind == "ou" else gamma, dim)
        if rho > 0:
            model = regularize_model(model, rho)
        return model
    raise ConfigurationError(f"unknown model kind {kind!r}")


def _check_drift_dim(drift: DriftSpec, dim: int) -> None:
    if drift.kind == "power" and len(drift.C) != dim:
        raise ConfigurationError(
            f"power drift has {len(drift.C)} constants, model dimension is {dim}")


def exact_ou_transition(x0, gamma: float, t: float, noise) -> np.ndarray:
    """Exact transition of dX = -gamma X dt + sqrt(2) dW over time t:
    e^(-gamma t) x0 + sqrt((1 - e^(-2 gamma t)) / gamma) * noise."""
    if gamma <= 0:
        raise ConfigurationError("gamma must be > 0")
    if t < 0:
        raise ConfigurationError("t must be >= 0")
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    decay = np.exp(-gamma * t)
    std = np.sqrt(-np.expm1(-2.0 * gamma * t) / gamma)
    return decay * x0 + std * noise


def heisenberg_eigenvalues(x, rho: float) -> np.ndarray:
    """Closed-form eigenvalues of A_rho(x) for the Heisenberg model:
    1 and (a +/- sqrt(a^2 - 4 rho^2)) / 2 with a = 4(x1^2+x2^2) + rho^2 + 1,
    sorted ascending."""
    x = np.asarray(x, dtype=np.float64)
    a = 4.0 * (x[0] ** 2 + x[1] ** 2) + rho**2 + 1.0
    root = np.sqrt(a * a - 4.0 * rho**2)
    return np.sort(np.array([1.0, (a + root) / 2.0, (a - root) / 2.0]))
