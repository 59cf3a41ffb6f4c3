"""Exactly differentiable scalar fields and the differential operators on
them: the elliptic operator L u = -tr(sigma sigma^T D^2 u) - b . D u, its
negative (the Markov generator), Lie brackets of polynomial vector fields,
and the commutator-rank (Hormander) test.

Three field representations cover everything the laboratory needs:
multivariate polynomials (Lyapunov candidates), polynomial-times-Gaussian
envelopes (bounded observables and test functions), and black-box callables
differentiated by central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

SVD_RANK_RTOL = 1e-8          # relative singular-value threshold for rank
FD_STEP_COEFF = 1e-4          # h = FD_STEP_COEFF * (1 + |x|)


class DimensionMismatchError(ValueError):
    pass


def _check_dim(field_dim: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != field_dim:
        raise DimensionMismatchError(
            f"field has dimension {field_dim}, point has {x.shape[-1]}")
    return x


class PolyField:
    """Multivariate polynomial sum_k c_k prod_i x_i^(e_ki); evaluation,
    gradient and Hessian are exact."""

    def __init__(self, dim: int, terms: dict[tuple[int, ...], float]):
        self.dim = int(dim)
        self.terms = {tuple(int(e) for e in exp): float(c)
                      for exp, c in terms.items() if c != 0.0}
        for exp in self.terms:
            if len(exp) != self.dim or any(e < 0 for e in exp):
                raise ValueError(f"bad exponent tuple {exp} for dim {self.dim}")
        self._dcache: dict[int, "PolyField"] = {}

    def value_many(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(self.dim, np.atleast_2d(X))
        out = np.zeros(X.shape[0])
        for exp, c in self.terms.items():
            term = np.full(X.shape[0], c)
            for i, e in enumerate(exp):
                if e:
                    term = term * X[:, i] ** e
            out += term
        return out

    def diff(self, i: int) -> "PolyField":
        if i not in self._dcache:
            terms: dict[tuple[int, ...], float] = {}
            for exp, c in self.terms.items():
                if exp[i] > 0:
                    new = list(exp)
                    new[i] -= 1
                    key = tuple(new)
                    terms[key] = terms.get(key, 0.0) + c * exp[i]
            self._dcache[i] = PolyField(self.dim, terms)
        return self._dcache[i]

    def gradient_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.stack([self.diff(i).value_many(X) for i in range(self.dim)],
                        axis=1)

    def hessian_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        n = X.shape[0]
        H = np.empty((n, self.dim, self.dim))
        for i in range(self.dim):
            di = self.diff(i)
            for j in range(i, self.dim):
                v = di.diff(j).value_many(X)
                H[:, i, j] = v
                H[:, j, i] = v
        return H

    def value(self, x) -> float:
        return float(self.value_many(np.asarray(x)[None, :])[0])

    def gradient(self, x) -> np.ndarray:
        return self.gradient_many(np.asarray(x)[None, :])[0]

    def hessian(self, x) -> np.ndarray:
        return self.hessian_many(np.asarray(x)[None, :])[0]

    # polynomial algebra (used by Lie brackets and witness construction)
    def __mul__(self, other):
        if isinstance(other, PolyField):
            terms: dict[tuple[int, ...], float] = {}
            for ea, ca in self.terms.items():
                for eb, cb in other.terms.items():
                    key = tuple(a + b for a, b in zip(ea, eb))
                    terms[key] = terms.get(key, 0.0) + ca * cb
            return PolyField(self.dim, terms)
        return self.scale(float(other))

    __rmul__ = __mul__

    def scale(self, c: float) -> "PolyField":
        return PolyField(self.dim, {e: c * v for e, v in self.terms.items()})

    def __add__(self, other):
        if isinstance(other, PolyField):
            terms = dict(self.terms)
            for e, c in other.terms.items():
                terms[e] = terms.get(e, 0.0) + c
            return PolyField(self.dim, terms)
        return self.add_constant(float(other))

    def __sub__(self, other):
        return self + other.scale(-1.0) if isinstance(other, PolyField) \
            else self.add_constant(-float(other))

    def add_constant(self, c: float) -> "PolyField":
        terms = dict(self.terms)
        zero = (0,) * self.dim
        terms[zero] = terms.get(zero, 0.0) + c
        return PolyField(self.dim, terms)

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self.terms)

    def __repr__(self):
        return f"PolyField(dim={self.dim}, terms={self.terms})"


def constant_field(dim: int, c: float) -> PolyField:
    return PolyField(dim, {(0,) * dim: c})


class EnvelopedField:
    """poly(x) * exp(-|x - center|^2 / (2 s^2)); bounded, smooth, with exact
    derivatives.  Stands in for the paper-style bounded observables and for
    rapidly decaying test functions."""

    def __init__(self, poly: PolyField, envelope_scale: float, center=None):
        if envelope_scale <= 0:
            raise ValueError("envelope_scale must be > 0")
        self.poly = poly
        self.dim = poly.dim
        self.scale = float(envelope_scale)
        self.center = (np.zeros(self.dim) if center is None
                       else np.asarray(center, dtype=np.float64))

    def _envelope(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        U = X - self.center
        E = np.exp(-np.sum(U * U, axis=1) / (2.0 * self.scale**2))
        return U, E

    def value_many(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(self.dim, np.atleast_2d(X))
        _, E = self._envelope(X)
        return self.poly.value_many(X) * E

    def gradient_many(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(self.dim, np.atleast_2d(X))
        U, E = self._envelope(X)
        p = self.poly.value_many(X)
        gp = self.poly.gradient_many(X)
        s2 = self.scale**2
        return E[:, None] * (gp - p[:, None] * U / s2)

    def hessian_many(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(self.dim, np.atleast_2d(X))
        U, E = self._envelope(X)
        p = self.poly.value_many(X)
        gp = self.poly.gradient_many(X)
        Hp = self.poly.hessian_many(X)
        s2 = self.scale**2
        eye = np.eye(self.dim)
        cross = gp[:, :, None] * U[:, None, :] + U[:, :, None] * gp[:, None, :]
        outer = U[:, :, None] * U[:, None, :]
        H = Hp - cross / s2 + p[:, None, None] * (outer / s2**2 - eye / s2)
        return E[:, None, None] * H

    def value(self, x) -> float:
        return float(self.value_many(np.asarray(x)[None, :])[0])

    def gradient(self, x) -> np.ndarray:
        return self.gradient_many(np.asarray(x)[None, :])[0]

    def hessian(self, x) -> np.ndarray:
        return self.hessian_many(np.asarray(x)[None, :])[0]

    def sup_bound(self) -> float | None:
        """Exact sup |f| when the polynomial part is constant, else None."""
        if self.poly.is_constant():
            return abs(self.poly.value_many(np.zeros((1, self.dim)))[0])
        return None


class CallableField:
    """Black-box scalar field; derivatives via central differences with
    step h = 1e-4 (1 + |x|).  fn maps (n, dim) -> (n,)."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int):
        self.fn = fn
        self.dim = int(dim)

    def value_many(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(self.dim, np.atleast_2d(X))
        return np.asarray(self.fn(X), dtype=np.float64)

    def _h(self, X: np.ndarray) -> np.ndarray:
        return FD_STEP_COEFF * (1.0 + np.linalg.norm(X, axis=1))

    def gradient_many(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(self.dim, np.atleast_2d(X))
        h = self._h(X)
        G = np.empty((X.shape[0], self.dim))
        for i in range(self.dim):
            dx = np.zeros_like(X)
            dx[:, i] = h
            G[:, i] = (self.value_many(X + dx) - self.value_many(X - dx)) / (2 * h)
        return G

    def hessian_many(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(self.dim, np.atleast_2d(X))
        h = self._h(X)
        n = X.shape[0]
        H = np.empty((n, self.dim, self.dim))
        f0 = self.value_many(X)
        for i in range(self.dim):
            ei = np.zeros_like(X)
            ei[:, i] = h
            H[:, i, i] = (self.value_many(X + ei) - 2 * f0
                          + self.value_many(X - ei)) / h**2
            for j in range(i + 1, self.dim):
                ej = np.zeros_like(X)
                ej[:, j] = h
                v = (self.value_many(X + ei + ej) - self.value_many(X + ei - ej)
                     - self.value_many(X - ei + ej)
                     + self.value_many(X - ei - ej)) / (4 * h**2)
                H[:, i, j] = v
                H[:, j, i] = v
        return H

    def value(self, x) -> float:
        return float(self.value_many(np.asarray(x)[None, :])[0])

    def gradient(self, x) -> np.ndarray:
        return self.gradient_many(np.asarray(x)[None, :])[0]

    def hessian(self, x) -> np.ndarray:
        return self.hessian_many(np.asarray(x)[None, :])[0]


ScalarField = Union[PolyField, EnvelopedField, CallableField]


def eval_field(field: ScalarField, x) -> tuple[float, np.ndarray, np.ndarray]:
    """(value, gradient, Hessian) at a point."""
    x = _check_dim(field.dim, np.asarray(x, dtype=np.float64))
    return field.value(x), field.gradient(x), field.hessian(x)


@dataclass(frozen=True)
class OperatorValue:
    """elliptic_L = L u = -tr(A D^2 u) - b . D u; markov_gen = -L u."""

    elliptic_L: float
    markov_gen: float


def apply_elliptic_L(model, field: ScalarField, x) -> OperatorValue:
    val = float(elliptic_L_many(model, field, np.asarray(x)[None, :])[0])
    return OperatorValue(elliptic_L=val, markov_gen=-val)


def elliptic_L_many(model, field: ScalarField, X: np.ndarray) -> np.ndarray:
    """L(field) at a batch of points: -tr(A D^2) - b . D, vectorized."""
    X = _check_dim(field.dim, np.atleast_2d(X))
    if model.dim != field.dim:
        raise DimensionMismatchError(
            f"model dim {model.dim} != field dim {field.dim}")
    A = model.diffusion_matrix_batch(X)
    H = field.hessian_many(X)
    G = field.gradient_many(X)
    B = model.drift_batch(X)
    return -np.einsum("nij,nij->n", A, H) - np.einsum("ni,ni->n", B, G)


def markov_gen_many(model, field: ScalarField, X: np.ndarray) -> np.ndarray:
    return -elliptic_L_many(model, field, X)


def fd_operator_oracle(model, field: ScalarField, x, h: float | None = None) -> float:
    """Independent check of apply_elliptic_L: same A and b, but the field's
    gradient/Hessian from central differences."""
    x = _check_dim(field.dim, np.asarray(x, dtype=np.float64))
    if h is None:
        h = FD_STEP_COEFF * (1.0 + np.linalg.norm(x))
    if h <= 0:
        raise ValueError("h must be > 0")
    dim = field.dim

    def val(p):
        return field.value_many(p[None, :])[0]

    grad = np.empty(dim)
    hess = np.empty((dim, dim))
    f0 = val(x)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = h
        grad[i] = (val(x + ei) - val(x - ei)) / (2 * h)
        hess[i, i] = (val(x + ei) - 2 * f0 + val(x - ei)) / h**2
        for j in range(i + 1, dim):
            ej = np.zeros(dim)
            ej[j] = h
            v = (val(x + ei + ej) - val(x + ei - ej) - val(x - ei + ej)
                 + val(x - ei - ej)) / (4 * h**2)
            hess[i, j] = v
            hess[j, i] = v
    A = model.diffusion_matrix(x)
    b = model.drift(x)
    return float(-np.sum(A * hess) - b @ grad)


# -- polynomial vector fields and brackets ------------------------------------

class PolyVectorField:
    """Vector field with PolyField components; closed under Lie brackets."""

    def __init__(self, components):
        self.components = tuple(components)
        self.dim = self.components[0].dim
        if len(self.components) != self.dim:
            raise ValueError("vector field needs one component per coordinate")

    @classmethod
    def from_terms(cls, dim: int, comps) -> "PolyVectorField":
        return cls([PolyField(dim, terms) for terms in comps])

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.array([c.value(x) for c in self.components])

    def jacobian(self, x) -> np.ndarray:
        """J[i, j] = d component_i / d x_j."""
        x = np.asarray(x, dtype=np.float64)
        return np.array([c.gradient(x) for c in self.components])


def bracket(vf1: PolyVectorField, vf2: PolyVectorField) -> PolyVectorField:
    """[V, W] = DW . V - DV . W, exact on polynomial components."""
    dim = vf1.dim
    comps = []
    for i in range(dim):
        acc = constant_field(dim, 0.0)
        for j in range(dim):
            acc = acc + vf2.components[i].diff(j) * vf1.components[j]
            acc = acc - vf1.components[i].diff(j) * vf2.components[j]
        comps.append(acc)
    return PolyVectorField(comps)


def lie_bracket(vf1: PolyVectorField, vf2: PolyVectorField, x) -> np.ndarray:
    """[V, W](x); components must be polynomial."""
    return bracket(vf1, vf2).evaluate(x)


def model_noise_fields(model) -> list[PolyVectorField]:
    exprs = model.sigma_column_exprs()
    if exprs is None:
        raise TypeError(
            f"model {model.name!r} has non-polynomial noise columns; "
            "bracket computations are unsupported")
    return [PolyVectorField.from_terms(model.dim, col) for col in exprs]


def hormander_rank(model, x, max_order: int) -> tuple[int, bool]:
    """Rank at x of the span of the noise columns and their iterated
    brackets up to depth max_order; spanning iff rank == model.dim."""
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    base = model_noise_fields(model)
    collected = list(base)
    level = base
    for _ in range(max_order):
        level = [bracket(v, w) for v in level for w in base]
        collected.extend(level)
    vectors = np.array([vf.evaluate(x) for vf in collected])
    if not vectors.size or not np.any(vectors):
        return 0, model.dim == 0
    s = np.linalg.svd(vectors, compute_uv=False)
    rank = int(np.sum(s > SVD_RANK_RTOL * s[0]))
    return rank, rank == model.dim
