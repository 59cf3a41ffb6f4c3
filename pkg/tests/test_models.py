"""Model catalogue: matrix shapes, closed-form eigenvalues, growth bounds,
drift dissipativity, regularization identities, exact OU oracle."""

import numpy as np
import pytest

from ergolab import models
from ergolab.models import (ConfigurationError, DriftSpec,
                            RegularizationParams, UnsupportedModelError,
                            build_grushin, build_heisenberg,
                            build_lions_musiela, build_ou_identity,
                            exact_ou_transition, heisenberg_eigenvalues,
                            regularize_heisenberg, regularize_model)

OU1 = DriftSpec(kind="ou", gamma=1.0)


def test_heisenberg_sigma_examples():
    m = build_heisenberg(OU1)
    np.testing.assert_array_equal(m.sigma([1.0, 2.0, 5.0]),
                                  [[1, 0], [0, 1], [4, -2]])
    np.testing.assert_array_equal(m.sigma([0.0, 0.0, 0.0]),
                                  [[1, 0], [0, 1], [0, 0]])
    np.testing.assert_array_equal(m.diffusion_matrix([1.0, 0.0, 0.0]),
                                  [[1, 0, 0], [0, 1, -2], [0, -2, 4]])


def test_heisenberg_regularization_identity(rng_np):
    base = build_heisenberg(OU1)
    for rho in (0.0, 0.3, 1.0):
        reg = regularize_heisenberg(base, RegularizationParams(rho))
        assert reg.noise_dim == 3
        X = rng_np.uniform(-50, 50, size=(200, 3))
        diff = reg.diffusion_matrix_batch(X) - base.diffusion_matrix_batch(X)
        expect = np.zeros((3, 3))
        expect[2, 2] = rho**2
        np.testing.assert_allclose(diff, np.broadcast_to(expect, diff.shape),
                                   atol=1e-14)


def test_regularized_rho1_identity_at_origin():
    reg = regularize_heisenberg(build_heisenberg(OU1), RegularizationParams(1.0))
    np.testing.assert_allclose(reg.diffusion_matrix([0.0, 0, 0]), np.eye(3),
                               atol=0)
    np.testing.assert_allclose(heisenberg_eigenvalues([0.0, 0, 0], 1.0),
                               [1, 1, 1], atol=0)


def test_heisenberg_eigenvalue_closed_form(rng_np):
    X = rng_np.uniform(-20, 20, size=(500, 3))
    for rho in (0.05, 0.5, 2.0):
        reg = regularize_heisenberg(build_heisenberg(OU1),
                                    RegularizationParams(rho))
        A = reg.diffusion_matrix_batch(X)
        for x, a in zip(X, A):
            ev = np.sort(np.linalg.eigvalsh(a))
            cf = heisenberg_eigenvalues(x, rho)
            np.testing.assert_allclose(ev, cf, rtol=1e-10, atol=1e-10)


def test_smallest_eigenvalue_lower_bound(rng_np):
    # lambda_3 > rho^2 / (4 R^2 + rho^2 + 1) inside the cylinder radius R
    rho, R = 0.4, 5.0
    reg = regularize_heisenberg(build_heisenberg(OU1), RegularizationParams(rho))
    for _ in range(200):
        x = rng_np.uniform(-R / np.sqrt(2), R / np.sqrt(2), size=3)
        lam3 = np.linalg.eigvalsh(reg.diffusion_matrix(x))[0]
        assert lam3 > rho**2 / (4 * R**2 + rho**2 + 1)


def test_regularize_heisenberg_rejects_other_models():
    with pytest.raises(UnsupportedModelError):
        regularize_heisenberg(build_grushin(DriftSpec(kind="zero")),
                              RegularizationParams(0.1))


def test_grushin_examples():
    g = build_grushin(DriftSpec(kind="power", C=(6.0, 1.0), alpha=2.0))
    np.testing.assert_array_equal(g.sigma([3.0, 7.0]), [[1, 0], [0, 3]])
    greg = build_grushin(DriftSpec(kind="power", C=(6.0, 1.0), alpha=2.0),
                         rho=0.5)
    np.testing.assert_array_equal(greg.sigma([3.0, 7.0]),
                                  [[1, 0, 0], [0, 3, 0.5]])


def test_grushin_drift_condition_sampled(rng_np):
    # b = (-6 x1, -x2): -b1 x1 >= 6 for |x1| > 1, -b2 x2 >= 1 for |x2| > 1
    g = build_grushin(DriftSpec(kind="power", C=(6.0, 1.0), alpha=2.0))
    x1 = rng_np.uniform(1.0, 100.0, size=500) * rng_np.choice([-1, 1], 500)
    x2 = rng_np.uniform(1.0, 100.0, size=500) * rng_np.choice([-1, 1], 500)
    B = g.drift_batch(np.stack([x1, x2], axis=1))
    assert np.all(-B[:, 0] * x1 >= 6.0 - 1e-12)
    assert np.all(-B[:, 1] * x2 >= 1.0 - 1e-12)


def test_lions_musiela_bounded_sigma(rng_np):
    lm = build_lions_musiela(OU1)
    X = rng_np.uniform(-1e3, 1e3, size=(1000, 2))
    S = lm.sigma_batch(X)
    assert np.all(np.abs(S[:, 1, 1]) < 1.0)
    np.testing.assert_allclose(S[:, 1, 1],
                               X[:, 0] / np.sqrt(1 + X[:, 0] ** 2))


def test_ou_identity_drift_and_errors():
    m = build_ou_identity(2.0, 3)
    np.testing.assert_allclose(m.drift([1.0, -1.0, 3.0]), [-2.0, 2.0, -6.0])
    with pytest.raises(ConfigurationError):
        build_ou_identity(0.0, 3)
    with pytest.raises(ConfigurationError):
        build_ou_identity(1.0, 0)
    with pytest.raises(ConfigurationError):
        DriftSpec(kind="ou", gamma=-1.0)
    with pytest.raises(ConfigurationError):
        DriftSpec(kind="power", C=(1.0, -1.0), alpha=1.0)


def test_generic_regularization_ou_identity(rng_np):
    m = regularize_model(build_ou_identity(1.0, 3), 0.2)
    assert m.noise_dim == 6
    X = rng_np.normal(size=(50, 3))
    A = m.diffusion_matrix_batch(X)
    np.testing.assert_allclose(
        A, np.broadcast_to((1 + 0.04) * np.eye(3), A.shape), atol=1e-14)


def test_linear_growth_bound_sampled(rng_np):
    cases = [
        build_heisenberg(OU1),
        regularize_heisenberg(build_heisenberg(OU1), RegularizationParams(0.5)),
        build_grushin(DriftSpec(kind="power", C=(6.0, 1.0), alpha=2.0)),
        build_ou_identity(3.0, 4),
        build_lions_musiela(DriftSpec(kind="power", C=(1.0, 1.0), alpha=1.0)),
    ]
    for m in cases:
        X = rng_np.uniform(-1e3, 1e3, size=(10_000, m.dim))
        norms = np.linalg.norm(X, axis=1) + 1.0
        S = m.sigma_batch(X)
        fro = np.sqrt(np.einsum("nij,nij->n", S, S))
        assert np.all(fro <= m.growth_bound * norms * (1 + 1e-12))
        B = m.drift_batch(X)
        bn = np.linalg.norm(B, axis=1)
        assert np.all(bn <= m.growth_bound * norms * (1 + 1e-12))


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
def test_power_drift_dissipativity_sampled(alpha, rng_np):
    # certified constants: b_i(x) <= -C_eff |x|^(alpha-1) for x >= R
    spec = DriftSpec(kind="power", C=(2.0, 3.0, 4.0), alpha=alpha, R=1.0)
    C_eff, a, R = spec.certified_constants(3)
    x = rng_np.uniform(R, 1e3, size=(10_000, 3))
    B = spec.evaluate(x)
    bound = -np.asarray(C_eff) * x ** (a - 1.0)
    assert np.all(B <= bound * (1 - 1e-12))
    Bneg = spec.evaluate(-x)
    assert np.all(Bneg >= -bound * (1 - 1e-12))


def test_power_drift_odd_and_continuous(rng_np):
    spec = DriftSpec(kind="power", C=(1.5, 2.5), alpha=0.7)
    X = rng_np.uniform(-10, 10, size=(1000, 2))
    np.testing.assert_allclose(spec.evaluate(-X), -spec.evaluate(X),
                               rtol=1e-14)
    assert np.all(np.isfinite(spec.evaluate(np.zeros((1, 2)))))


def test_exact_ou_transition():
    x0 = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(exact_ou_transition(x0, 1.0, 0.0, np.zeros(3)), x0)
    np.testing.assert_allclose(
        exact_ou_transition(x0, 1.0, 1.0, np.zeros(3)),
        [np.exp(-1.0), 0.0, 0.0], rtol=1e-15)
    # t -> inf: coefficient of the noise tends to sqrt(1/gamma)
    for gamma in (0.5, 1.0, 2.0):
        out = exact_ou_transition(np.zeros(1), gamma, 60.0, np.ones(1))
        np.testing.assert_allclose(out, 1 / np.sqrt(gamma), rtol=1e-12)
    with pytest.raises(ConfigurationError):
        exact_ou_transition(x0, -1.0, 1.0, np.zeros(3))
    with pytest.raises(ConfigurationError):
        exact_ou_transition(x0, 1.0, -1.0, np.zeros(3))


def test_exact_ou_stationary_moments(rng_np):
    # the exact sampler at large t reproduces the stationary Gaussian
    gamma, n = 2.0, 200_000
    noise = rng_np.standard_normal(n)
    out = exact_ou_transition(np.full(n, 3.0), gamma, 50.0, noise)
    assert abs(np.mean(out)) < 3 * np.sqrt(1 / gamma / n) + 1e-3
    np.testing.assert_allclose(np.var(out), 1 / gamma, rtol=0.02)


def test_sigma_shapes_all_models(rng_np):
    for m in [build_heisenberg(OU1),
              regularize_heisenberg(build_heisenberg(OU1),
                                    RegularizationParams(0.1)),
              build_grushin(DriftSpec(kind="zero"), rho=0.2),
              build_ou_identity(1.0, 5),
              build_lions_musiela(OU1, rho=0.1)]:
        x = rng_np.normal(size=m.dim)
        assert m.sigma(x).shape == (m.dim, m.noise_dim)
        assert m.drift(x).shape == (m.dim,)
