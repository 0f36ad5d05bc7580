import math

import numpy as np
import pytest

from saddleflow.spectral import Domain, analyze, eigenpairs, evaluate, pad, synth


@pytest.mark.parametrize("domain", [Domain.interval(), Domain.interval(2.0), Domain.rectangle(),
                                    Domain.rectangle(math.pi, 2.0)])
def test_grid_reproduces_orthonormality(domain):
    b = eigenpairs(domain, 12)
    G = (b.samples * b.weights) @ b.samples.T
    assert np.max(np.abs(G - np.eye(12))) < 1e-10


def test_interval_eigenvalues_are_squares():
    b = eigenpairs(Domain.interval(), 10)
    assert np.allclose(b.lam, np.arange(1, 11) ** 2)


def test_rectangle_ties_break_by_mode_index():
    b = eigenpairs(Domain.rectangle(), 6)
    assert np.all(np.diff(b.lam) >= 0)
    # lambda = 5 twice: (1,2) before (2,1)
    assert b.lam[1] == b.lam[2] == 5.0
    assert tuple(b.modes[1]) == (1, 2) and tuple(b.modes[2]) == (2, 1)
    again = eigenpairs(Domain.rectangle(), 6)
    assert np.array_equal(b.modes, again.modes)


def test_synth_analyze_roundtrip(rng):
    b = eigenpairs(Domain.interval(), 16)
    c = rng.normal(size=16)
    # analyze returns L2 coefficients, i.e. c_i / sqrt(lambda_i)
    assert np.allclose(analyze(synth(c, b), b) * np.sqrt(b.lam), c, atol=1e-12)


def test_coefficient_norm_is_dirichlet_norm(rng):
    b = eigenpairs(Domain.interval(), 8)
    c = rng.normal(size=8)
    x = np.linspace(0, math.pi, 20001)
    u = evaluate(c, b, x)
    du = np.gradient(u, x)
    integral = float(np.sum(0.5 * (du[1:] ** 2 + du[:-1] ** 2) * np.diff(x)))
    assert abs(integral - c @ c) < 1e-4 * (c @ c)


def test_truncation_never_increases_norm(rng):
    c = rng.normal(size=20)
    norms = [np.linalg.norm(c[:k]) for k in range(1, 21)]
    assert np.all(np.diff(norms) >= 0)


def test_pad():
    c = np.array([1.0, -2.0])
    assert np.array_equal(pad(c, 4), [1.0, -2.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        pad(c, 1)


def test_evaluate_checks_dimension():
    b = eigenpairs(Domain.interval(), 4)
    with pytest.raises(ValueError):
        evaluate(np.ones(5), b, [0.3])


def test_bad_domains():
    with pytest.raises(ValueError):
        Domain("disc", (1.0,))
    with pytest.raises(ValueError):
        Domain.interval(-1.0)
    assert Domain("interval", ("pi",)).size == (math.pi,)
