import numpy as np
import pytest

from saddleflow.functional import EnergyModel
from saddleflow.minimax import CriticalPointRecord
from saddleflow.mollifier import preset
from saddleflow.morse import RankDeficient, certify, generalized_index, tangent_negativity
from saddleflow.spectral import Domain, eigenpairs


def test_counts_on_diagonal():
    rep = generalized_index(np.diag([-2.0, -1.0, 0.0, 3.0]))
    assert (rep.n_neg, rep.n_null, rep.n_pos) == (2, 1, 1)
    assert rep.index == 3


def test_zero_tolerance_is_relative():
    # the band is zero_tol times the largest |eigenvalue| (here 1e3)
    rep = generalized_index(np.diag([-1e3, 1e-3, 5e2]), zero_tol=1e-8)
    assert rep.n_null == 0
    rep = generalized_index(np.diag([-1e3, 1e-3, 5e2]), zero_tol=1e-5)
    assert rep.n_null == 1


def test_rejects_asymmetric():
    with pytest.raises(ValueError):
        generalized_index(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_borderline_flag():
    # an eigenvalue whose classification flips inside the robustness band
    rep = generalized_index(np.diag([-1.0, 5e-8, 1.0]), zero_tol=1e-8, target=2)
    assert rep.borderline


def test_tangent_negativity(cubic8):
    H = np.diag([-2.0, -1.0, 1.0, 1.0])

    class Quadratic:
        def hessian_apply(self, x, V):
            return H @ V

    S = np.array([[1.0, 1.0], [0.0, 2.0], [0.0, 0.0], [0.0, 0.0]])
    assert tangent_negativity(Quadratic(), None, S) == pytest.approx(-1.0)
    with pytest.raises(RankDeficient):
        tangent_negativity(Quadratic(), None, np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]))


@pytest.mark.parametrize("j", [1, 2, 3])
def test_zero_solution_index_of_linear_problem(j):
    # lambda strictly between j^2 and (j+1)^2: exactly j negative directions
    lam = j * j + 0.5 * (2 * j + 1)
    model = EnergyModel(preset("linear", lam=lam), eigenpairs(Domain.interval(), 10))
    rep = generalized_index(model.hessian(np.zeros(10)))
    assert rep.n_neg == j and rep.n_null == 0


def test_resonant_linear_problem_is_flagged_degenerate():
    model = EnergyModel(preset("linear", lam=4.0), eigenpairs(Domain.interval(), 10))
    rep = generalized_index(model.hessian(np.zeros(10)))
    assert rep.n_null >= 1 and rep.n_neg == 1


def test_certify_attaches_report():
    model = EnergyModel(preset("linear", lam=5.0), eigenpairs(Domain.interval(), 6))
    cp = CriticalPointRecord(coeffs=np.zeros(6), energy=0.0, residual=0.0, iterations=0)
    assert certify(model, cp, k=2)
    assert cp.morse.n_neg == 2 and cp.certified
    assert not certify(model, cp, k=3)
    cp.residual = 1e-3
    with pytest.raises(ValueError):
        certify(model, cp, k=1)
