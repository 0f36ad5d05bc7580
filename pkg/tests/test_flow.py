import numpy as np
import pytest

from saddleflow.flow import (Cutoff, FlowOptions, StepFailure, certificates, dopri45, field,
                             field_jacobian, field_second, integrate, operator_norm, second_variational,
                             smooth_step, variational_integrate)
from saddleflow.functional import EnergyModel
from saddleflow.mollifier import preset


@pytest.fixture
def cut():
    return Cutoff(k=2, r=0.3, R=4.0, mu=0.1)


@pytest.fixture
def start():
    u = np.zeros(8)
    u[:2] = [0.6, -0.4]
    u[2:] = 0.05
    return u


def test_smooth_step():
    t = np.linspace(-0.5, 1.5, 201)
    s = smooth_step(t)
    assert np.all(s[t <= 0] == 1.0) and np.all(s[t >= 1] == 0.0)
    assert np.all(np.diff(s) <= 0)
    h = 1e-6
    tt = np.linspace(0.05, 0.95, 19)
    assert np.allclose(smooth_step(tt, 1), (smooth_step(tt + h) - smooth_step(tt - h)) / (2 * h), atol=1e-6)
    assert np.allclose(smooth_step(tt, 2), (smooth_step(tt + h, 1) - smooth_step(tt - h, 1)) / (2 * h),
                       atol=1e-4)


def test_cutoff_levels(cut):
    near = np.zeros(8)
    near[0] = 0.1  # inside the small ball
    assert cut.l(near) == 1.0
    sph = np.zeros(8)
    sph[1] = 4.0
    assert cut.l(sph) == 1.0
    far = np.zeros(8)
    far[0] = 2.0
    assert cut.l(far) == 0.0
    assert Cutoff.disabled().l(near) == 0.0
    assert Cutoff(2, 0.3, 4.0, 0.1, mode="frozen").l(far) == 1.0


def test_cutoff_gradient_and_hessian(cut, rng):
    x = np.zeros(8)
    x[0] = 0.45
    x[3] = 0.02
    assert 0.0 < cut.l(x) < 1.0
    h = 1e-6
    E = np.eye(8)
    g = np.array([(cut.l(x + h * e) - cut.l(x - h * e)) / (2 * h) for e in E])
    assert np.allclose(cut.grad(x), g, atol=1e-7)
    H = np.column_stack([(cut.grad(x + h * e) - cut.grad(x - h * e)) / (2 * h) for e in E])
    assert np.allclose(cut.hess(x), H, atol=1e-5)


def test_field_is_frozen_near_anchor(thm12_m16):
    x = np.zeros(8)
    x[0] = 0.05
    cut = Cutoff(k=1, r=0.3, R=4.0, mu=0.1)
    assert np.all(field(thm12_m16, cut, x) == 0.0)
    rec = integrate(thm12_m16, cut, x, 1.0)
    assert np.array_equal(rec.final, x)


def test_jacobians_match_finite_differences(thm12_m16, cut):
    x = np.zeros(8)
    x[0] = 0.45
    x[3] = 0.02
    h = 1e-6
    E = np.eye(8)
    Jfd = np.column_stack([(field(thm12_m16, cut, x + h * e) - field(thm12_m16, cut, x - h * e)) / (2 * h)
                           for e in E])
    assert np.max(np.abs(field_jacobian(thm12_m16, cut, x) - Jfd)) < 1e-7
    S = field_second(thm12_m16, cut, x, E[0], E)
    Sfd = (field_jacobian(thm12_m16, cut, x + 1e-5 * E[0]) - field_jacobian(thm12_m16, cut, x - 1e-5 * E[0])) / 2e-5
    assert np.max(np.abs(S - Sfd)) < 1e-5


def test_dopri_on_linear_decay():
    ts, ys, _, status, _ = dopri45(lambda t, y: -y, 0.0, np.array([1.0, 2.0]), 3.0, rtol=1e-10, atol=1e-12)
    assert status == "done" and ts[-1] == 3.0
    assert np.max(np.abs(ys[-1] - np.exp(-3.0) * np.array([1.0, 2.0]))) < 1e-9


def test_dopri_t_eval_and_blowup():
    ts, ys, *_ = dopri45(lambda t, y: -y, 0.0, np.array([1.0]), 1.0, t_eval=[0.25, 0.5])
    assert np.allclose(ts, [0.0, 0.25, 0.5])  # the initial state is kept
    assert np.allclose(ys[:, 0], np.exp(-ts), atol=1e-7)
    with pytest.raises(StepFailure):
        dopri45(lambda t, y: y**2, 0.0, np.array([1.0]), 2.0)


def test_linear_flow_is_exponential(basis8, rng):
    model = EnergyModel(preset("linear", lam=0.0), basis8)
    u = rng.normal(size=8)
    rec = variational_integrate(model, Cutoff.disabled(), u, 1.0)
    assert np.max(np.abs(rec.final - np.exp(-1) * u)) < 1e-8
    assert np.max(np.abs(rec.sens[-1] - np.exp(-1) * np.eye(8))) < 1e-8
    assert certificates(rec).passed


def test_semigroup(thm12_m16, cut, start):
    opts = FlowOptions(rtol=1e-10, atol=1e-12)
    a = integrate(thm12_m16, cut, start, 0.7, opts)
    b = integrate(thm12_m16, cut, a.final, 1.3, opts)
    c = integrate(thm12_m16, cut, start, 2.0, opts)
    assert np.max(np.abs(b.final - c.final)) < 1e-7


def test_energy_decreases_along_free_flow(cubic8, start):
    rec = integrate(cubic8, Cutoff.disabled(), 0.5 * start, 3.0)
    assert np.all(np.diff(rec.energies) <= 1e-12)


def test_sensitivity_finite_difference_halves(thm12_m16, cut, start):
    v = np.zeros(8)
    v[:2] = [0.6, 0.8]
    rv = variational_integrate(thm12_m16, cut, start, 2.0, directions=v[:, None])
    errs = []
    for d in (1e-3, 5e-4, 2.5e-4):
        rp = integrate(thm12_m16, cut, start + d * v, 2.0, steps=rv.steps)
        errs.append(np.linalg.norm((rp.final - rv.final) / d - rv.sens[-1][:, 0]))
    assert 1.7 <= errs[0] / errs[1] <= 2.3
    assert 1.7 <= errs[1] / errs[2] <= 2.3


def test_second_variation_is_symmetric(thm12_m16, cut, start):
    v = np.zeros(8)
    v[:2] = [0.6, 0.8]
    w = np.zeros(8)
    w[1] = 1.0
    s = second_variational(thm12_m16, cut, start, 1.0, v)
    s2 = second_variational(thm12_m16, cut, start, 1.0, w)
    assert np.max(np.abs(s.second[-1] @ w - s2.second[-1] @ v)) < 1e-8


def test_certificates_on_cutoff_flow(thm12_m16, cut, start):
    rec = variational_integrate(thm12_m16, cut, start, 2.0)
    rep = certificates(rec)
    assert rep.passed, rep.as_dict()
    assert rep.non_arrival == "pass"
    plain = integrate(thm12_m16, cut, start, 1.0)
    with pytest.raises(ValueError):
        certificates(plain)


def test_energy_floor_stops_escape(thm12_m16):
    x = np.zeros(8)
    x[0] = 5.0
    rec = integrate(thm12_m16, Cutoff.disabled(), x, 5.0, FlowOptions(energy_floor=-10.0))
    assert rec.status == "floor"
    assert rec.energies[-1] < -10.0


def test_operator_norm_with_clustered_spectrum():
    A = -np.diag(np.concatenate([[0.8], 1.0 - np.geomspace(1e-4, 1e-2, 11)]))
    assert abs(operator_norm(A) - (1.0 - 1e-4)) < 1e-14
    assert operator_norm(np.zeros((3, 3))) == 0.0
