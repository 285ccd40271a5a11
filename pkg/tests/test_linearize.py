import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dichotomia import CallableNonlinearity, LinearSystem, NonautonomousSystem, make_example
from dichotomia.dichotomy import test_scaled_dichotomy as certify
from dichotomia.errors import (
    AssumptionError,
    ContractionError,
    DomainError,
    EscapeError,
    GapConditionError,
    HorizonError,
)
from dichotomia.linearize import (
    ConjugacyEvaluator,
    ConjugacyOptions,
    check_nesting,
    extend_by_fundamental_domains,
    foliation_fd_error,
    solve_foliation_point,
    verify_conjugacy,
)

G1, G2 = math.sqrt(0.5), math.sqrt(3.0)


def diag_nl(eta=0.05, eps=0.0):
    return make_example("constant", {"diag": [0.5, 3.0], "eta": eta, "nl_epsilon": eps})


@pytest.fixture(scope="module")
def setup():
    s = diag_nl()
    c = certify(s, 1.0, window=70, horizon=40)
    return s, c, ConjugacyEvaluator(s, c)


@pytest.fixture(scope="module")
def grid():
    g = np.linspace(-1.0, 1.0, 21)
    return np.array(np.meshgrid(g, g)).reshape(2, -1).T


def test_identity_at_origin(setup):
    _, _, ev = setup
    for m in (-3, 0, 4):
        assert np.array_equal(ev.forward(m, np.zeros(2)), np.zeros(2))
        assert np.array_equal(ev.derivative(m, np.zeros(2)), np.eye(2))


def test_conjugacy_residual_on_grid(setup, grid):
    s, c, ev = setup
    rep = verify_conjugacy(s, c, range(-5, 6), grid, evaluator=ev)
    assert rep.passed and rep.max_residual <= 1e-6
    assert rep.contraction_factor < 1
    assert rep.tail_bound < 1e-12
    d = rep.to_dict()
    assert d["construction"] == "green-kernel" and d["assumptions"]
    assert rep.to_csv().splitlines()[0] == "m,max_residual"


def test_inverse_roundtrip(setup, grid):
    _, _, ev = setup
    for m in (-2, 0, 5):
        w = ev.forward(m, grid)
        assert np.abs(ev.inverse(m, w) - grid).max() <= 1e-6
    hist = ev.last_picard
    assert all(b < a for a, b in zip(hist, hist[1:]) if b > 0)


def test_derivative_matches_differences(setup):
    _, _, ev = setup
    v, h = np.array([0.4, -0.3]), 1e-6
    fd = np.stack([(ev.forward(1, v + h * e) - ev.forward(1, v - h * e)) / (2 * h)
                   for e in np.eye(2)], axis=1)
    assert np.abs(fd - ev.derivative(1, v)).max() < 1e-8


def test_batched_matches_pointwise(setup, grid):
    _, _, ev = setup
    batch = ev.forward(2, grid[:5])
    single = np.stack([ev.forward(2, p) for p in grid[:5]])
    assert np.allclose(batch, single, rtol=0, atol=1e-14)


def test_autonomous_naturality(setup, grid):
    _, _, ev = setup
    assert np.abs(ev.forward(0, grid) - ev.forward(7, grid)).max() <= 1e-9


def test_zero_nonlinearity_gives_identity():
    s = make_example("constant", {"diag": [0.5, 3.0]})
    c = certify(s, 1.0, window=70, horizon=40)
    ev = ConjugacyEvaluator(s, c)
    v = np.array([[0.3, -2.0]])
    assert np.array_equal(ev.forward(0, v), v)
    assert np.array_equal(ev.inverse(0, v), v)


@given(m=st.integers(-5, 5), x=st.floats(-1, 1), y=st.floats(-1, 1))
def test_residual_property(setup, m, x, y):
    _, _, ev = setup
    assert ev.residual(m, np.array([x, y])) <= 1e-6


def test_time_dependent_systems():
    cases = [
        make_example("nonuniform-scalar", {"lam": 0.7, "eps": 0.1, "dimension": 2,
                                           "eta": 0.05, "nl_epsilon": 0.2}),
        make_example("random", {"base": [0.5, 3.0], "noise": 0.05, "seed": 1, "eta": 0.05}),
    ]
    pts = np.array([[0.5, -0.5], [-1.0, 0.8], [0.1, 0.9]])
    for s in cases:
        c = certify(s, 1.0, window=70, horizon=40)
        rep = verify_conjugacy(s, c, range(-3, 4), pts)
        assert rep.passed, rep.max_residual


def test_large_nonlinearity_refused():
    s = diag_nl(eta=0.9)
    c = certify(s, 1.0, window=70, horizon=40)
    ev = ConjugacyEvaluator(s, c)
    assert ev.contraction_factor(0) >= 1
    with pytest.raises(ContractionError):
        ev.inverse(0, np.ones(2))


def test_unbounded_nonlinearity_refused():
    lin = LinearSystem.constant(np.diag([0.5, 3.0]))
    nl = CallableNonlinearity(2, lambda m, x: 0.01 * x ** 3,
                              lambda m, x: 0.03 * x[..., :, None] ** 2 * np.eye(2),
                              B=1.0, eta=0.01)
    s = NonautonomousSystem(lin, nl)
    c = certify(s, 1.0, window=70, horizon=40)
    with pytest.raises(AssumptionError):
        ConjugacyEvaluator(s, c)


def test_horizon_beyond_certificate():
    s = diag_nl()
    c = certify(s, 1.0, window=20, horizon=20)
    ev = ConjugacyEvaluator(s, c, ConjugacyOptions(horizon=200))
    with pytest.raises(HorizonError):
        ev.forward(0, np.array([0.1, 0.1]))


# ---------------------------------------------------------------------------
# foliation


def test_foliation_canonical_point(setup):
    s, c, _ = setup
    r = solve_foliation_point(s, c, [0.3, 0.2], [0.1, 0.0], G1, G2)
    assert r.iterations <= 60 and r.residual <= 1e-8
    wn = r.weighted_norms()
    assert np.isfinite(r.weighted_sup) and wn[-1] <= wn[0]
    assert foliation_fd_error(s, c, r) <= 1e-4
    lines = r.trace_csv().splitlines()
    assert lines[0] == "n,norm_q,weighted_norm_q" and len(lines) == 62
    assert r.contraction_ratio < 1


def test_foliation_linear_case():
    s = make_example("constant", {"diag": [0.5, 3.0]})
    c = certify(s, 1.0, window=70, horizon=40)
    x, y = np.array([0.3, 0.2]), np.array([0.1, 0.0])
    r = solve_foliation_point(s, c, x, y, G1, G2)
    expect = np.array([[0.5 ** n * (y[0] - x[0]), 0.0] for n in range(61)])
    assert np.abs(r.q - expect).max() < 1e-14


def test_foliation_own_leaf_is_trivial(setup):
    s, c, _ = setup
    x = np.array([0.3, 0.2])
    r = solve_foliation_point(s, c, x, c.projection(0) @ x, G1, G2)
    assert np.abs(r.q).max() < 1e-14


def test_foliation_rejects_bad_rates(setup):
    s, c, _ = setup
    with pytest.raises(GapConditionError):
        solve_foliation_point(s, c, [0.3, 0.2], [0.1, 0.0], 1.2, 2.0)


def test_foliation_non_contraction():
    lin = LinearSystem.constant(np.diag([0.5, 3.0]))
    nl = CallableNonlinearity(2, lambda m, x: 0.8 * x,
                              lambda m, x: 0.8 * np.broadcast_to(np.eye(2), x.shape + (2,)),
                              B=0.0, eta=0.8)
    s = NonautonomousSystem(lin, nl)
    c = certify(s, 1.0, window=70, horizon=40)
    with pytest.raises(ContractionError):
        solve_foliation_point(s, c, [0.3, 0.2], [0.1, 0.0], G1, G2)


# ---------------------------------------------------------------------------
# global extension


@pytest.fixture(scope="module")
def scalar_map():
    s = make_example("constant", {"matrix": [[2.0]], "eta": 0.1})
    c = certify(s, 1.0, window=70, horizon=40)
    ev = ConjugacyEvaluator(s, c)
    return s, (lambda x: ev.forward(0, np.atleast_1d(x))), (lambda y: s.inverse_step(0, y))


@pytest.mark.parametrize("x", [0.7, -0.7, 2.0, -2.0, 5.0, -5.0])
def test_extension_residual(scalar_map, x):
    s, psi, finv = scalar_map
    val, j = extend_by_fundamental_domains(psi, finv, [[2.0]], x, 0.5)
    img, _ = extend_by_fundamental_domains(psi, finv, [[2.0]], s.step(0, np.array([x])), 0.5)
    assert abs(img[0] - 2.0 * val[0]) <= 1e-6
    if abs(x) == 5.0:
        assert j >= 3


def test_extension_agrees_inside_domain(scalar_map):
    _, psi, finv = scalar_map
    val, j = extend_by_fundamental_domains(psi, finv, [[2.0]], 0.3, 0.5)
    assert j == 0 and val[0] == psi(0.3)[0]


def test_extension_errors(scalar_map):
    _, psi, finv = scalar_map
    assert check_nesting(finv, 0.5, 1) < 1
    with pytest.raises(DomainError):
        extend_by_fundamental_domains(psi, lambda y: 2.0 * np.asarray(y), [[2.0]], 1.0, 0.5)
    with pytest.raises(EscapeError):
        extend_by_fundamental_domains(psi, finv, [[2.0]], 1e6, 0.5, max_steps=3)
