import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from competlab.errors import DomainError, PreconditionError, SingularityError, SpectralError
from competlab.fields import (CoefficientSpec, FramedSpec, LiftedSpec, Reaction, check_hypotheses,
                              div_A_grad_radius, div_Z, eval_matrix, grad_mu, jacobian_Z, matrix_sqrt, mu,
                              sample_points, spec_from_dict, vector_field_Z, verify_coefficient_bounds)

points3 = st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3)


def test_identity_matrix_everywhere():
    s = CoefficientSpec(dim=3)
    x = sample_points(3, 20, 1.0)
    assert np.array_equal(eval_matrix(s, x), np.broadcast_to(np.eye(3), (20, 3, 3)))


@pytest.mark.parametrize("family", ["diagonal-smooth", "rotated-perturbation"])
def test_perturbations_vanish_at_origin(family):
    s = CoefficientSpec(dim=3, matrix_family=family, eps=0.1)
    assert np.allclose(eval_matrix(s, np.zeros(3)), np.eye(3), atol=1e-15)


def test_rotated_entries_match_scalar_formula():
    s = CoefficientSpec(dim=3, matrix_family="rotated-perturbation", eps=0.1)
    x = np.array([0.5, 0.0, 0.0])
    A = eval_matrix(s, x)
    for k in range(3):
        for l in range(3):
            assert A[k, l] == pytest.approx((k == l) + 0.1 * np.sin(x[k] + x[l]), abs=1e-15)


def test_domain_error_outside_box():
    s = CoefficientSpec(dim=2, domain_halfwidth=1.0)
    with pytest.raises(DomainError):
        eval_matrix(s, np.array([1.5, 0.0]))


def test_mu_scalar_matrices():
    x = sample_points(3, 10, 1.0)
    assert np.allclose(mu(CoefficientSpec(dim=3), x), 1.0)
    s2 = CoefficientSpec(dim=3, matrix_family="constant", constant_matrix=((2, 0, 0), (0, 2, 0), (0, 0, 2)))
    assert np.allclose(mu(s2, x), 2.0)


def test_mu_rotated_against_quadratic_form():
    s = CoefficientSpec(dim=3, matrix_family="rotated-perturbation", eps=0.1)
    x = np.array([1.0, 0.0, 0.0])
    assert mu(s, x) == pytest.approx(1 + 0.1 * np.sin(2.0), rel=1e-14)


def test_singular_at_origin():
    s = CoefficientSpec(dim=2)
    for fn in (mu, vector_field_Z, grad_mu, jacobian_Z, div_Z):
        with pytest.raises(SingularityError):
            fn(s, np.zeros(2))


def test_Z_is_radial_for_scalar_matrices():
    x = sample_points(2, 30, 1.0)
    s = CoefficientSpec(dim=2, matrix_family="constant", constant_matrix=((3, 0), (0, 3)))
    assert np.allclose(vector_field_Z(s, x), x)
    assert np.allclose(div_Z(CoefficientSpec(dim=2), x), 2.0)


def test_Z_deviation_is_quadratic_in_x():
    s = CoefficientSpec(dim=3, matrix_family="diagonal-smooth", eps=0.1)
    x = sample_points(3, 200, 0.5)
    r = np.linalg.norm(x, axis=1)
    ratio = np.linalg.norm(vector_field_Z(s, x) - x, axis=1) / (0.1 * r**2)
    assert ratio.max() < 5.0


def test_matrix_sqrt_examples():
    assert np.allclose(matrix_sqrt(np.eye(3)), np.eye(3))
    assert np.allclose(matrix_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-15)
    with pytest.raises(SpectralError) as e:
        matrix_sqrt(np.diag([1.0, -2.0]))
    assert e.value.eigenvalue == pytest.approx(-2.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_matrix_sqrt_multiplies_back(seed):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(3, 3))
    S = Q @ Q.T + 0.1 * np.eye(3)
    R = matrix_sqrt(S)
    assert np.linalg.norm(R @ R - S) <= 1e-12 * np.linalg.norm(S)
    assert np.all(np.linalg.eigvalsh(R) > 0)
    assert np.linalg.norm(matrix_sqrt(R @ R) - R) < 1e-10


@settings(max_examples=60, deadline=None)
@given(points3, st.sampled_from(["identity", "diagonal-smooth", "rotated-perturbation"]),
       st.floats(0.0, 0.3))
def test_mu_between_theta_and_NM(x, family, eps):
    s = CoefficientSpec(dim=3, matrix_family=family, eps=eps)
    b = s.bounds
    m = mu(s, np.array(x))
    assert b.theta - 1e-12 <= m <= 3 * b.M + 1e-12


@settings(max_examples=40, deadline=None)
@given(points3, st.floats(0.0, 0.3))
def test_matrix_gradient_matches_differences(x, eps):
    s = CoefficientSpec(dim=3, matrix_family="rotated-perturbation", eps=eps)
    x = np.array(x)
    D = s.matrix_grad(x)
    d = 1e-6
    for m in range(3):
        e = np.zeros(3)
        e[m] = d
        fd = (s.matrix(x + e) - s.matrix(x - e)) / (2 * d)
        assert np.allclose(D[m], fd, atol=1e-8)


def test_geometric_derivatives_match_differences():
    s = CoefficientSpec(dim=3, matrix_family="diagonal-smooth", eps=0.2)
    x = np.array([0.3, -0.2, 0.4])
    d = 1e-6
    E = np.eye(3) * d
    g = np.array([(mu(s, x + e) - mu(s, x - e)) / (2 * d) for e in E])
    assert np.allclose(grad_mu(s, x), g, atol=1e-8)
    J = np.array([(vector_field_Z(s, x + e) - vector_field_Z(s, x - e)) / (2 * d) for e in E])
    assert np.allclose(jacobian_Z(s, x), J, atol=1e-8)
    assert div_Z(s, x) == pytest.approx(np.trace(J), abs=1e-8)


def test_div_A_grad_radius_for_identity():
    x = sample_points(3, 20, 1.0)
    assert np.allclose(div_A_grad_radius(CoefficientSpec(dim=3), x), 2 / np.linalg.norm(x, axis=1))


def test_bounds_report_identity_is_zero():
    rep = verify_coefficient_bounds(CoefficientSpec(dim=3), 200)
    assert all(v == pytest.approx(0.0, abs=1e-12) for v in rep.constants.values())


def test_bounds_report_shrinks_with_eps():
    vals = [verify_coefficient_bounds(CoefficientSpec(dim=3, matrix_family="diagonal-smooth", eps=e), 300)
            for e in (0.1, 0.05, 0.025)]
    for key in vals[0].constants:
        seq = [v.constants[key] for v in vals]
        assert seq[0] > seq[1] > seq[2] > 0


def test_bounds_report_requires_identity_at_origin():
    s = CoefficientSpec(dim=2, matrix_family="constant", constant_matrix=((2, 0), (0, 1)))
    with pytest.raises(PreconditionError):
        verify_coefficient_bounds(s, 10)


@pytest.mark.parametrize("family,eps", [("identity", 0.0), ("diagonal-smooth", 0.3), ("rotated-perturbation", 0.2)])
def test_declared_hypotheses_hold(family, eps):
    s = CoefficientSpec(dim=3, matrix_family=family, eps=eps, weight_family="smooth", weight_eps=0.3,
                        reaction=Reaction("logistic", (0.5, -0.3), 2.0), m=1.5)
    assert all(check_hypotheses(s).values())


def test_spec_roundtrip_through_dict():
    base = CoefficientSpec(dim=2, matrix_family="diagonal-smooth", eps=0.1, reaction=Reaction("linear", (0.2,)))
    framed = FramedSpec(base, np.array([0.1, 0.2]), 2 * np.eye(2), 0.5 * np.eye(2))
    for s in (base, framed, LiftedSpec(base)):
        t = spec_from_dict(s.as_dict())
        x = sample_points(s.dim, 5, 0.3)
        assert np.allclose(t.matrix(x), s.matrix(x))


def test_invalid_families_rejected():
    with pytest.raises(ValueError):
        CoefficientSpec(dim=4)
    with pytest.raises(ValueError):
        CoefficientSpec(dim=2, matrix_family="rotated-perturbation", eps=0.6)
    with pytest.raises(ValueError):
        Reaction("cubic")
