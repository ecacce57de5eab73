import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from competlab import almgren
from competlab.errors import ConfigError, DegenerateError

from conftest import probe_state

x1 = lambda X: X[..., 0]
const = lambda X: 0 * X[..., 0] + 1.0


@pytest.fixture(scope="module")
def linear3():
    return probe_state(x1, dim=3, h=1 / 16)


def test_H_of_constant_and_linear(linear3):
    one = probe_state(const, dim=3, h=1 / 8)
    assert almgren.compute_H(one, 0.5)[1] == pytest.approx(4 * np.pi, rel=1e-12)
    for r in (0.3, 0.6):
        assert almgren.compute_H(linear3, r)[1] == pytest.approx(r**2 * 4 * np.pi / 3, rel=1e-6)


def test_H_scales_quadratically(linear3):
    scaled = linear3.with_values(3.0 * linear3.values)
    assert almgren.compute_H(scaled, 0.5)[1] == pytest.approx(9 * almgren.compute_H(linear3, 0.5)[1], rel=1e-14)


def test_E_of_linear_both_forms(linear3):
    for r in (0.3, 0.6):
        target = 4 * np.pi / 3 * r**2
        assert almgren.compute_E(linear3, r, "volume")[1] == pytest.approx(target, rel=1e-6)
        assert almgren.compute_E(linear3, r, "boundary")[1] == pytest.approx(target, rel=1e-6)


def test_E_of_constant_is_zero():
    one = probe_state(const, dim=2)
    f = almgren.energy_forms(one, 0.5)
    assert f["volume"] == 0.0 and f["boundary"] == 0.0


def test_energy_forms_on_solved_state(identity_sweep):
    st_ = identity_sweep[-1].state
    f = almgren.energy_forms(st_, 0.5)
    assert f["gap"] / abs(f["volume"]) < 5 * st_.grid.h


def test_quotient_examples():
    assert almgren.almgren_quotient(probe_state(const), 0.5) == 0.0
    u = probe_state(lambda X: X[..., 0] * X[..., 1], h=1 / 64)
    assert almgren.almgren_quotient(u, 0.5) == pytest.approx(2.0, abs=1e-3)
    with pytest.raises(DegenerateError):
        almgren.almgren_quotient(probe_state(lambda X: 0 * X[..., 0]), 0.5)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0))
def test_quotient_scale_invariance(c):
    u = probe_state(lambda X: np.exp(X[..., 0]) * np.cos(X[..., 1]), h=1 / 16)
    a = almgren.almgren_quotient(u, 0.4)
    b = almgren.almgren_quotient(u.with_values(c * u.values), 0.4)
    assert b == pytest.approx(a, rel=1e-12)


def test_interaction_term_is_nonnegative():
    # for beta < 0 the coupling adds to E
    base = probe_state(lambda X: np.stack([1 + X[..., 0], 1 - X[..., 0]]) / 2, h=1 / 16)
    e0 = almgren.energy_forms(base, 0.5)["volume"]
    e1 = almgren.energy_forms(base.with_values(base.values, beta=-10.0), 0.5)["volume"]
    assert e1 > e0


def test_monotonicity_of_harmonics():
    u = probe_state(lambda X: X[..., 0] ** 2 - X[..., 1] ** 2, h=1 / 32)
    prof = almgren.monotonicity_report(u, almgren.geometric_ladder(1 / 32, 0.8))
    assert prof.constants["C_star"] == 0.0
    assert almgren.monotonicity_certificate(prof).passed


def test_gamma_precondition_enforced(linear3):
    with pytest.raises(ConfigError):
        almgren.monotonicity_report(linear3, [0.2, 0.3], gamma_exponent=3.0)


def test_solved_family_certificates(identity_sweep, small_sweep):
    for fam in (identity_sweep, small_sweep):
        st_ = fam[-1].state
        prof = almgren.monotonicity_report(st_, almgren.geometric_ladder(st_.grid.h, 0.8))
        c = prof.constants
        assert np.isfinite(c["C_star"]) and c["H_positive"]
        assert c["N_plus_1_min"] >= -1e-2


def test_H_companion_monotone(small_sweep):
    st_ = small_sweep[-1].state
    prof = almgren.monotonicity_report(st_, almgren.geometric_ladder(st_.grid.h, 0.8))
    C = prof.constants["C_H"]
    for h in prof.H_i:
        y = h * np.exp(C * prof.radii)
        assert np.all(y[1:] >= (1 - 1e-2) * np.maximum.accumulate(y)[:-1])


def test_h_derivative_of_linear_and_constant():
    u = probe_state(x1, h=1 / 32)
    rep = almgren.h_derivative_check(u, almgren.geometric_ladder(1 / 32, 0.8))
    assert rep["sup"] <= 1e-3
    assert np.all(rep["fd_vs_analytic"] < 1e-3)
    rep = almgren.h_derivative_check(probe_state(const), almgren.geometric_ladder(1 / 32, 0.8))
    assert rep["sup"] == pytest.approx(0.0, abs=1e-12)


def test_h_derivative_bounded_across_beta(small_sweep):
    sups = []
    for r in small_sweep[1:]:
        st_ = r.state
        sups.append(almgren.h_derivative_check(st_, almgren.geometric_ladder(st_.grid.h, 0.8))["sup"])
    assert max(sups) / min(sups) <= 3.0


def test_pohozaev_linear_and_constant(linear3):
    assert almgren.pohozaev_residual(linear3, 0.5) < 1e-3
    assert almgren.pohozaev_residual(probe_state(const), 0.5) == 0.0


def test_threshold_radius_against_root():
    h = 1 / 64
    radii = almgren.geometric_ladder(h, 0.9)
    prof = almgren.radial_profile(probe_state(const, h=h), radii, pohozaev=False)
    C = 1.0
    root = brentq(lambda r: np.exp(C * r) - (2 - r), 0.0, 1.0)
    R, empty = almgren.threshold_radius(prof, C)
    assert not empty
    k = np.searchsorted(radii, R)
    assert abs(R - root) <= radii[min(k + 1, len(radii) - 1)] - radii[k - 1]


def test_threshold_radius_empty_for_degree_one():
    h = 1 / 32
    prof = almgren.radial_profile(probe_state(x1, h=h), almgren.geometric_ladder(h, 0.8), pohozaev=False)
    assert almgren.threshold_radius(prof, 0.0) == (0.0, True)


def test_doubling_checks():
    h = 1 / 32
    radii = almgren.geometric_ladder(h, 0.8)
    prof = almgren.radial_profile(probe_state(x1, h=h), radii, pohozaev=False)
    cert = almgren.doubling_check(prof, 1.0, "upper")
    assert cert.passed and cert.fitted["C"] == 0.0
    assert almgren.doubling_check(prof, 1.0, "lower").passed
    prof0 = almgren.radial_profile(probe_state(const, h=h), radii, pohozaev=False)
    assert almgren.doubling_check(prof0, 0.0, "upper").passed
    skip = almgren.doubling_check(prof, 0.5, "upper")
    assert skip.skipped and not skip.passed


def test_doubling_on_solved_band(small_sweep):
    st_ = small_sweep[-1].state
    prof = almgren.radial_profile(st_, almgren.geometric_ladder(st_.grid.h, 0.8), pohozaev=False)
    lo, hi = prof.N.min(), prof.N.max()
    assert almgren.doubling_check(prof, hi, "upper").passed
    assert almgren.doubling_check(prof, lo, "lower").passed


def test_profile_rows_schema(identity_sweep):
    st_ = identity_sweep[0].state
    head, data = almgren.radial_profile(st_, [0.2, 0.3, 0.4]).rows()
    assert head == ["r", "H_1", "H_2", "H", "E_vol", "E_bdy", "N", "dH_residual", "pohozaev_gap"]
    assert data.shape == (3, len(head))
