from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from mmvi.base import DomainError, NoConvergence
from mmvi.modules.fieldtheory import (
    SolitonParams,
    continuum_energy,
    find_bounce_time,
    nearly_exact_bounce,
    sine_gordon_cell,
    sine_quotient,
    soliton,
    soliton_t,
    soliton_X,
    two_soliton,
    two_soliton_t,
    two_soliton_X,
)
from mmvi.modules.semidiscrete import _quadrature_cells
from mmvi.modules.solver import fd_jacobian

V = 0.9
PARAMS = SolitonParams(X0=12.5, v=V, Xmax=25.0)


def test_sine_quotient_matches_limit_for_tiny_differences():
    ya = np.array([0.3, 1.0, -2.0])
    yb = ya + np.array([1e-9, -3e-8, 0.0])
    np.testing.assert_allclose(sine_quotient(ya, yb), np.cos(0.5 * (ya + yb)), rtol=1e-12)


def test_sine_quotient_regular_branch():
    np.testing.assert_allclose(sine_quotient(0.0, np.pi / 2), 2.0 / np.pi, rtol=1e-14)


def test_closed_form_cell_matches_quadrature(rng, density):
    n = 40
    ya = rng.normal(scale=0.5, size=n)
    yb = ya + rng.normal(scale=0.5, size=n)
    delta = rng.uniform(0.2, 2.0, n)
    closed = sine_gordon_cell(ya, yb, delta)
    quad = _quadrature_cells(replace(density, cell_potential=None), ya, yb, delta)
    for exact, approx in zip(closed, quad):
        np.testing.assert_allclose(exact, approx, rtol=1e-9, atol=1e-9)


def test_closed_form_cell_derivatives_match_finite_differences(rng):
    ya, yb, delta = rng.normal(size=5), rng.normal(size=5), rng.uniform(0.5, 2.0, 5)
    # includes nearly equal endpoints, where the series branches are active
    yb[0] = ya[0] + 1e-4
    _, grad, hess = sine_gordon_cell(ya, yb, delta)
    for k in range(5):
        z = np.array([ya[k], yb[k], delta[k]])

        def value(z):
            return np.atleast_1d(sine_gordon_cell(z[:1], z[1:2], z[2:])[0])

        def gradient(z):
            return sine_gordon_cell(z[:1], z[1:2], z[2:])[1][0]

        np.testing.assert_allclose(fd_jacobian(value, z)[0], grad[k], rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(fd_jacobian(gradient, z), hess[k], rtol=1e-6, atol=1e-7)


def test_soliton_derivatives_match_finite_differences():
    X = np.linspace(5.0, 20.0, 31)
    h = 1e-6
    np.testing.assert_allclose(
        soliton_X(X, 0.7, PARAMS), (soliton(X + h, 0.7, PARAMS) - soliton(X - h, 0.7, PARAMS)) / (2 * h), atol=1e-7
    )
    np.testing.assert_allclose(
        soliton_t(X, 0.7, PARAMS), (soliton(X, 0.7 + h, PARAMS) - soliton(X, 0.7 - h, PARAMS)) / (2 * h), atol=1e-7
    )


def test_two_soliton_derivatives_match_finite_differences():
    X = np.linspace(-6.0, 6.0, 41)
    t, h = -1.3, 1e-6
    np.testing.assert_allclose(
        two_soliton_X(X, t, V), (two_soliton(X + h, t, V) - two_soliton(X - h, t, V)) / (2 * h), atol=1e-7
    )
    np.testing.assert_allclose(
        two_soliton_t(X, t, V), (two_soliton(X, t + h, V) - two_soliton(X, t - h, V)) / (2 * h), atol=1e-7
    )


def test_kink_connects_zero_to_two_pi():
    assert soliton(-1e3, 0.0, PARAMS) == pytest.approx(0.0, abs=1e-12)
    assert soliton(1e3, 0.0, PARAMS) == pytest.approx(2.0 * np.pi, abs=1e-12)
    assert soliton(12.5, 0.0, PARAMS) == pytest.approx(np.pi, abs=1e-14)


@pytest.mark.parametrize("v", [1.0, -1.0, 1.5])
def test_speed_of_light_is_rejected(v):
    with pytest.raises(DomainError):
        SolitonParams(X0=0.0, v=v, Xmax=1.0)
    with pytest.raises(DomainError):
        two_soliton(0.0, 0.0, v)


def test_bounce_time():
    T = find_bounce_time(25.0, V)
    assert T == pytest.approx(13.84, abs=0.01)
    assert two_soliton(12.5, T, V) == pytest.approx(np.pi, abs=1e-12)


def test_bounce_reference_starts_as_the_single_kink():
    T = find_bounce_time(25.0, V)
    X = np.linspace(0.0, 25.0, 101)
    np.testing.assert_allclose(nearly_exact_bounce(X, 0.0, 25.0, V, T), soliton(X, 0.0, PARAMS), atol=1e-9)


def test_bounce_reference_is_periodic():
    T = find_bounce_time(25.0, V)
    X = np.linspace(0.0, 25.0, 51)
    np.testing.assert_allclose(
        nearly_exact_bounce(X, 3.0, 25.0, V, T), nearly_exact_bounce(X, 3.0 + 4.0 * T, 25.0, V, T), atol=1e-10
    )


def test_bounce_reference_rejects_negative_time():
    with pytest.raises(DomainError):
        nearly_exact_bounce(np.zeros(3), -1.0, 25.0, V, 13.84)


def test_single_kink_energy(density):
    E = continuum_energy(
        lambda X: soliton(X, 0.0, PARAMS),
        lambda X: soliton_t(X, 0.0, PARAMS),
        density,
        25.0,
        400,
        profile_X=lambda X: soliton_X(X, 0.0, PARAMS),
    )
    assert E == pytest.approx(8.0 / np.sqrt(1.0 - V * V), rel=1e-8)


def test_two_kink_energy(density):
    E = continuum_energy(
        lambda X: two_soliton(X - 12.5, -5.0, V),
        lambda X: two_soliton_t(X - 12.5, -5.0, V),
        density,
        25.0,
        400,
        profile_X=lambda X: two_soliton_X(X - 12.5, -5.0, V),
    )
    assert E == pytest.approx(16.0 / np.sqrt(1.0 - V * V), rel=1e-6)


def test_continuum_energy_needs_two_cells(density):
    with pytest.raises(ValueError):
        continuum_energy(np.sin, np.cos, density, 1.0, 1)


def test_closed_form_cell_gradient_away_from_the_series_branch():
    ya, yb, delta = np.array([0.3, -1.2]), np.array([1.4, 0.9]), np.array([0.8, 1.7])
    _, grad, _ = sine_gordon_cell(ya, yb, delta)
    for k in range(2):

        def value(z):
            return np.atleast_1d(sine_gordon_cell(z[:1], z[1:2], z[2:])[0])

        z = np.array([ya[k], yb[k], delta[k]])
        np.testing.assert_allclose(fd_jacobian(value, z)[0], grad[k], rtol=1e-8, atol=1e-9)


def _wave_operator(phi, X, t, h=1e-4):
    """φ_tt − φ_XX + sin φ by centered differences."""
    phi_tt = (phi(X, t + h) - 2.0 * phi(X, t) + phi(X, t - h)) / h**2
    phi_XX = (phi(X + h, t) - 2.0 * phi(X, t) + phi(X - h, t)) / h**2
    return phi_tt - phi_XX + np.sin(phi(X, t))


def test_soliton_solves_sine_gordon():
    X = np.linspace(8.0, 17.0, 37)
    residual = _wave_operator(lambda X, t: soliton(X, t, PARAMS), X, 0.4)
    assert np.max(np.abs(residual)) < 1e-5


@pytest.mark.parametrize("t", [-5.0, -0.5, 2.0])
def test_two_soliton_solves_sine_gordon(t):
    X = np.linspace(-6.0, 6.0, 49)
    residual = _wave_operator(lambda X, t: two_soliton(X, t, V), X, t)
    assert np.max(np.abs(residual)) < 1e-5


def test_two_kink_energy_is_conserved(density):
    def energy(t):
        return continuum_energy(
            lambda X: two_soliton(X - 12.5, t, V),
            lambda X: two_soliton_t(X - 12.5, t, V),
            density,
            25.0,
            400,
            profile_X=lambda X: two_soliton_X(X - 12.5, t, V),
        )

    E = [energy(t) for t in (-5.0, 0.0, 5.0)]
    assert E[1] == pytest.approx(E[0], rel=1e-6)
    assert E[2] == pytest.approx(E[0], rel=1e-6)


def test_bounce_reference_is_a_shifted_pair_before_the_first_return():
    T = find_bounce_time(25.0, V)
    X = np.linspace(0.0, 25.0, 26)
    for t in (0.0, 0.5 * T, T, 1.9 * T):
        np.testing.assert_allclose(
            nearly_exact_bounce(X, t, 25.0, V, T), two_soliton(X - 25.0, t - T, V) + 2.0 * np.pi, rtol=0, atol=1e-14
        )


def test_bounce_time_grows_with_the_domain():
    times = [find_bounce_time(Xmax, V) for Xmax in (20.0, 25.0, 30.0)]
    assert times[0] < times[1] < times[2]
    for Xmax, T in zip((20.0, 25.0, 30.0), times):
        assert abs(two_soliton(0.5 * Xmax, T, V) - np.pi) < 1e-12


def test_bounce_time_needs_a_bracket():
    # the pair never reaches π at the centre of a domain this small
    with pytest.raises(NoConvergence):
        find_bounce_time(0.5, V)
