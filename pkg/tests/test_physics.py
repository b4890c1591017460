import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from weno_decmdp import physics
from weno_decmdp.physics import (
    ConservedState1D,
    EquationSpec,
    PhysicsError,
    RiemannIC,
    VacuumError,
    burgers_exact,
    burgers_flux,
    check_admissible,
    conserved_to_primitive,
    euler2d_flux_x,
    euler_flux,
    exact_riemann_euler,
    initial_condition,
    kelvin_helmholtz_ic,
    max_wave_speed,
    primitive_to_conserved,
    riemann_ic_from_config,
    sample_riemann,
    solve_riemann,
)

GAMMA = 1.4
SOD = RiemannIC((1.0, 0.0, 1.0), (0.125, 0.0, 0.1), 0.5)


# --- independent star-state oracle -----------------------------------------
#
# Bisection on the monotone pressure function. Deliberately a separate
# implementation from the package's Newton iteration so the two can
# cross-check each other.

def _f_side(p, rho_k, p_k, gamma):
    a_k = math.sqrt(gamma * p_k / rho_k)
    if p > p_k:
        big_a = 2.0 / ((gamma + 1.0) * rho_k)
        big_b = (gamma - 1.0) / (gamma + 1.0) * p_k
        return (p - p_k) * math.sqrt(big_a / (p + big_b))
    return 2.0 * a_k / (gamma - 1.0) * ((p / p_k) ** ((gamma - 1.0) / (2.0 * gamma)) - 1.0)


def star_by_bisection(ic: RiemannIC, gamma: float):
    rho_l, u_l, p_l = ic.left
    rho_r, u_r, p_r = ic.right

    def phi(p):
        return _f_side(p, rho_l, p_l, gamma) + _f_side(p, rho_r, p_r, gamma) + (u_r - u_l)

    lo, hi = 1e-14, 10.0 * max(p_l, p_r)
    while phi(hi) < 0.0:
        hi *= 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    p_star = 0.5 * (lo + hi)
    u_star = 0.5 * (u_l + u_r) + 0.5 * (_f_side(p_star, rho_r, p_r, gamma) - _f_side(p_star, rho_l, p_l, gamma))
    return p_star, u_star


def test_sod_star_state_literature_values():
    sol = solve_riemann(SOD, GAMMA)
    assert sol.p_star == pytest.approx(0.30313, abs=1e-5)
    assert sol.u_star == pytest.approx(0.92745, abs=1e-5)


def test_star_state_matches_bisection_oracle():
    for name in ("sod", "sod2", "lax", "sonic-rarefaction"):
        ic = riemann_ic_from_config(name)
        sol = solve_riemann(ic, GAMMA)
        p_ref, u_ref = star_by_bisection(ic, GAMMA)
        assert sol.p_star == pytest.approx(p_ref, rel=1e-10, abs=1e-12), name
        assert sol.u_star == pytest.approx(u_ref, rel=1e-9, abs=1e-10), name


@given(
    rho_l=st.floats(0.1, 5.0),
    p_l=st.floats(0.1, 5.0),
    rho_r=st.floats(0.1, 5.0),
    p_r=st.floats(0.1, 5.0),
    u_l=st.floats(-1.5, 1.5),
    u_r=st.floats(-1.5, 1.5),
)
@settings(max_examples=40, deadline=None)
def test_newton_and_bisection_agree_on_random_tubes(rho_l, p_l, rho_r, p_r, u_l, u_r):
    a_l = math.sqrt(GAMMA * p_l / rho_l)
    a_r = math.sqrt(GAMMA * p_r / rho_r)
    assume(2.0 * (a_l + a_r) / (GAMMA - 1.0) > (u_r - u_l) + 0.1)
    ic = RiemannIC((rho_l, u_l, p_l), (rho_r, u_r, p_r), 0.5)
    sol = solve_riemann(ic, GAMMA)
    p_ref, u_ref = star_by_bisection(ic, GAMMA)
    assert sol.p_star == pytest.approx(p_ref, rel=1e-8, abs=1e-11)
    assert sol.u_star == pytest.approx(u_ref, rel=1e-7, abs=1e-9)


def test_vacuum_raises():
    with pytest.raises(VacuumError):
        solve_riemann(RiemannIC((1.0, -10.0, 0.1), (1.0, 10.0, 0.1), 0.5), GAMMA)


# --- sampling the self-similar solution ------------------------------------


def test_sample_far_field_recovers_input_states():
    sol = solve_riemann(SOD, GAMMA)
    rho, u, p = sample_riemann(sol, np.array([-50.0, 50.0]))
    assert (rho[0], u[0], p[0]) == (1.0, 0.0, 1.0)
    assert (rho[1], u[1], p[1]) == (0.125, 0.0, 0.1)


def test_equal_states_produce_no_waves():
    ic = RiemannIC((0.7, 0.3, 0.9), (0.7, 0.3, 0.9), 0.5)
    rho, u, p = exact_riemann_euler(ic, GAMMA, np.linspace(-3, 3, 101))
    assert np.allclose(rho, 0.7, rtol=1e-9)
    assert np.allclose(u, 0.3, rtol=1e-9)
    assert np.allclose(p, 0.9, rtol=1e-9)


def test_pressure_and_velocity_continuous_across_contact():
    sol = solve_riemann(SOD, GAMMA)
    us = sol.u_star
    rho, u, p = sample_riemann(sol, np.array([us - 1e-9, us + 1e-9]))
    assert p[0] == pytest.approx(p[1], rel=1e-6)
    assert u[0] == pytest.approx(u[1], rel=1e-6)
    assert abs(rho[0] - rho[1]) > 0.05  # the contact carries a density jump


def test_discontinuities_only_at_reported_wave_speeds():
    """Scan the fan: jumps may appear only at the contact and the shock."""
    sol = solve_riemann(SOD, GAMMA)
    xi = np.linspace(-2.0, 2.0, 4001)
    rho, u, p = sample_riemann(sol, xi)
    dxi = xi[1] - xi[0]
    loci = (sol.speeds["contact"], sol.speeds["right_shock"])
    for jump_at in np.nonzero(np.abs(np.diff(rho)) > 0.01)[0]:
        assert min(abs(xi[jump_at] - s) for s in loci) < 2 * dxi
    # pressure and velocity additionally stay continuous at the contact
    for field in (u, p):
        for jump_at in np.nonzero(np.abs(np.diff(field)) > 0.01)[0]:
            assert abs(xi[jump_at] - sol.speeds["right_shock"]) < 2 * dxi


def test_rankine_hugoniot_across_reported_shock():
    sol = solve_riemann(SOD, GAMMA)
    s = sol.speeds["right_shock"]
    rho, u, p = sample_riemann(sol, np.array([s - 1e-8, s + 1e-8]))
    q = primitive_to_conserved(rho, u, p, GAMMA)
    f = euler_flux(q, GAMMA)
    jump_f = f[:, 1] - f[:, 0]
    jump_q = q[:, 1] - q[:, 0]
    assert np.allclose(jump_f, s * jump_q, rtol=1e-8, atol=1e-10)


def test_sampled_solution_conserves_integrals():
    """The exact solution obeys the integral form of the conservation law.

    On a domain wide enough that the fan has not reached the edges,
    d/dt of the integral of q equals the boundary flux difference; midpoint
    sampling across the two discontinuities limits accuracy to O(dx).
    """
    t = 0.2
    x = np.linspace(-2.0, 2.0, 8001)
    dx = x[1] - x[0]
    rho, u, p = exact_riemann_euler(SOD, GAMMA, x / t)
    q_t = primitive_to_conserved(rho, u, p, GAMMA)
    q_0 = primitive_to_conserved(
        np.where(x < 0, 1.0, 0.125), np.zeros_like(x), np.where(x < 0, 1.0, 0.1), GAMMA
    )
    gain = (q_t - q_0).sum(axis=1) * dx
    f_l = euler_flux(q_0[:, :1], GAMMA)[:, 0]
    f_r = euler_flux(q_0[:, -1:], GAMMA)[:, 0]
    assert np.allclose(gain, t * (f_l - f_r), atol=5e-4)


# --- EOS, fluxes, wave speeds ----------------------------------------------


def test_euler_flux_hand_values():
    q = primitive_to_conserved(np.array([1.0]), np.array([0.0]), np.array([1.0]), GAMMA)
    assert np.allclose(q[:, 0], [1.0, 0.0, 2.5], rtol=1e-15)
    assert np.allclose(euler_flux(q, GAMMA)[:, 0], [0.0, 1.0, 0.0], rtol=1e-15)

    q2 = primitive_to_conserved(np.array([0.125]), np.array([0.0]), np.array([0.1]), GAMMA)
    assert np.allclose(q2[:, 0], [0.125, 0.0, 0.25], rtol=1e-15)
    assert np.allclose(euler_flux(q2, GAMMA)[:, 0], [0.0, 0.1, 0.0], rtol=1e-15)


@given(rho=st.floats(0.05, 10.0), p=st.floats(0.05, 10.0))
@settings(max_examples=30, deadline=None)
def test_static_flux_is_pure_pressure(rho, p):
    q = primitive_to_conserved(np.array([rho]), np.array([0.0]), np.array([p]), GAMMA)
    f = euler_flux(q, GAMMA)
    assert f[0, 0] == 0.0 and f[2, 0] == 0.0
    assert f[1, 0] == pytest.approx(p, rel=1e-12)


@given(
    rho=st.floats(0.05, 10.0),
    u=st.floats(-5.0, 5.0),
    p=st.floats(0.05, 10.0),
    lam=st.floats(0.1, 10.0),
)
@settings(max_examples=40, deadline=None)
def test_flux_scales_linearly_with_density_and_pressure(rho, u, p, lam):
    base = euler_flux(primitive_to_conserved(np.array([rho]), np.array([u]), np.array([p]), GAMMA), GAMMA)
    scaled = euler_flux(
        primitive_to_conserved(np.array([lam * rho]), np.array([u]), np.array([lam * p]), GAMMA), GAMMA
    )
    assert np.allclose(scaled, lam * base, rtol=1e-11)


@given(rho=st.floats(0.05, 10.0), u=st.floats(-5.0, 5.0), p=st.floats(0.05, 10.0))
@settings(max_examples=50, deadline=None)
def test_eos_round_trip(rho, u, p):
    q = primitive_to_conserved(np.array([rho]), np.array([u]), np.array([p]), GAMMA)
    rho2, u2, p2 = conserved_to_primitive(q, GAMMA)
    assert rho2[0] == pytest.approx(rho, rel=1e-12)
    assert u2[0] == pytest.approx(u, rel=1e-12, abs=1e-12)
    assert p2[0] == pytest.approx(p, rel=1e-12)


def test_burgers_flux_values():
    assert burgers_flux(0.0) == 0.0
    assert burgers_flux(2.0) == 2.0
    assert burgers_flux(-1.0) == 0.5


def test_max_wave_speed_euler():
    q = primitive_to_conserved(np.array([1.0]), np.array([0.0]), np.array([1.0]), GAMMA)
    assert max_wave_speed(q, EquationSpec("euler1d")) == pytest.approx(math.sqrt(1.4), rel=1e-12)
    # mixing in the quieter Sod right state does not raise the bound
    q2 = primitive_to_conserved(np.array([1.0, 0.125]), np.array([0.0, 0.0]), np.array([1.0, 0.1]), GAMMA)
    assert max_wave_speed(q2, EquationSpec("euler1d")) == pytest.approx(math.sqrt(1.4), rel=1e-12)


def test_max_wave_speed_burgers():
    q = np.full((1, 6), 0.5)
    assert max_wave_speed(q, EquationSpec("burgers1d")) == 0.5


def test_check_admissible_rejects_bad_states():
    spec = EquationSpec("euler1d")
    good = primitive_to_conserved(np.array([1.0, 1.0, 1.0, 1.0, 1.0]), np.zeros(5), np.ones(5), GAMMA)
    check_admissible(good, spec)
    bad_rho = good.copy()
    bad_rho[0, 2] = -1.0
    with pytest.raises(PhysicsError):
        check_admissible(bad_rho, spec)
    bad_p = good.copy()
    bad_p[2, 2] = 0.0  # energy below kinetic -> negative pressure
    with pytest.raises(PhysicsError):
        check_admissible(bad_p, spec)
    bad_nan = good.copy()
    bad_nan[1, 0] = math.nan
    with pytest.raises(PhysicsError):
        check_admissible(bad_nan, spec)


def test_equation_spec_validation():
    with pytest.raises(PhysicsError):
        EquationSpec("maxwell")
    with pytest.raises(PhysicsError):
        EquationSpec("euler1d", gamma=1.0)
    EquationSpec("burgers1d", gamma=1.0)  # gamma unused for Burgers


# --- initial conditions ----------------------------------------------------


def test_sod_initial_condition_layout():
    state = initial_condition("sod", 8, EquationSpec("euler1d"))
    assert state.q.shape == (3, 8)
    assert np.allclose(state.q[:, :4], [[1.0], [0.0], [2.5]])
    assert np.allclose(state.q[:, 4:], [[0.125], [0.0], [0.25]])
    assert state.cell_centers[0] == pytest.approx(1.0 / 16.0)


def test_minimum_cell_count_enforced():
    with pytest.raises(PhysicsError):
        initial_condition("sod", 4, EquationSpec("euler1d"))


def test_unknown_ic_name():
    with pytest.raises(PhysicsError):
        initial_condition("sedov", 16, EquationSpec("euler1d"))


def test_burgers_rarefaction_opens_a_fan():
    state = initial_condition("burgers-rarefaction", 16, EquationSpec("burgers1d"))
    assert state.q.shape == (1, 16)
    assert state.q[0, 0] < state.q[0, -1]


def test_custom_ic_is_identity():
    q = np.linspace(0.1, 1.0, 10)[None, :]
    state = initial_condition("custom", 10, EquationSpec("burgers1d"), custom=q)
    assert np.array_equal(state.q, q)


# --- Burgers analytical reference ------------------------------------------


def test_burgers_exact_time_zero():
    x = np.linspace(0.0, 1.0, 11)
    u = burgers_exact(-0.5, 0.5, 0.4, x, 0.0)
    assert np.array_equal(u, np.where(x < 0.4, -0.5, 0.5))


def test_burgers_fan_profile():
    # inside the fan the solution rides the characteristics: u = (x - x_d)/t
    assert burgers_exact(0.0, 1.0, 0.0, np.array([0.05]), 0.1)[0] == pytest.approx(0.5)


def test_burgers_shock_speed():
    # u_l=1, u_r=0 -> shock at speed 1/2; just ahead of it the state is still u_l
    assert burgers_exact(1.0, 0.0, 0.0, np.array([0.04]), 0.1)[0] == 1.0
    assert burgers_exact(1.0, 0.0, 0.0, np.array([0.06]), 0.1)[0] == 0.0


@given(t=st.floats(0.01, 0.5), ul=st.floats(-1.0, 1.0), ur=st.floats(-1.0, 1.0))
@settings(max_examples=40, deadline=None)
def test_burgers_exact_bounded_by_edge_states(t, ul, ur):
    x = np.linspace(-2.0, 2.0, 201)
    u = burgers_exact(ul, ur, 0.0, x, t)
    lo, hi = min(ul, ur), max(ul, ur)
    assert np.all(u >= lo - 1e-12) and np.all(u <= hi + 1e-12)
    assert u[0] == pytest.approx(ul) and u[-1] == pytest.approx(ur)


# --- 2D pieces --------------------------------------------------------------


def test_2d_x_flux_matches_1d_on_y_uniform_state():
    spec1 = EquationSpec("euler1d")
    state = initial_condition("sod", 16, spec1)
    rho, u, p = conserved_to_primitive(state.q, GAMMA)
    q2d = np.stack(
        [np.tile(state.q[0], (4, 1)), np.tile(state.q[1], (4, 1)), np.zeros((4, 16)), np.tile(state.q[2], (4, 1))]
    )
    fx = euler2d_flux_x(q2d, GAMMA)
    f1 = euler_flux(state.q, GAMMA)
    assert np.allclose(fx[0], np.tile(f1[0], (4, 1)), rtol=1e-14)
    assert np.allclose(fx[1], np.tile(f1[1], (4, 1)), rtol=1e-14)
    assert np.allclose(fx[3], np.tile(f1[2], (4, 1)), rtol=1e-14)
    assert np.allclose(fx[2], 0.0)  # no transverse momentum being advected


def test_kelvin_helmholtz_ic_is_admissible_and_sheared():
    spec = EquationSpec("euler2d")
    state = kelvin_helmholtz_ic(32, spec)
    assert state.q.shape == (4, 32, 32)
    check_admissible(state.q, spec)
    rho = state.q[0]
    u = state.q[1] / rho
    # dense band moves one way, outer fluid the other
    assert np.all(rho[12:20] > 1.5) and np.all(rho[:4] < 1.5)
    assert np.mean(u[12:20]) * np.mean(u[:4]) < 0.0
    # the seeded vertical perturbation is present but small
    v = state.q[2] / rho
    assert 0.0 < np.max(np.abs(v)) <= 0.1
