import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from nlqg.dg import (
    DGParams,
    PairParams,
    RSpec,
    continuity_residual,
    dg_rhs,
    evolve,
    evolve_pair,
    fidelity,
    gaussian_packet,
    pair_rhs,
    plane_wave,
    r_functional,
    step_rk4,
    suggest_dt,
)
from nlqg.entanglement import EPRSpec, make_epr
from nlqg.errors import NumericalInstability
from nlqg.field import GridSpec, WaveField, partial_trace_b, trace_distance

GRID = GridSpec(1, 256, 40.0)
COARSE = GridSpec(1, 64, 20.0)


def _gaussian_bracket_oracle():
    """(lap psi + |grad psi|^2/|psi|^2 psi) / psi for a gaussian with carrier, via sympy."""
    x = sp.symbols("x", real=True)
    sigma, k0 = sp.symbols("sigma k0", positive=True)
    psi = sp.exp(-(x**2) / (4 * sigma**2) + sp.I * k0 * x)
    dpsi = sp.diff(psi, x)
    grad_sq = sp.simplify(dpsi * sp.conjugate(dpsi))
    rho = sp.simplify(psi * sp.conjugate(psi))
    bracket = sp.simplify((sp.diff(psi, x, 2) + grad_sq / rho * psi) / psi)
    lap = sp.simplify(sp.diff(psi, x, 2) / psi)
    return sp.lambdify((x, sigma, k0), bracket, "numpy"), sp.lambdify((x, sigma, k0), lap, "numpy")


# --- right-hand side ------------------------------------------------------


@pytest.mark.parametrize("D", [0.0, 0.05, 0.3])
def test_plane_wave_is_transparent_to_dg_term(D):
    psi = plane_wave(GRID, 3)
    k = 2 * np.pi * 3 / GRID.length
    out = dg_rhs(psi, DGParams(D=D)).amplitudes
    # |grad psi|^2/rho = k^2 cancels lap psi = -k^2 psi in the bracket
    np.testing.assert_allclose(out, -0.5j * k**2 * psi.amplitudes, atol=1e-11)


def test_linear_limit_is_free_schrodinger():
    psi = gaussian_packet(GRID, 1.1, 0.3, 0.7)
    p = DGParams(hbar=1.7, mass=0.6)
    k = GRID.k
    expected = np.fft.ifft(-1j * p.hbar / (2 * p.mass) * k**2 * np.fft.fft(psi.amplitudes))
    np.testing.assert_allclose(dg_rhs(psi, p).amplitudes, expected, atol=1e-13)


def test_gaussian_dg_rhs_matches_symbolic_form():
    bracket, lap = _gaussian_bracket_oracle()
    sigma, k0, D = 1.2, 0.8, 0.05
    x = GRID.x
    psi = WaveField(GRID, np.exp(-(x**2) / (4 * sigma**2) + 1j * k0 * x))
    expected = (0.5j * lap(x, sigma, k0) + D * bracket(x, sigma, k0)) * psi.amplitudes
    out = dg_rhs(psi, DGParams(D=D)).amplitudes
    # the density floor regularizes the far tails; compare where the state lives
    bulk = np.abs(psi.amplitudes) ** 2 > 1e-8
    np.testing.assert_allclose(out[bulk], expected[bulk], atol=1e-9)


def test_potential_enters_as_phase_rotation():
    V = 0.3 * np.cos(GRID.x)
    psi = gaussian_packet(GRID, 1.0)
    out = dg_rhs(psi, DGParams(potential=V)).amplitudes - dg_rhs(psi, DGParams()).amplitudes
    np.testing.assert_allclose(out, -1j * V * psi.amplitudes, atol=1e-14)


def test_r_functional_terms_on_closed_forms():
    sigma, k0 = 1.0, 0.9
    x = GRID.x
    inner = np.abs(x) < 5
    psi = WaveField(GRID, np.exp(-(x**2) / (4 * sigma**2) + 1j * k0 * x))

    def R(**c):
        return r_functional(psi, DGParams(R=RSpec(**c)))[inner]

    xi = x[inner]
    np.testing.assert_allclose(R(c1=1), -k0 * xi / sigma**2, atol=1e-8)
    np.testing.assert_allclose(R(c2=1), xi**2 / sigma**4 - 1 / sigma**2, atol=1e-8)
    np.testing.assert_allclose(R(c3=1), np.full_like(xi, k0**2), atol=1e-8)
    np.testing.assert_allclose(R(c4=1), -k0 * xi / sigma**2, atol=1e-8)
    np.testing.assert_allclose(R(c5=1), xi**2 / sigma**4, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(0.1, 10.0),
    st.floats(0, 2 * np.pi),
    st.floats(0.0, 0.5),
    st.lists(st.floats(-1, 1), min_size=5, max_size=5),
)
def test_rhs_is_homogeneous_of_degree_one(modulus, phase, D, coeffs):
    z = modulus * np.exp(1j * phase)
    psi = gaussian_packet(COARSE, 1.0, 0.2, 0.5)
    p = DGParams(D=D, R=RSpec(*coeffs), potential=0.1 * COARSE.x**2)
    lhs = dg_rhs(psi * z, p).amplitudes
    rhs = z * dg_rhs(psi, p).amplitudes
    scale = np.max(np.abs(rhs)) + 1e-300
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0, 2 * np.pi))
def test_r_functional_is_scale_invariant(modulus, phase):
    psi = gaussian_packet(COARSE, 1.0, 0.0, 0.5)
    p = DGParams(R=RSpec(0.3, -0.2, 0.5, 0.1, 0.7))
    z = modulus * np.exp(1j * phase)
    bulk = np.abs(psi.amplitudes) ** 2 > 1e-8 * np.max(np.abs(psi.amplitudes) ** 2)
    np.testing.assert_allclose(r_functional(psi * z, p)[bulk], r_functional(psi, p)[bulk], rtol=1e-9, atol=1e-9)


def test_negative_d_needs_flag():
    with pytest.raises(ValueError):
        DGParams(D=-0.1)
    assert DGParams(D=-0.1, allow_negative_D=True).D == -0.1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_rhs_raises():
    psi = WaveField(GRID, np.zeros(GRID.shape))
    with pytest.raises(NumericalInstability):
        dg_rhs(psi, DGParams(D=0.1, R=RSpec(c1=1.0)))


# --- integrator -----------------------------------------------------------


def test_rk4_local_error_is_fifth_order():
    p = DGParams(D=0.05)
    psi = gaussian_packet(COARSE, 1.0, 0.0, 1.0)
    s = suggest_dt(COARSE, p)
    ref = evolve(psi, p, 4 * s, s / 32)[1].amplitudes
    e1 = np.max(np.abs(step_rk4(psi, p, 4 * s).amplitudes - ref))
    ref2 = evolve(psi, p, 2 * s, s / 32)[1].amplitudes
    e2 = np.max(np.abs(step_rk4(psi, p, 2 * s).amplitudes - ref2))
    assert e1 / e2 == pytest.approx(32, rel=0.2)


def test_rk4_global_error_is_fourth_order():
    p = DGParams(D=0.05, R=RSpec(0.01, 0.02))
    psi = gaussian_packet(COARSE, 1.0, 0.0, 1.0)
    s = suggest_dt(COARSE, p)
    ref = evolve(psi, p, 0.2, s / 16)[1].amplitudes
    errs = [np.max(np.abs(evolve(psi, p, 0.2, dt)[1].amplitudes - ref)) for dt in (8 * s, 4 * s, 2 * s)]
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine == pytest.approx(16, rel=0.2)


def test_free_gaussian_dispersion():
    sigma0 = 1.0
    psi = gaussian_packet(GRID, sigma0)
    p = DGParams()
    traj, _ = evolve(psi, p, 2.0, suggest_dt(GRID, p) * 4, sample_every=50)
    t = traj["t"]
    expected = sigma0**2 * (1 + (t / (2 * sigma0**2)) ** 2)
    np.testing.assert_allclose(traj["var_x"], expected, rtol=1e-6)


def test_moving_packet_mean_follows_group_velocity():
    psi = gaussian_packet(GRID, 1.0, -3.0, 2.0)
    traj, _ = evolve(psi, DGParams(), 1.0, 0.002, sample_every=100)
    np.testing.assert_allclose(traj["mean_x"], -3.0 + 2.0 * traj["t"], atol=1e-9)


def test_norm_conserved_under_dg():
    p = DGParams(D=0.01)
    psi = gaussian_packet(GRID, 1.0, 0.0, 1.0)
    traj, _ = evolve(psi, p, 1.0, 0.001, sample_every=100)
    assert traj.meta["steps"] == 1000
    assert np.max(np.abs(traj["norm"] - traj["norm"][0])) <= 1e-8


def test_dg_spreads_faster_than_linear():
    psi = gaussian_packet(GRID, 1.0)
    lin, _ = evolve(psi, DGParams(), 0.5, 0.002)
    dg, _ = evolve(psi, DGParams(D=0.1), 0.5, 0.002)
    assert dg["var_x"][-1] > lin["var_x"][-1]


def test_t_final_zero_returns_initial_state():
    psi = gaussian_packet(COARSE, 1.0)
    traj, final = evolve(psi, DGParams(D=0.1), 0.0, 0.01)
    assert len(traj) == 1
    np.testing.assert_array_equal(final.amplitudes, psi.amplitudes)


def test_dt_is_an_upper_bound():
    traj, _ = evolve(gaussian_packet(COARSE, 1.0), DGParams(), 0.1, 0.03)
    assert traj.meta["steps"] == 4
    assert traj.meta["dt"] == pytest.approx(0.025)
    assert traj["t"][-1] == pytest.approx(0.1)


def test_oversized_step_raises_with_step_index():
    p = DGParams(D=0.1)
    with pytest.raises(NumericalInstability) as info:
        evolve(gaussian_packet(COARSE, 1.0), p, 1.0, suggest_dt(COARSE, p) * 100)
    assert info.value.step is not None and info.value.step >= 1


def test_suggest_dt_scaling():
    p = DGParams()
    assert suggest_dt(GridSpec(1, 128, 40.0), p) == pytest.approx(4 * suggest_dt(GridSpec(1, 256, 40.0), p))
    assert suggest_dt(COARSE, DGParams(mass=2.0)) == pytest.approx(2 * suggest_dt(COARSE, p))
    pp = PairParams(p, p)
    assert suggest_dt(COARSE, pp) == pytest.approx(suggest_dt(COARSE, p) / 2)
    assert suggest_dt(GridSpec(2, 64, 20.0), p) == pytest.approx(suggest_dt(COARSE, p) / 2)


# --- continuity -------------------------------------------------------------


def test_continuity_residual_vanishes_for_plane_wave():
    p = DGParams(D=0.05)
    psi = plane_wave(GRID, 2)
    assert continuity_residual(psi, step_rk4(psi, p, 0.01), 0.01, p) <= 1e-10


def test_continuity_residual_is_second_order():
    p = DGParams(D=0.01)
    psi = gaussian_packet(GRID, 1.0, 0.0, 1.0)
    res = [continuity_residual(psi, step_rk4(psi, p, dt), dt, p) for dt in (0.004, 0.002, 0.001)]
    for coarse, fine in zip(res, res[1:]):
        assert coarse / fine == pytest.approx(4, rel=0.25)


def test_continuity_needs_diffusion_term():
    p = DGParams(D=0.01)
    psi = gaussian_packet(GRID, 1.0, 0.0, 1.0)
    after = step_rk4(psi, p, 0.001)
    with_term = continuity_residual(psi, after, 0.001, p)
    without = continuity_residual(psi, after, 0.001, p, include_diffusion=False)
    assert without >= 100 * with_term


# --- two-particle evolution ------------------------------------------------


def test_pair_rhs_of_product_is_sum_of_species_terms():
    a = gaussian_packet(COARSE, 1.0, 0.0, 0.5)
    b = gaussian_packet(COARSE, 0.8, 1.0, -0.3)
    pa, pb = DGParams(D=0.05, potential=0.2 * COARSE.x**2), DGParams(D=0.1)
    phi = WaveField.product(a, b)
    out = pair_rhs(phi, PairParams(pa, pb)).amplitudes
    expected = np.multiply.outer(dg_rhs(a, pa).amplitudes, b.amplitudes) + np.multiply.outer(
        a.amplitudes, dg_rhs(b, pb).amplitudes
    )
    rho = np.abs(phi.amplitudes) ** 2
    bulk = rho > 1e-8 * rho.max()
    np.testing.assert_allclose(out[bulk], expected[bulk], atol=1e-9 * np.max(np.abs(expected)))


def test_product_state_stays_factorized():
    a = gaussian_packet(COARSE, 1.0)
    b = gaussian_packet(COARSE, 1.0, 0.0, 1.0)
    V = 8.0 * (1 - np.cos(2 * np.pi * COARSE.x / COARSE.length))
    pp = PairParams(DGParams(D=0.05, potential=V), DGParams(D=0.1))
    dt = suggest_dt(COARSE, pp)
    run = evolve_pair(WaveField.product(a, b), pp, 0.5, dt, sample_every=1000)
    _, fa = evolve(a, pp.params_a, 0.5, dt)
    _, fb = evolve(b, pp.params_b, 0.5, dt)
    assert fidelity(run.final, WaveField.product(fa, fb)) >= 1 - 1e-6


def test_linear_pair_does_not_signal():
    g = COARSE
    phi = make_epr(EPRSpec(4 * g.dx, g.length / 8, g))
    V = 8.0 * (1 - np.cos(2 * np.pi * g.x / g.length))
    quiet = PairParams(DGParams(), DGParams())
    kicked = PairParams(DGParams(potential=V), DGParams())
    dt = suggest_dt(g, quiet)
    r1 = evolve_pair(phi, quiet, 0.5, dt, sample_every=10**6).rho_b[-1]
    r2 = evolve_pair(phi, kicked, 0.5, dt, sample_every=10**6).rho_b[-1]
    assert trace_distance(r1, r2) <= 1e-8


def test_pair_records_reduced_state_from_normalized_field():
    g = COARSE
    phi = make_epr(EPRSpec(4 * g.dx, g.length / 8, g))
    run = evolve_pair(phi, PairParams(DGParams(), DGParams(D=0.05)), 0.05, 0.005, sample_every=5)
    assert len(run.rho_b) == len(run.trajectory) == 3
    np.testing.assert_allclose(run.rho_b[0].entries, partial_trace_b(phi).entries, atol=1e-14)
