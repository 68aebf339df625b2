import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blochpacket.envelope import (
    ConstantCoefficients,
    GridEnvelope,
    coefficients_along,
    evolve_gaussian,
    evolve_grid_envelope,
    gaussian_eval,
    gaussian_eval_with_derivatives,
    gaussian_init,
    gaussian_invariant_defects,
    grid_envelope_from_gaussian,
    sigma_norm,
    spectral_gradient,
    spectral_hessian,
)
from blochpacket.errors import EnvelopeError

# Weighted-norm oracles for u(z) = exp(-z^2/2) (A = B = 1), by hand:
# ||u|| = pi^(1/4), ||z u|| = ||u'|| = pi^(1/4)/sqrt(2),
# ||z^2 u|| = ||z u'|| = ||u''|| = pi^(1/4) sqrt(3)/2.
SIGMA0 = np.pi**0.25
SIGMA1 = np.pi**0.25 * (1.0 + np.sqrt(2.0))
SIGMA2 = np.pi**0.25 * (1.0 + np.sqrt(2.0) + 1.5 * np.sqrt(3.0))


def sym(mat):
    return 0.5 * (mat + mat.T)


def random_coefficients(rng, d):
    m = sym(rng.normal(size=(d, d)))
    q = sym(rng.normal(size=(d, d)))
    beta = 1j * rng.normal()
    return ConstantCoefficients(dispersion=m, vhess=q, berry_rate=beta)


def test_gaussian_init_identity():
    g = gaussian_init(np.eye(1), np.eye(1))
    assert g.t == 0.0
    assert g.log_det == pytest.approx(0.0)
    assert np.allclose(g.width_matrix(), np.eye(1))
    z = np.linspace(-3, 3, 11)
    assert np.allclose(gaussian_eval(g, z.reshape(-1, 1)), np.exp(-0.5 * z * z))


def test_gaussian_init_rejects_bad_data():
    with pytest.raises(EnvelopeError):
        gaussian_init(np.zeros((1, 1)), np.eye(1))  # singular A
    with pytest.raises(EnvelopeError):
        gaussian_init(np.eye(1), -np.eye(1))  # Re(BA^-1) not positive
    with pytest.raises(EnvelopeError):
        gaussian_init(np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]))  # not symmetric


def test_sigma_norm_oracles():
    g = gaussian_init(np.eye(1), np.eye(1))
    u = grid_envelope_from_gaussian(g, 16.0, 512)
    assert sigma_norm(u, 0) == pytest.approx(SIGMA0, rel=1e-12)
    assert sigma_norm(u, 1) == pytest.approx(SIGMA1, rel=1e-12)
    assert sigma_norm(u, 2) == pytest.approx(SIGMA2, rel=1e-12)


@given(seed=st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=10)
def test_gaussian_invariants_preserved(seed):
    rng = np.random.default_rng(seed)
    coeffs = random_coefficients(rng, 2)
    g = gaussian_init(np.eye(2), np.eye(2))
    out = evolve_gaussian(g, coeffs, 1.0, 1e-3)
    defects = gaussian_invariant_defects(out)
    assert defects["symmetry"] < 1e-9
    assert defects["inverse_width"] < 1e-9
    assert defects["det_branch"] < 1e-9
    assert defects["min_re_eig"] > 0.0


def test_evolve_gaussian_free_particle_closed_form():
    # M = 1, Q = 0, beta = 0: A(t) = 1 + it, B(t) = 1 (spreading packet)
    coeffs = ConstantCoefficients(dispersion=np.eye(1), vhess=np.zeros((1, 1)))
    g = gaussian_init(np.eye(1), np.eye(1))
    out = evolve_gaussian(g, coeffs, 1.3, 1e-3)
    assert np.allclose(out.A, np.array([[1.0 + 1.3j]]), atol=1e-9)
    assert np.allclose(out.B, np.eye(1), atol=1e-9)
    # complex log det: modulus plus the continued argument of det A
    assert out.log_det.real == pytest.approx(np.log(np.sqrt(1.0 + 1.3**2)), abs=1e-9)
    assert out.log_det.imag == pytest.approx(np.arctan2(1.3, 1.0), abs=1e-9)


def test_evolve_gaussian_harmonic_rotation():
    # M = Q = 1: A(t) = cos t + i sin t, so |det A| = 1 throughout
    coeffs = ConstantCoefficients(dispersion=np.eye(1), vhess=np.eye(1))
    g = gaussian_init(np.eye(1), np.eye(1))
    t = 2.2
    out = evolve_gaussian(g, coeffs, t, 1e-3)
    assert out.A[0, 0] == pytest.approx(np.cos(t) + 1j * np.sin(t), abs=1e-8)
    assert out.B[0, 0] == pytest.approx(np.cos(t) + 1j * np.sin(t), abs=1e-8)
    # det A = e^{it}: unit modulus, argument continued past the branch cut
    assert out.log_det.real == pytest.approx(0.0, abs=1e-9)
    assert out.log_det.imag == pytest.approx(t, abs=1e-8)


def test_evolve_gaussian_backward_returns_to_start():
    rng = np.random.default_rng(3)
    coeffs = random_coefficients(rng, 1)
    g = gaussian_init(np.eye(1), np.eye(1))
    fwd = evolve_gaussian(g, coeffs, 0.8, 1e-3)
    back = evolve_gaussian(fwd, coeffs, 0.0, 1e-3)
    assert np.allclose(back.A, g.A, atol=1e-10)
    assert np.allclose(back.B, g.B, atol=1e-10)
    assert back.log_det == pytest.approx(0.0, abs=1e-10)


def test_evolve_gaussian_time_noop():
    g = gaussian_init(np.eye(1), np.eye(1))
    coeffs = ConstantCoefficients(dispersion=np.eye(1), vhess=np.eye(1))
    assert evolve_gaussian(g, coeffs, 0.0, 1e-3) is g


def test_berry_rate_is_pure_phase():
    # purely imaginary beta rotates the global phase without changing mass
    coeffs = ConstantCoefficients(
        dispersion=np.eye(1), vhess=np.eye(1), berry_rate=0.35j
    )
    g = gaussian_init(np.eye(1), np.eye(1))
    out = evolve_gaussian(g, coeffs, 1.0, 1e-3)
    u = grid_envelope_from_gaussian(out, 16.0, 256)
    base = evolve_gaussian(
        g, ConstantCoefficients(dispersion=np.eye(1), vhess=np.eye(1)), 1.0, 1e-3
    )
    ub = grid_envelope_from_gaussian(base, 16.0, 256)
    assert u.mass() == pytest.approx(ub.mass(), rel=1e-12)
    ratio = u.values[128] / ub.values[128]
    assert abs(ratio - np.exp(0.35j)) < 1e-9


def test_grid_envelope_accessors():
    g = gaussian_init(np.eye(1), np.eye(1))
    u = grid_envelope_from_gaussian(g, 8.0, 128)
    assert u.dimension == 1
    assert u.npoints == 128
    assert u.dz() == pytest.approx(16.0 / 128)
    assert u.axis()[0] == pytest.approx(-8.0)
    assert u.mass() == pytest.approx(SIGMA0, rel=1e-10)
    assert u.boundary_mass_fraction() < 1e-12
    assert u.spectral_tail_fraction() < 1e-12


def test_grid_propagator_matches_gaussian_random_constant_coefficients():
    rng = np.random.default_rng(11)
    for _ in range(3):
        coeffs = random_coefficients(rng, 1)
        g = gaussian_init(np.eye(1), np.eye(1))
        t = 0.6
        gau = evolve_gaussian(g, coeffs, t, 1e-4)
        u0 = grid_envelope_from_gaussian(g, 16.0, 512)
        ugrid = evolve_grid_envelope(u0, coeffs, t, 1e-4)
        exact = gaussian_eval(gau, ugrid.points()).reshape(ugrid.values.shape)
        err = np.sqrt(np.sum(np.abs(ugrid.values - exact) ** 2) * ugrid.dz())
        assert err < 1e-6


def test_grid_propagator_mass_conservation():
    coeffs = ConstantCoefficients(dispersion=np.eye(1), vhess=np.eye(1), berry_rate=0.2j)
    g = gaussian_init(np.eye(1), np.eye(1))
    u0 = grid_envelope_from_gaussian(g, 16.0, 256)
    u1 = evolve_grid_envelope(u0, coeffs, 5.0, 1e-3)
    assert abs(u1.mass() - u0.mass()) < 5e-12


def test_grid_propagator_backward_inverts_forward():
    coeffs = ConstantCoefficients(dispersion=np.eye(1), vhess=np.eye(1))
    g = gaussian_init(np.eye(1), np.eye(1))
    u0 = grid_envelope_from_gaussian(g, 16.0, 256)
    u1 = evolve_grid_envelope(u0, coeffs, 0.4, 1e-3)
    u2 = evolve_grid_envelope(u1, coeffs, 0.0, 1e-3)
    err = np.sqrt(np.sum(np.abs(u2.values - u0.values) ** 2) * u0.dz())
    assert err < 1e-10


def test_evolve_grid_envelope_boundary_guard():
    # wide low-frequency state on a tiny box trips the shell monitor
    ax = np.linspace(-2.0, 2.0, 64, endpoint=False)
    vals = np.exp(-0.1 * ax**2).astype(complex)
    u = GridEnvelope(values=vals, half_width=2.0, t=0.0)
    coeffs = ConstantCoefficients(dispersion=np.eye(1), vhess=np.zeros((1, 1)))
    with pytest.raises(EnvelopeError):
        evolve_grid_envelope(u, coeffs, 4.0, 1e-2)


def test_spectral_derivatives_match_analytic():
    g = gaussian_init(np.eye(1), np.eye(1))
    u = grid_envelope_from_gaussian(g, 16.0, 512)
    z = u.axis()
    du = spectral_gradient(u)[0]
    d2u = spectral_hessian(u)[0, 0]
    assert np.max(np.abs(du - (-z) * u.values)) < 1e-11
    assert np.max(np.abs(d2u - (z * z - 1.0) * u.values)) < 1e-10


def test_gaussian_eval_with_derivatives_consistent():
    # chirped but admissible pair: B A^-1 = 1 + i c keeps Re(BA^-1)^-1 = AA*
    g = gaussian_init(np.array([[1.0]]), np.array([[1.0 + 0.5j]]))
    z = np.linspace(-2, 2, 9).reshape(-1, 1)
    vals, grads, hesses = gaussian_eval_with_derivatives(g, z)
    h = 1e-6
    fd = (gaussian_eval(g, z + h) - gaussian_eval(g, z - h)) / (2 * h)
    fd2 = (gaussian_eval(g, z + h) - 2 * vals + gaussian_eval(g, z - h)) / h**2
    assert np.allclose(grads[..., 0], fd, atol=1e-7)
    assert np.allclose(hesses[..., 0, 0], fd2, atol=1e-3)
    assert np.allclose(vals, gaussian_eval(g, z))


def test_coefficients_along_trajectory_interpolates(mathieu_band):
    from blochpacket.flow import QuadraticPotential, integrate_flow

    pot = QuadraticPotential.harmonic(1)
    traj = integrate_flow([0.0], [0.3], 1.0, 1e-3, mathieu_band, pot)
    coeffs = coefficients_along(traj, mathieu_band, pot)
    t = 0.513
    state = traj.state_at(t)
    assert np.allclose(coeffs.dispersion(t), mathieu_band.hess_energy(state.p), atol=1e-9)
    assert np.allclose(coeffs.vhess(t), pot.hess(state.q), atol=1e-12)
    # real potential band: the geometric rate vanishes identically
    assert abs(coeffs.berry_rate(t)) < 1e-12


def test_sigma_norm_rejects_negative_order():
    g = gaussian_init(np.eye(1), np.eye(1))
    u = grid_envelope_from_gaussian(g, 8.0, 64)
    with pytest.raises(EnvelopeError):
        sigma_norm(u, -1)
