"""Parameter derivation and model construction checks."""

import math

import numpy as np
import pytest

from spincavity import (
    ModelParams,
    build_full_model,
    build_reduced_model,
    derive_params,
    optimal_homodyne_phase,
    verify_jump_factorization,
)
from spincavity.hilbert import spin_operators
from spincavity.models import completion_generator, default_n_max, lindblad_generator

from conftest import params_for, random_density_matrix


class TestDeriveParams:
    def test_resonant_point(self):
        dp = derive_params(ModelParams(kappa=1.0, g=0.0, delta=0.0, beta=1.0))
        assert dp.alpha == pytest.approx(-2j)
        assert dp.n0 == 4.0
        assert abs(dp.alpha) ** 2 == pytest.approx(4.0)
        assert dp.chi == 0.0
        assert dp.theta_s == pytest.approx(math.pi)

    def test_d1_rates(self):
        dp = derive_params(ModelParams(kappa=1.0, g=0.017, delta=0.5, beta=1.0))
        assert dp.kappa_tilde == pytest.approx(1.156e-3, rel=1e-12)
        assert dp.chi == pytest.approx(5.78e-4, rel=1e-12)
        assert dp.theta_s == pytest.approx(-math.pi / 2)

    @pytest.mark.parametrize("d", [0.0, 0.3, 0.8, 1.0, 1.67, 3.0])
    def test_invariants(self, d):
        p = params_for(d, n0=4.0, g=0.05)
        dp = derive_params(p)
        assert abs(dp.alpha) ** 2 == pytest.approx(dp.n0 / (1 + dp.d**2), rel=1e-14)
        expected_kt = 4 * dp.n0 * p.kappa * dp.epsilon**2 / (1 + dp.d**2) ** 2
        assert dp.kappa_tilde == pytest.approx(expected_kt, rel=1e-13)
        lhs = np.exp(1j * dp.theta_s) * (1 + dp.d**2)
        assert abs(lhs - (dp.d - 1j) ** 2) < 1e-12
        assert dp.kappa_tilde >= 0
        assert dp.chi * p.delta >= 0

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelParams(kappa=0.0, g=0.1, delta=0.0, beta=1.0)
        with pytest.raises(ValueError):
            ModelParams(kappa=1.0, g=0.1, delta=0.0, beta=1.0, eta=1.5)


class TestOptimalPhase:
    def test_values(self):
        assert optimal_homodyne_phase(1.0) == pytest.approx(-math.pi / 2)
        assert optimal_homodyne_phase(0.0) == pytest.approx(math.pi)
        assert optimal_homodyne_phase(1e12) == pytest.approx(0.0, abs=1e-11)
        assert optimal_homodyne_phase(0.8) == pytest.approx(-2 * math.atan(1.25))

    @pytest.mark.parametrize("d", [0.0, 0.4, 0.8, 1.0, 1.67, 3.0])
    def test_coincides_with_jump_phase(self, d):
        dp = derive_params(params_for(d))
        diff = (optimal_homodyne_phase(d) - dp.theta_s) % (2 * math.pi)
        assert min(diff, 2 * math.pi - diff) < 1e-12


class TestFullModel:
    def test_hermitian_hamiltonian(self):
        model, state = build_full_model(params_for(1.0, g=0.033), 2, n_max=16)
        assert np.abs(model.hamiltonian - model.hamiltonian.conj().T).max() < 1e-12
        assert state.trace() == pytest.approx(1.0, abs=1e-12)
        assert state.hermiticity_defect() < 1e-12

    def test_uncoupled_block_diagonal(self):
        # g=0: H acts on the cavity factor alone
        model, _ = build_full_model(
            params_for(1.0, g=0.0), 2, n_max=6, initial_cavity="displaced_vacuum"
        )
        ds, dc = model.dims
        h4 = model.hamiltonian.reshape(ds, dc, ds, dc)
        blocks = [h4[i, :, i, :] for i in range(ds)]
        for blk in blocks[1:]:
            assert np.abs(blk - blocks[0]).max() < 1e-14

    def test_initial_cavity_options(self):
        p = params_for(1.0, g=0.02)
        dp = derive_params(p)
        _, lab = build_full_model(p, 1, n_max=25, initial_cavity="lab_vacuum")
        _, disp = build_full_model(p, 1, n_max=25, initial_cavity="displaced_vacuum")
        from spincavity import photon_number

        assert photon_number(lab, p) == pytest.approx(0.0, abs=1e-9)
        assert photon_number(disp, p) == pytest.approx(abs(dp.alpha) ** 2, rel=1e-12)

    def test_truncation_rule(self):
        dp = derive_params(params_for(0.0, n0=4.0))
        n_lab = default_n_max(dp, "lab_vacuum")
        n_disp = default_n_max(dp, "displaced_vacuum")
        assert n_lab == math.ceil(4 + 6 * math.sqrt(5) + 8)
        assert n_disp < n_lab


class TestReducedModel:
    def test_second_order_structure(self):
        p = params_for(1.0, g=0.033)
        dp = derive_params(p)
        model = build_reduced_model(p, 3, "second")
        spin = spin_operators(3)
        m = spin.sz_diag
        assert np.allclose(np.diagonal(model.hamiltonian), dp.chi * m**2)
        ldiag = np.diagonal(model.jumps[0])
        expected = math.sqrt(dp.kappa_tilde) * np.exp(1j * dp.theta_s) * m
        assert np.abs(ldiag - expected).max() < 1e-15

    def test_third_order_sz3_vanishes_at_d1(self):
        model2 = build_reduced_model(params_for(1.0, g=0.033), 5, "second")
        model3 = build_reduced_model(params_for(1.0, g=0.033), 5, "third")
        # at d=1 the Sz^3 Hamiltonian coefficient is exactly zero
        assert np.abs(model3.hamiltonian - model2.hamiltonian).max() == 0.0

    def test_d0_second_order_purely_dissipative(self):
        model = build_reduced_model(params_for(0.0, g=0.033), 4, "second")
        assert np.abs(model.hamiltonian).max() == 0.0
        dp = derive_params(params_for(0.0, g=0.033))
        ldiag = np.diagonal(model.jumps[0])
        spin = spin_operators(4)
        assert np.abs(
            ldiag - math.sqrt(dp.kappa_tilde) * np.exp(1j * math.pi) * spin.sz_diag
        ).max() < 1e-15

    def test_second_equals_third_with_eps3_deleted(self):
        p = params_for(0.8, g=0.05)
        dp = derive_params(p)
        spin = spin_operators(4)
        m = spin.sz_diag
        m2 = build_reduced_model(p, 4, "second")
        m3 = build_reduced_model(p, 4, "third")
        h3_corr = -dp.kappa_tilde * (1 - dp.d**2) / (1 + dp.d**2) * dp.epsilon * m**3
        assert np.allclose(
            np.diagonal(m3.hamiltonian) - h3_corr, np.diagonal(m2.hamiltonian)
        )
        l3_corr = (
            math.sqrt(dp.kappa_tilde)
            * dp.jump_phase
            * dp.sz2_coefficient
            * dp.epsilon
            * m**2
        )
        assert np.abs(
            np.diagonal(m3.jumps[0]) - l3_corr - np.diagonal(m2.jumps[0])
        ).max() < 1e-16

    def test_third_order_dissipator_expansion(self, rng):
        # D[L_s] expanded in the {Sz, Sz^2} sandwich basis must reproduce the
        # stated coefficients, including the order-eps^4 completion.
        p = params_for(0.8, g=0.06)
        dp = derive_params(p)
        n = 3
        spin = spin_operators(n)
        model = build_reduced_model(p, n, "third")
        gen = lindblad_generator(model)
        hpart = model.hamiltonian
        sz, sz2 = spin.sz, spin.sz @ spin.sz
        sz3, sz4 = sz @ sz2, sz2 @ sz2
        kt, eps, d = dp.kappa_tilde, dp.epsilon, dp.d
        mc = dp.sz2_coefficient
        rho = random_density_matrix(rng, n + 1)

        expected = -1j * (hpart @ rho - rho @ hpart)
        expected += kt * (sz @ rho @ sz - 0.5 * (sz2 @ rho + rho @ sz2))
        expected += kt * eps * (
            np.conj(mc) * sz @ rho @ sz2
            + mc * sz2 @ rho @ sz
            - mc.real * (sz3 @ rho + rho @ sz3)
        )
        expected += kt * abs(mc) ** 2 * eps**2 * (
            sz2 @ rho @ sz2 - 0.5 * (sz4 @ rho + rho @ sz4)
        )
        got = gen(rho)
        assert np.abs(got - expected).max() < 1e-15 * max(1.0, np.abs(expected).max())

    def test_epsilon_validation(self):
        with pytest.raises(ValueError):
            build_reduced_model(ModelParams(kappa=1.0, g=1.5, delta=0.0, beta=1.0), 3)

    def test_large_epsilon_warns(self):
        with pytest.warns(UserWarning):
            build_reduced_model(params_for(1.0, g=0.2), 100, "second")

    def test_oat_only_switch(self):
        model = build_reduced_model(params_for(1.0, g=0.033), 4, "second", oat_only=True)
        assert model.jumps == []
        assert model.monitored is None


class TestJumpFactorization:
    @pytest.mark.parametrize("d", [0.0, 0.5, 0.8, 1.0, 1.67, 3.0])
    @pytest.mark.parametrize("eps", [0.017, 0.033, 0.1])
    def test_rank_one_across_grid(self, d, eps):
        p = params_for(d, g=eps)
        dp = derive_params(p)
        report = verify_jump_factorization(p)
        assert report.rank_one
        assert abs(report.determinant) < 1e-12 * dp.kappa_tilde**2
        assert report.eigenvalues[1] == pytest.approx(
            report.expected_eigenvalue, rel=1e-10
        )
        assert report.jump_residual < 1e-10

    def test_d0_matrix_form(self):
        p = params_for(0.0, g=0.05)
        dp = derive_params(p)
        report = verify_jump_factorization(p)
        kt, eps = dp.kappa_tilde, dp.epsilon
        expected = kt * np.array(
            [[1, 2j * eps], [-2j * eps, 4 * eps**2]], dtype=complex
        )
        assert np.abs(report.kossakowski - expected).max() < 1e-15

    def test_small_epsilon_limit(self):
        p = params_for(0.8, g=1e-6)
        dp = derive_params(p)
        report = verify_jump_factorization(p)
        assert report.eigenvalues[1] == pytest.approx(dp.kappa_tilde, rel=1e-8)

    def test_d1_eigenvalue(self):
        p = params_for(1.0, g=0.033)
        dp = derive_params(p)
        report = verify_jump_factorization(p)
        assert report.eigenvalues[1] == pytest.approx(
            dp.kappa_tilde * (1 + 2 * dp.epsilon**2), rel=1e-12
        )


class TestGeneratorHelpers:
    def test_completion_is_traceless_and_hermitian(self, rng):
        p = params_for(0.8, g=0.05)
        spin = spin_operators(4)
        comp = completion_generator(spin, derive_params(p))
        rho = random_density_matrix(rng, 5)
        out = comp(rho)
        assert abs(np.trace(out)) < 1e-18
        assert np.abs(out - out.conj().T).max() < 1e-18
