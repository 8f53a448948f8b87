"""Elimination-coefficient oracle and generator assembly checks."""

import numpy as np
import pytest

from spincavity import (
    ModelParams,
    assemble_reduced_generator,
    cavity_operators,
    closed_form_coefficients,
    closed_form_correlations,
    coefficients_by_quadrature,
    derive_params,
    first_order_vanishes,
    heisenberg_propagate,
)
from spincavity.elimination import (
    HeisenbergCorrelations,
    interaction_operator,
    liouvillian_matrix,
    stationary_state,
)
from spincavity.errors import DomainError
from spincavity.hilbert import spin_operators
from spincavity.models import build_reduced_model, completion_generator, lindblad_generator

from conftest import params_for, random_density_matrix


@pytest.fixture(scope="module")
def cavity():
    return cavity_operators(12)


class TestHeisenbergPropagate:
    def test_identity_fixed(self, cavity):
        p = params_for(0.8)
        ident = np.eye(cavity.dim, dtype=complex)
        for t in (0.0, 0.3, 2.0):
            out = heisenberg_propagate(cavity, p, ident, t)
            assert np.abs(out - ident).max() < 1e-10

    def test_lowering_operator_eigendecay(self, cavity):
        p = params_for(1.0)
        t = 0.7
        out = heisenberg_propagate(cavity, p, cavity.b, t)
        expected = np.exp((1j * p.delta - p.kappa / 2) * t) * cavity.b
        # truncation effects stay confined to the edge
        k = cavity.dim - 2
        assert np.abs(out[:k, :k] - expected[:k, :k]).max() < 1e-9

    def test_unordered_commutator_warning_case(self, cavity):
        # e^{t L*}([b, b']) = I, not e^{-kappa t} [b, b']
        p = params_for(0.5)
        comm = cavity.b @ cavity.b.conj().T - cavity.b.conj().T @ cavity.b
        out = heisenberg_propagate(cavity, p, comm, 1.0)
        k = cavity.dim - 2
        assert np.abs(out[:k, :k] - np.eye(cavity.dim)[:k, :k]).max() < 1e-9

    @pytest.mark.parametrize("m,n", [(0, 1), (1, 0), (1, 1), (2, 1)])
    def test_ordered_monomial_eigendecay(self, cavity, m, n):
        p = params_for(0.8)
        bdag = cavity.b.conj().T
        x = np.linalg.matrix_power(bdag, m) @ np.linalg.matrix_power(cavity.b, n)
        t = 0.9
        out = heisenberg_propagate(cavity, p, x, t)
        lam = -(1j * p.delta * (m - n) + p.kappa * (m + n) / 2)
        expected = np.exp(lam * t) * x
        k = cavity.dim - 3
        scale = max(np.abs(expected[:k, :k]).max(), 1e-12)
        assert np.abs(out[:k, :k] - expected[:k, :k]).max() / scale < 1e-8

    def test_negative_time_rejected(self, cavity):
        with pytest.raises(DomainError):
            heisenberg_propagate(cavity, params_for(0.5), cavity.b, -0.1)


class TestStationaryState:
    def test_vacuum_is_stationary(self, cavity):
        p = params_for(1.0)
        rho, gap = stationary_state(cavity, p)
        vac = np.zeros((cavity.dim, cavity.dim), dtype=complex)
        vac[0, 0] = 1.0
        assert np.abs(rho - vac).max() < 1e-10
        assert gap >= p.kappa / 4
        lmat = liouvillian_matrix(cavity, p)
        assert np.linalg.norm(lmat @ rho.reshape(-1)) < 1e-12

    def test_first_order_vanishes(self, cavity):
        assert first_order_vanishes(params_for(0.8), cavity)
        assert first_order_vanishes(ModelParams(kappa=1.0, g=0.1, delta=0.3, beta=0.0))

    def test_first_order_with_wrong_state(self, cavity):
        # displaced stationary state has <B> != 0
        from spincavity.hilbert import coherent_state

        psi = coherent_state(0.5, cavity.n_max)
        rho_wrong = np.outer(psi, psi.conj())
        assert not first_order_vanishes(params_for(0.8), cavity, rho_bar=rho_wrong)


class TestCorrelationFunctions:
    def test_closed_form_values(self):
        p = params_for(0.0, n0=4.0)
        corr = closed_form_correlations(p)
        assert corr.c(0.0) == pytest.approx(4.0)
        assert corr.d(0.0, 0.0) == pytest.approx(4.0)
        assert corr.f(1.3, 0.0) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("d", [0.0, 0.8, 1.67])
    def test_identities_from_propagation(self, cavity, d):
        """tilde functions relate to plain ones by conjugation on the
        Heisenberg-trace route, not just in the closed forms."""
        p = params_for(d, n0=1.0)
        hc = HeisenbergCorrelations(cavity, p)
        ts = np.linspace(0.0, 3.0, 7)
        assert np.abs(hc.c_tilde(ts) - np.conj(hc.c(ts))).max() < 1e-10
        for tp in (0.0, 0.4, 1.1):
            assert np.abs(hc.d_tilde(ts, tp) - np.conj(hc.d(ts, tp))).max() < 1e-10
            assert np.abs(hc.f_tilde(ts, tp) + np.conj(hc.f(ts, tp))).max() < 1e-10

    @pytest.mark.parametrize("d", [0.0, 1.0])
    def test_propagated_match_closed_forms(self, cavity, d):
        p = params_for(d, n0=4.0)
        hc = HeisenbergCorrelations(cavity, p)
        cf = closed_form_correlations(p)
        ts = np.linspace(0.0, 5.0, 9)
        c_closed = np.array([cf.c(t) for t in ts])
        assert np.abs(hc.c(ts) - c_closed).max() < 1e-9
        for tp in (0.0, 0.7):
            d_closed = np.array([cf.d(t, tp) for t in ts])
            f_closed = np.array([cf.f(t, tp) for t in ts])
            assert np.abs(hc.d(ts, tp) - d_closed).max() < 1e-9
            assert np.abs(hc.f(ts, tp) - f_closed).max() < 1e-9

    def test_decay_envelope(self, cavity):
        p = params_for(0.8, n0=4.0)
        hc = HeisenbergCorrelations(cavity, p)
        ts = np.linspace(0.0, 8.0, 17)
        vals = np.abs(hc.c(ts))
        envelope = vals[0] * np.exp(-p.kappa * ts / 2)
        assert np.all(vals <= envelope * (1 + 1e-8))


class TestQuadratureOracle:
    def test_resonant_values(self, cavity):
        res = coefficients_by_quadrature(cavity, params_for(0.0, n0=4.0))
        assert res.coefficients.C == pytest.approx(8.0, rel=1e-10)
        assert res.coefficients.D == pytest.approx(12.0, rel=1e-10)
        assert res.coefficients.F == pytest.approx(4.0, rel=1e-10)

    def test_d1_value(self, cavity):
        res = coefficients_by_quadrature(cavity, params_for(1.0, n0=4.0))
        assert res.coefficients.C == pytest.approx(2 + 2j, rel=1e-10)

    @pytest.mark.parametrize("d", [0.0, 0.5, 1.0, 3.0])
    @pytest.mark.parametrize("n0", [1.0, 4.0])
    def test_matches_closed_forms(self, cavity, d, n0):
        p = params_for(d, n0=n0)
        res = coefficients_by_quadrature(cavity, p)
        cf = closed_form_coefficients(p)
        for got, want in (
            (res.coefficients.C, cf.C),
            (res.coefficients.D, cf.D),
            (res.coefficients.F, cf.F),
        ):
            assert abs(got - want) / abs(want) < 1e-8

    def test_coefficients_real_at_d0(self, cavity):
        res = coefficients_by_quadrature(cavity, params_for(0.0, n0=1.0))
        for z in (res.coefficients.C, res.coefficients.D, res.coefficients.F):
            assert abs(z.imag) < 1e-10 * abs(z)


class TestAssembledGenerator:
    def test_second_order_equals_dephasing_at_d0(self, rng):
        p = params_for(0.0, g=0.04)
        dp = derive_params(p)
        n = 3
        spin = spin_operators(n)
        gen = assemble_reduced_generator(spin, closed_form_coefficients(p), p, "second")
        sz = spin.sz
        sz2 = sz @ sz
        rho = random_density_matrix(rng, n + 1)
        expected = dp.kappa_tilde * (sz @ rho @ sz - 0.5 * (sz2 @ rho + rho @ sz2))
        assert np.abs(gen(rho) - expected).max() < 1e-15

    def test_traceless_hermitian_on_mixed_state(self):
        p = params_for(0.8, g=0.05)
        n = 4
        spin = spin_operators(n)
        gen = assemble_reduced_generator(spin, closed_form_coefficients(p), p, "third")
        rho = np.eye(n + 1, dtype=complex) / (n + 1)
        out = gen(rho)
        assert abs(np.trace(out)) < 1e-16
        assert np.abs(out - out.conj().T).max() < 1e-16

    @pytest.mark.parametrize("order", ["second", "third"])
    @pytest.mark.parametrize("d", [0.0, 0.8, 1.0])
    def test_matches_model_generator(self, rng, order, d):
        p = params_for(d, g=0.033)
        dp = derive_params(p)
        for n in (2, 4, 6):
            spin = spin_operators(n)
            gen_elim = assemble_reduced_generator(
                spin, closed_form_coefficients(p), p, order
            )
            model = build_reduced_model(p, n, order)
            gen_model = lindblad_generator(model)
            comp = completion_generator(spin, dp)
            rho = random_density_matrix(rng, n + 1)
            expected = gen_model(rho)
            if order == "third":
                expected = expected - comp(rho)
            got = gen_elim(rho)
            scale = max(np.abs(expected).max(), 1e-300)
            assert np.abs(got - expected).max() / scale < 1e-12

    def test_quadrature_coefficients_compose(self, cavity, rng):
        # assembled with quadrature coefficients, the generator still matches
        # the model to the quadrature tolerance
        p = params_for(1.0, g=0.033)
        res = coefficients_by_quadrature(cavity, p)
        n = 3
        spin = spin_operators(n)
        gen = assemble_reduced_generator(spin, res.coefficients, p, "second")
        model = build_reduced_model(p, n, "second")
        gen_model = lindblad_generator(model)
        rho = random_density_matrix(rng, n + 1)
        diff = np.abs(gen(rho) - gen_model(rho)).max()
        assert diff < 1e-8 * max(np.abs(gen_model(rho)).max(), 1e-300)
