import math

import numpy as np
import pytest
from scipy.optimize import brentq

from lrplab import (
    ModelParams,
    beta_phase,
    collapse_radius,
    collapse_shift,
    derived_constants,
    lambda_of_t,
    lower_curve,
    phi_to_psi,
    psi_limit,
    psi_limit_periodic,
    tail_envelope,
)

import oracles

PM = ModelParams(d=1, s=1.5, beta=1.0)

PARAM_GRID = [
    ModelParams(d=1, s=1.5, beta=1.0),
    ModelParams(d=1, s=1.9, beta=1.0),
    ModelParams(d=2, s=3.0, beta=1.0),
    ModelParams(d=2, s=3.5, beta=1.0),
    ModelParams(d=3, s=4.5, beta=1.0),
]


class TestPsiLimit:
    def test_endpoint_value(self):
        for pm in PARAM_GRID:
            _, delta = derived_constants(pm)
            end = (2 * pm.d - pm.s) ** delta
            assert psi_limit(pm, 0.0) == pytest.approx(end, rel=1e-12)
            assert psi_limit(pm, 1.0) == pytest.approx(end, rel=1e-12)

    def test_endpoint_frozen_value(self):
        assert psi_limit(PM, 0.0) == pytest.approx(0.188231392503972, rel=1e-12)

    def test_midpoint_frozen_value(self):
        assert psi_limit(PM, 0.5) == pytest.approx(0.19487147706478328, rel=1e-12)

    @pytest.mark.parametrize("pm", PARAM_GRID, ids=lambda p: f"d{p.d}s{p.s}")
    def test_against_mpmath_oracle(self, pm):
        for t in np.linspace(0.0, 1.0, 41):
            exact = oracles.psi_exact(pm.d, pm.s, float(t))
            assert psi_limit(pm, float(t)) == pytest.approx(exact, rel=1e-13)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            psi_limit(PM, -0.001)
        with pytest.raises(ValueError):
            psi_limit(PM, 1.001)

    def test_positive_on_interval(self):
        for pm in PARAM_GRID:
            vals = [psi_limit(pm, float(t)) for t in np.linspace(0, 1, 201)]
            assert min(vals) > 0

    def test_non_constancy_margin(self):
        _, delta = derived_constants(PM)
        end = 0.5**delta
        vals = np.array([psi_limit(PM, float(t)) for t in np.linspace(0, 1, 201)])
        assert vals.max() - vals.min() > 0.01 * end

    def test_endpoint_derivatives_differ(self):
        h = 1e-6
        right = (psi_limit(PM, h) - psi_limit(PM, 0.0)) / h
        left = (psi_limit(PM, 1.0) - psi_limit(PM, 1.0 - h)) / h
        assert abs(right - left) > 1e-3

    def test_periodic_extension(self):
        for t in [0.0, 0.25, 0.5, 0.99]:
            base = psi_limit(PM, t)
            for shift in (-2, -1, 0, 1, 3):
                assert psi_limit_periodic(PM, t + shift) == pytest.approx(base, rel=1e-12)

    def test_lower_curve(self):
        for t in np.linspace(0, 1, 21):
            expected = psi_limit_periodic(PM, float(t)) * 2.0 ** float(t)
            assert lower_curve(PM, float(t)) == pytest.approx(expected, rel=1e-12)


class TestLambda:
    def test_endpoint_examples(self):
        assert lambda_of_t(PM, 0.0) == pytest.approx(1.0, abs=1e-14)
        assert lambda_of_t(PM, 1.0) == pytest.approx(0.0, abs=1e-14)

    def test_midpoint_example(self):
        assert lambda_of_t(PM, 0.5) == pytest.approx(0.535898, abs=5e-7)

    def test_midpoint_against_root_finding(self):
        # lambda(t) solves lam + (1 - lam) / gamma = gamma^(-t).
        gamma, _ = derived_constants(PM)
        for t in (0.2, 0.5, 0.8):
            target = gamma**-t
            root = brentq(lambda lam: lam + (1 - lam) / gamma - target, 0.0, 1.0)
            assert lambda_of_t(PM, t) == pytest.approx(root, rel=1e-10)

    def test_inverse_identity_grid(self):
        for pm in PARAM_GRID:
            gamma, _ = derived_constants(pm)
            for t in np.linspace(0, 1, 101):
                lam = lambda_of_t(pm, float(t))
                assert lam + (1 - lam) / gamma == pytest.approx(gamma ** -float(t), rel=1e-12)

    def test_strictly_decreasing(self):
        vals = [lambda_of_t(PM, float(t)) for t in np.linspace(0, 1, 51)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_composite_identity(self):
        # (2 - lambda(t)) * 2^(-t) * (2d - s)^Delta = psi(t) on a fine grid.
        for pm in PARAM_GRID:
            _, delta = derived_constants(pm)
            end = (2 * pm.d - pm.s) ** delta
            for t in np.linspace(0, 1, 1001):
                t = float(t)
                lhs = (2 - lambda_of_t(pm, t)) * 2.0**-t * end
                assert abs(lhs - psi_limit(pm, t)) <= 1e-10


class TestBetaPhase:
    def test_examples(self):
        cases = [
            (math.e, 0, 1.0),
            (math.e**2, 2, 1.125),
            (math.e**3, 3, 1.265625),
            (math.e**4, 4, 1.265625),
        ]
        for beta, m, u in cases:
            ph = beta_phase(PM, beta)
            assert ph.m == m
            assert ph.u == pytest.approx(u, rel=1e-12)

    def test_block_boundary_case(self):
        # log(e^(4/3)) sits within one ulp of gamma^(-1), so both (m=1, u=1)
        # and (m=0, u=4/3) describe the same phase point; accept either.
        ph = beta_phase(PM, math.e ** (4.0 / 3.0))
        gamma, _ = derived_constants(PM)
        assert (ph.m, round(ph.u, 9)) in {(1, 1.0), (0, round(1 / gamma, 9))}
        assert math.exp(ph.u * gamma**-ph.m) == pytest.approx(math.e ** (4.0 / 3.0), rel=1e-12)

    def test_u_in_window(self):
        gamma, _ = derived_constants(PM)
        for beta in np.exp(np.linspace(0.01, 12.0, 200)):
            ph = beta_phase(PM, float(beta))
            assert 1.0 - 1e-12 <= ph.u < 1.0 / gamma

    def test_round_trip(self):
        gamma, _ = derived_constants(PM)
        for beta in (1.5, math.e, 7.0, 1e4, 1e8):
            ph = beta_phase(PM, beta)
            back = math.exp(ph.u * gamma**-ph.m)
            assert back == pytest.approx(beta, rel=1e-9)

    def test_negative_m_branch(self):
        ph = beta_phase(PM, math.exp(0.5))
        assert ph.m == -3
        assert ph.u == pytest.approx(0.5 * (4.0 / 3.0) ** 3, rel=1e-12)

    def test_beta_at_most_one_rejected(self):
        for beta in (1.0, 0.5, 0.0, -2.0):
            with pytest.raises(ValueError):
                beta_phase(PM, beta)


class TestPhiToPsi:
    def test_constant_sampler(self):
        val = phi_to_psi(PM, lambda r: 3.25, 0.7)
        assert val == 3.25

    def test_radius_at_zero(self):
        seen = []

        def sampler(r):
            seen.append(r)
            return 1.0

        phi_to_psi(PM, sampler, 0.0)
        assert seen[0] == pytest.approx(math.e, rel=1e-12)

    def test_radius_grows_with_t(self):
        gamma, _ = derived_constants(PM)
        seen = []
        phi_to_psi(PM, lambda r: seen.append(r) or 0.0, 1.0)
        assert seen[0] == pytest.approx(math.exp(1 / gamma), rel=1e-12)


class TestTailEnvelope:
    def test_unit_value_at_matching_radius(self):
        # c=1, c_tilde=0, p at the precondition boundary, |x| = beta^theta_1:
        # envelope collapses to exactly 1.
        pm = ModelParams(d=1, s=1.5, beta=5.0)
        p_eq = pm.s * (pm.s + 1) / (2 * pm.d - pm.s)
        x = pm.beta ** (1 / pm.s)
        env = tail_envelope(pm, 1, x, c=1.0, c_tilde=0.0, p=p_eq)
        assert env.value == pytest.approx(1.0, rel=1e-12)
        assert env.precondition_ok

    def test_non_increasing_in_x(self):
        pm = ModelParams(d=1, s=1.5, beta=5.0)
        vals = [tail_envelope(pm, 4, x, c=1.0, c_tilde=1.0, p=9.0).value
                for x in (1e2, 1e3, 1e4, 1e5)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_finite_positive_example(self):
        pm = ModelParams(d=1, s=1.5, beta=5.0)
        env = tail_envelope(pm, 4, 1e4, c=1.0, c_tilde=1.0, p=9.0)
        assert math.isfinite(env.value) and env.value > 0
        assert env.precondition_ok
        # Reconstruct from the definition.
        th4 = env.theta_n
        expected = (pm.beta**th4 * math.exp(4 ** (1 / derived_constants(pm).delta)) / 1e4) ** pm.s * 4.0**-9
        assert env.value == pytest.approx(expected, rel=1e-12)

    def test_precondition_flag(self):
        pm = ModelParams(d=1, s=1.5, beta=5.0)
        assert not tail_envelope(pm, 3, 100.0, c=1.0, c_tilde=1.0, p=7.0).precondition_ok
        assert tail_envelope(pm, 3, 100.0, c=1.0, c_tilde=1.0, p=7.5).precondition_ok

    def test_validation(self):
        pm = ModelParams(d=1, s=1.5, beta=5.0)
        with pytest.raises(ValueError):
            tail_envelope(pm, 0, 100.0, c=1.0, c_tilde=1.0, p=9.0)
        with pytest.raises(ValueError):
            tail_envelope(pm, 3, 0.0, c=1.0, c_tilde=1.0, p=9.0)


class TestCollapseRadius:
    def test_block_boundary_identity(self):
        for beta in (math.e**2, math.e**3, 20.0):
            for m in (0, 1, 3):
                r_end = collapse_radius(PM, beta, 1.0, m)
                r_next = collapse_radius(PM, beta, 0.0, m + 1)
                assert r_end == pytest.approx(r_next, rel=1e-9)

    def test_monotone_in_t(self):
        radii = [collapse_radius(PM, math.e**3, float(t), 4) for t in np.linspace(0, 1, 11)]
        assert all(b > a for a, b in zip(radii, radii[1:]))

    def test_acceptance_scale_window(self):
        r_lo = collapse_radius(PM, math.e**3, 0.0, 4)
        r_hi = collapse_radius(PM, math.e**4, 1.0, 4)
        assert 2900 < r_lo < 3100
        assert 42000 < r_hi < 43500

    def test_shift_positive_for_large_beta(self):
        assert collapse_shift(PM, math.e**3) > 0
