import math

import numpy as np
import pytest

from sidelab.errors import NotLinear, NotPositiveDefinite
from sidelab.models import LinearSde, SideSystem, make_cps
from sidelab.stability import (
    ConditionConstants,
    check_thm1,
    check_thm2,
    check_thm4,
    check_thm5,
    check_thm6,
    cp_lyapunov_feasible,
    discrete_ms_stable,
    impulse_second_moment,
    lyapunov_ito_feasible,
    max_stepsize,
    quadratic_condition_constants,
    scalar_max_stepsize,
)

SCALAR = LinearSde.scalar(-4.0, 1.0)


def random_stable_sde(rng, n_max=3, m_max=2):
    """Shift the drift until the identity certifies mean-square stability."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    a = rng.normal(size=(n, n))
    gs = tuple(0.3 * rng.normal(size=(n, n)) for _ in range(m))
    sym = (a + a.T) / 2.0
    for g in gs:
        sym = sym + (g.T @ g) / 2.0
    shift = float(np.linalg.eigvalsh(sym).max()) + 0.25
    return LinearSde(a - shift * np.eye(n), gs)


def random_unstable_sde(rng, n_max=3, m_max=2):
    """Shift all drift eigenvalues into the right half plane."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    a = rng.normal(size=(n, n))
    gs = tuple(0.3 * rng.normal(size=(n, n)) for _ in range(m))
    shift = -float(np.linalg.eigvals(a).real.min()) + 0.3
    return LinearSde(a + shift * np.eye(n), gs)


class TestLyapunovIto:
    def test_stable_identity_drift(self):
        cert = lyapunov_ito_feasible(LinearSde(-np.eye(2)))
        assert cert.feasible
        assert np.allclose(cert.p, 0.5 * np.eye(2), rtol=1e-12)
        assert cert.margin > 0

    def test_unstable_scalar(self):
        cert = lyapunov_ito_feasible(LinearSde(np.array([[1.0]])))
        assert not cert.feasible and cert.p is None

    def test_noise_boundary(self):
        cert = lyapunov_ito_feasible(LinearSde.scalar(-1.0, math.sqrt(2.0)))
        assert not cert.feasible


class TestCpLyapunov:
    def test_feasible_below_bound(self):
        assert cp_lyapunov_feasible(SCALAR, 0.4).feasible

    def test_infeasible_above_bound(self):
        assert not cp_lyapunov_feasible(SCALAR, 0.5).feasible

    def test_zero_reduces_to_classical(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            sde = random_stable_sde(rng) if rng.random() < 0.5 else random_unstable_sde(rng)
            assert (
                cp_lyapunov_feasible(sde, 0.0).feasible
                == lyapunov_ito_feasible(sde).feasible
            )

    def test_monotone_in_dt_bar(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            sde = random_stable_sde(rng)
            verdicts = [
                cp_lyapunov_feasible(sde, dt_bar).feasible
                for dt_bar in np.linspace(0.0, 3.0, 13)
            ]
            # once infeasible, stays infeasible
            assert all(a or not b for a, b in zip(verdicts, verdicts[1:]))


class TestMaxStepsize:
    def test_scalar_closed_form(self):
        got = max_stepsize(SCALAR, tol=1e-7)
        assert got == pytest.approx(7.0 / 16.0, abs=1e-6)

    def test_noise_free_identity(self):
        got = max_stepsize(LinearSde(-np.eye(2)), tol=1e-6)
        assert got == pytest.approx(2.0, abs=1e-5)

    def test_unstable_returns_none(self):
        assert max_stepsize(LinearSde(np.array([[1.0]]))) is None

    def test_scalar_consistency(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            lam = float(rng.uniform(-5.0, -0.5))
            mu = float(rng.uniform(0.0, 1.5))
            closed = scalar_max_stepsize(lam, mu)
            numeric = max_stepsize(LinearSde.scalar(lam, mu), tol=1e-6)
            if closed is None:
                assert numeric is None
            else:
                assert abs(numeric - closed) <= 2e-6


class TestScalarMaxStepsize:
    def test_noise_free(self):
        assert scalar_max_stepsize(-1.0, 0.0) == pytest.approx(2.0)

    def test_with_noise(self):
        assert scalar_max_stepsize(-4.0, 1.0) == pytest.approx(0.4375)

    def test_boundary_infeasible(self):
        assert scalar_max_stepsize(-1.0, math.sqrt(2.0)) is None


class TestDiscreteStability:
    def test_stable_stepsize(self):
        assert discrete_ms_stable(SCALAR, 0.4).feasible

    def test_unstable_stepsize(self):
        assert not discrete_ms_stable(SCALAR, 0.5).feasible

    def test_exact_boundary_rejected(self):
        assert not discrete_ms_stable(SCALAR, 0.4375).feasible


class TestConditionConstants:
    def test_scalar_generator_rate(self):
        side = make_cps(SCALAR, 0.4)
        c = quadratic_condition_constants(side, [[1.0]], [[1.0]])
        assert c.alpha == pytest.approx(7.0, rel=1e-10)

    def test_identity_impulse_gives_beta_one(self):
        side = make_cps(LinearSde.scalar(-1.0, 0.5), 0.25)
        c = quadratic_condition_constants(side, [[1.0]], [[1.0]])
        # the x block never jumps here
        assert c.beta == pytest.approx(1.0, rel=1e-10)

    def test_cps_impulse_constants(self):
        # y' = (1 + lam dt) y - lam dt x - mu sqrt(dt) (x - y) xi at lam=-4, mu=1, dt=0.4:
        # E[y'^2] = ((1 + lam dt) y - lam dt x)^2 + mu^2 dt (x - y)^2, split at s=1
        side = make_cps(SCALAR, 0.4)
        c = quadratic_condition_constants(side, [[1.0]], [[1.0]], split=1.0)
        assert c.beta_self == pytest.approx(2.0 * 0.76, rel=1e-10)
        assert c.beta_cross == pytest.approx(2.0 * (16.0 * 0.16 + 0.4), rel=1e-10)
        assert c.alpha_self == pytest.approx(1.0, rel=1e-10)
        assert c.dt_under == c.dt_over == pytest.approx(0.4)

    def test_impulse_second_moment_matches_monte_carlo(self):
        rng = np.random.default_rng(2)
        for seed in range(3):
            n = 2
            f = rng.normal(size=(n, n))
            gs = (rng.normal(size=(n, n)),)
            side = make_cps(LinearSde(f, gs), 0.3)
            p_tilde = np.eye(n)
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            exact = impulse_second_moment(side, p_tilde, x, y, k=1)
            draws = np.random.default_rng(100 + seed).standard_normal((1_000_000, 1))
            mean = y + side.jumps.jump_y(x, y, 1)
            gain = side.jumps.jump_y_gain(x, y, 1)
            post = mean[None, :] + draws @ gain.T
            mc = np.mean(np.einsum("ij,jk,ik->i", post, p_tilde, post))
            assert mc == pytest.approx(exact, rel=0.01)

    def test_nonlinear_rejected(self):
        side = make_cps(LinearSde.scalar(-1.0, 0.5), 0.5)
        bad = SideSystem(
            n=1, q=1, noise_dim=1,
            drift_x=lambda x, t: -x * np.abs(x),
            diffusion_x=side.diffusion_x,
            drift_y=side.drift_y,
            diffusion_y=side.diffusion_y,
            jumps=side.jumps,
            schedule=side.schedule,
            lipschitz_x=10.0,
            lipschitz_y=10.0,
        )
        with pytest.raises(NotLinear):
            quadratic_condition_constants(bad, [[1.0]], [[1.0]])

    def test_requires_positive_definite_weights(self):
        side = make_cps(SCALAR, 0.4)
        with pytest.raises(NotPositiveDefinite):
            quadratic_condition_constants(side, [[-1.0]], [[1.0]])


def constants(**kw):
    base = dict(
        alpha=1.0, alpha_cross=1.0, alpha_self=2.0,
        beta=0.5, beta_cross=1.0, beta_self=0.25,
        dt_under=0.1, dt_over=0.5,
    )
    base.update(kw)
    return ConditionConstants(**base)


class TestImpulseIntervalCheckers:
    def test_thm1_window_accepts(self):
        # upper limit -ln(0.25)/2 = ln(4)/2 ~ 0.693147
        assert check_thm1(constants())

    def test_thm1_rejects_wide_gaps(self):
        assert not check_thm1(constants(dt_over=0.7))

    def test_thm1_rejects_expanding_jumps(self):
        assert not check_thm1(constants(beta_self=1.0))
        assert not check_thm1(constants(beta_self=1.3))

    def test_thm1_boundary_is_strict(self):
        upper = -math.log(0.25) / 2.0
        assert not check_thm1(constants(dt_over=upper))
        assert check_thm1(constants(dt_over=upper - 1e-6))

    def test_thm1_needs_positive_alpha(self):
        with pytest.raises(ValueError):
            check_thm1(constants(alpha=-1.0))

    def test_thm2_window_accepts(self):
        # min(ln 2, ln(4)/2) ~ 0.693147
        assert check_thm2(constants())

    def test_thm2_rejects_wide_gaps(self):
        assert not check_thm2(constants(dt_over=0.7))

    def test_thm2_rejects_expanding_x_jump(self):
        assert not check_thm2(constants(beta=1.0))
        assert not check_thm2(constants(beta=2.0))

    def test_thm2_boundary_is_strict(self):
        upper = math.log(2.0)
        assert not check_thm2(constants(dt_over=upper))


class TestThm4:
    def test_well_below_bound(self):
        assert check_thm4(SCALAR, [[1.0]], 0.1).passed

    def test_above_bound(self):
        res = check_thm4(SCALAR, [[1.0]], 0.5)
        assert not res.passed and res.discrete_factor >= 1.0

    def test_tiny_step_noise_free(self):
        assert check_thm4(LinearSde.scalar(-1.0, 0.0), [[1.0]], 1e-4).passed

    def test_matches_discrete_verdict_on_grid(self):
        for dt in np.linspace(0.02, 0.6, 24):
            want = discrete_ms_stable(SCALAR, float(dt)).feasible
            got = check_thm4(SCALAR, [[1.0]], float(dt)).passed
            assert got == want

    def test_explicit_split(self):
        res = check_thm4(SCALAR, [[1.0]], 0.1, split=4.0)
        assert res.alpha_self == pytest.approx(0.25)
        assert res.passed


class TestThm5:
    def test_margin_at_stable_stepsize(self):
        res = check_thm5(SCALAR, [[1.0]], 0.4)
        assert res.passed and res.margin == pytest.approx(0.6, rel=1e-10)

    def test_boundary_fails(self):
        res = check_thm5(SCALAR, [[1.0]], 0.4375)
        assert not res.passed and res.margin == pytest.approx(0.0, abs=1e-12)

    def test_alpha_bar_capped_by_stepsize(self):
        res = check_thm5(LinearSde(-np.eye(2)), np.eye(2), 1.0)
        assert res.passed
        assert res.margin == pytest.approx(1.0, rel=1e-12)
        assert res.alpha_bar == pytest.approx(0.99, rel=1e-12)

    def test_downward_closure(self):
        p = cp_lyapunov_feasible(SCALAR, 0.4).p
        assert check_thm5(SCALAR, p, 0.4).passed
        for dt_bar in (0.3, 0.2, 0.1, 0.05):
            assert check_thm5(SCALAR, p, dt_bar).passed


class TestThm6:
    def test_factor_and_implied_rate(self):
        res = check_thm6(SCALAR, [[1.0]], 0.4)
        assert res.passed
        assert res.c_bar == pytest.approx(0.76, rel=1e-12)
        assert res.implied_alpha == pytest.approx(0.6, rel=1e-10)

    def test_unstable_stepsize(self):
        res = check_thm6(SCALAR, [[1.0]], 0.5)
        assert not res.passed and res.c_bar == pytest.approx(1.5, rel=1e-12)

    def test_frozen_system_is_strictly_rejected(self):
        res = check_thm6(LinearSde(np.zeros((1, 1))), [[1.0]], 1.0)
        assert not res.passed and res.c_bar == pytest.approx(1.0)


class TestEquivalenceChain:
    def test_constructive_direction(self):
        rng = np.random.default_rng(123)
        for _ in range(50):
            sde = random_stable_sde(rng)
            assert lyapunov_ito_feasible(sde).feasible
            bound = max_stepsize(sde, tol=1e-6)
            assert bound is not None and bound > 0
            for frac in (0.25, 0.5, 0.99):
                dt = frac * bound
                assert discrete_ms_stable(sde, dt).feasible
            cert = cp_lyapunov_feasible(sde, 0.99 * bound)
            assert cert.feasible
            assert check_thm6(sde, cert.p, 0.99 * bound).passed
            assert check_thm5(sde, cert.p, 0.99 * bound).passed

    def test_converse_direction(self):
        rng = np.random.default_rng(321)
        for _ in range(25):
            sde = random_stable_sde(rng)
            bound = max_stepsize(sde, tol=1e-6)
            dt = 0.5 * bound
            cert = discrete_ms_stable(sde, dt)
            assert cert.feasible
            # the discrete certificate chains back through the one-step and
            # continuous conditions to the classical test
            thm6 = check_thm6(sde, cert.p, dt)
            assert thm6.passed
            assert check_thm5(sde, cert.p, dt).passed
            assert lyapunov_ito_feasible(sde).feasible

    def test_unstable_family_fails_every_link(self):
        # any P < 0 witness at any link would certify stability, a contradiction
        rng = np.random.default_rng(999)
        for _ in range(10):
            sde = random_unstable_sde(rng)
            assert not lyapunov_ito_feasible(sde).feasible
            assert max_stepsize(sde, tol=1e-5) is None
            eye = np.eye(sde.dim)
            for dt in (0.01, 0.1, 0.5):
                assert not discrete_ms_stable(sde, dt).feasible
                assert not check_thm6(sde, eye, dt).passed
            assert not check_thm5(sde, eye, 0.0).passed


class TestCertificateReport:
    def test_report_mentions_verdict_and_margin(self):
        cert = cp_lyapunov_feasible(SCALAR, 0.4)
        text = cert.report()
        assert "feasible" in text and "margin" in text and "P:" in text
