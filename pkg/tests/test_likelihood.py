import math

import numpy as np
import pytest
from scipy import integrate

from reshare import likelihood as lk
from reshare.cascades import Cascade, CascadeGroup
from reshare.errors import DomainError
from reshare.kernels import KernelParams, ModelType, kernel_value
from reshare.likelihood import (
    JointLikelihood,
    compensator,
    intensity_at,
    joint_neg_log_likelihood,
    neg_log_likelihood,
)

from conftest import HAWKES, random_cascade, random_params


def naive_intensity(p, family, c, t):
    lam = 0.0
    k = 0
    for ti, mi in zip(c.times, c.magnitudes):
        if ti < t:
            lam += kernel_value(p, family, t - ti, mi)
            k += 1
    if family.is_hawkesn:
        lam *= max(0.0, 1 - k / p.N)
    return lam


def naive_nll(p, family, c):
    """Loop over events, compensator by piecewise quadrature."""
    pts = np.unique(np.append(c.times, c.observation_time))
    comp = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        comp += integrate.quad(lambda s: naive_intensity(p, family, c, s), a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
    return comp - sum(math.log(naive_intensity(p, family, c, t)) for t in c.times[1:])


class TestAgainstNaive:
    @pytest.mark.parametrize("family", HAWKES)
    def test_nll(self, family, rng):
        for _ in range(4):
            c = random_cascade(rng, n=int(rng.integers(2, 15)))
            p = random_params(rng, family, c.size)
            got = neg_log_likelihood(p, family, c).nll
            assert got == pytest.approx(naive_nll(p, family, c), rel=1e-8, abs=1e-9)

    @pytest.mark.parametrize("family", HAWKES)
    def test_intensity_and_compensator(self, family, rng):
        c = random_cascade(rng, n=10)
        p = random_params(rng, family, c.size)
        for t in rng.uniform(0, c.observation_time, 5):
            assert intensity_at(p, family, c, t) == pytest.approx(naive_intensity(p, family, c, t), rel=1e-12)
        pts = np.append(c.times, c.observation_time)
        quad = sum(integrate.quad(lambda s: naive_intensity(p, family, c, s), a, b, epsrel=1e-12, limit=200)[0]
                   for a, b in zip(pts[:-1], pts[1:]))
        assert compensator(p, family, c) == pytest.approx(quad, rel=1e-9)


class TestGradient:
    @pytest.mark.parametrize("family", HAWKES)
    def test_central_differences(self, family, rng):
        cs = [random_cascade(rng, cascade_id=str(i)) for i in range(3)]
        J = JointLikelihood(cs, family)
        for _ in range(5):
            x = random_params(rng, family, J.max_size).to_vector(family)
            g = J.evaluate(x).gradient
            for k in range(x.size):
                h = 1e-6 * x[k]
                xp, xm = x.copy(), x.copy()
                xp[k] += h
                xm[k] -= h
                fd = (J.evaluate(xp, grad=False).nll - J.evaluate(xm, grad=False).nll) / (2 * h)
                assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestStructure:
    def test_copies_scale(self, rng):
        c = random_cascade(rng, n=12)
        p = KernelParams(0.7, 1.3, beta=0.4)
        one = neg_log_likelihood(p, "mEXP", c)
        copies = [Cascade(times=c.times, magnitudes=c.magnitudes, observation_time=c.observation_time,
                          cascade_id=str(i)) for i in range(4)]
        four = joint_neg_log_likelihood(p, "mEXP", CascadeGroup(copies))
        assert four.nll == pytest.approx(4 * one.nll, rel=1e-13)
        np.testing.assert_allclose(four.gradient, 4 * one.gradient, rtol=1e-12)

    def test_exact_order_invariance(self, rng):
        cs = [random_cascade(rng, cascade_id=str(i)) for i in range(20)]
        x = np.array([0.5, 0.8, 3.0, 0.6])
        a = JointLikelihood(cs, "mPL").evaluate(x)
        b = JointLikelihood(cs[::-1], "mPL").evaluate(x)
        assert a.nll == b.nll
        np.testing.assert_array_equal(a.gradient, b.gradient)

    def test_fast_path_close(self, rng):
        cs = [random_cascade(rng, cascade_id=str(i)) for i in range(10)]
        J = JointLikelihood(cs, "PL")
        x = np.array([0.5, 0.8, 3.0])
        assert J.evaluate(x, exact=False).nll == pytest.approx(J.evaluate(x).nll, rel=1e-12)

    def test_over_budget_recipes_agree(self, rng, monkeypatch):
        cs = [random_cascade(rng, n=60, cascade_id=str(i)) for i in range(4)]
        x = np.array([0.5, 0.8, 3.0, 0.6])
        ref = JointLikelihood(cs, "mPL").evaluate(x)
        monkeypatch.setattr(lk, "PAIR_BUDGET", 100)
        monkeypatch.setattr(lk, "BLOCK_PAIRS", 300)
        small = JointLikelihood(cs, "mPL").evaluate(x)
        assert small.nll == pytest.approx(ref.nll, rel=1e-13)
        np.testing.assert_allclose(small.gradient, ref.gradient, rtol=1e-11)

    def test_single_event(self):
        c = Cascade(times=[0.0], observation_time=5.0)
        r = neg_log_likelihood(KernelParams(0.5, 1.0), "EXP", c)
        assert r.nll == pytest.approx(0.5 * (1 - math.exp(-5.0)))


class TestEdgeCases:
    def test_tie_with_initial_is_infinite(self):
        c = Cascade(times=[0.0, 0.0, 1.0])
        r = neg_log_likelihood(KernelParams(0.5, 1.0), "EXP", c)
        assert math.isinf(r.nll) and r.diagnostic

    def test_ties_do_not_self_excite(self):
        c = Cascade(times=[0.0, 1.0, 1.0], observation_time=2.0)
        p = KernelParams(0.5, 1.0)
        lam = 0.5 * math.exp(-1.0)
        expected = compensator(p, "EXP", c) - 2 * math.log(lam)
        assert neg_log_likelihood(p, "EXP", c).nll == pytest.approx(expected, rel=1e-13)

    def test_population_below_size(self):
        c = Cascade(times=[0.0, 1.0, 2.0])
        r = neg_log_likelihood(KernelParams(0.5, 1.0, N=2.5), "EXPN", c)
        assert math.isinf(r.nll)

    def test_large_population_matches_hawkes(self, rng):
        c = random_cascade(rng, n=20, marked=False)
        a = neg_log_likelihood(KernelParams(0.6, 0.9, c=2.0, N=1e12), "PLN", c).nll
        b = neg_log_likelihood(KernelParams(0.6, 0.9, c=2.0), "PL", c).nll
        assert a == pytest.approx(b, rel=1e-9)

    def test_zero_mark_parent(self):
        c = Cascade(times=[0.0, 1.0, 2.0], magnitudes=[2.0, 0.0, 1.0])
        p = KernelParams(0.5, 1.0, beta=0.5)
        assert neg_log_likelihood(p, "mEXP", c).nll == pytest.approx(naive_nll(p, ModelType.mEXP, c), rel=1e-10)

    def test_domain_errors(self):
        c = Cascade(times=[0.0, 1.0], observation_time=3.0)
        p = KernelParams(0.5, 1.0)
        with pytest.raises(DomainError):
            intensity_at(p, "EXP", c, 3.5)
        with pytest.raises(DomainError):
            compensator(p, "EXP", c, T=0.5)

    def test_out_of_domain_parameters(self, rng):
        J = JointLikelihood([random_cascade(rng)], "PL")
        assert math.isinf(J.evaluate(np.array([0.5, -1.0, 1.0])).nll)
