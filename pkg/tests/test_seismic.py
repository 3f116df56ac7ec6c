import json

import numpy as np
import pytest
from scipy import integrate

from reshare import seismic
from reshare.cascades import Cascade
from reshare.errors import DomainError, ValidationError
from reshare.seismic import (
    SeismicConfig,
    estimate_infectiousness,
    infectiousness_from_events,
    seismic_kernel,
    seismic_kernel_integral,
    seismic_kernel_tail,
    seismic_predict,
    seismic_predict_detail,
    simulate_seismic,
)
from reshare.simulation import MarkSource, SimConfig

CFG = SeismicConfig()


class TestKernel:
    def test_defaults(self):
        assert (CFG.s0, CFG.theta_s, CFG.c0, CFG.window, CFG.gamma) == (300.0, 0.242, 6.27e-4, 1200.0, 1.0)

    def test_plateau_and_continuity(self):
        assert seismic_kernel(CFG, 0.0) == CFG.c0
        assert seismic_kernel(CFG, 300.0) == CFG.c0
        assert seismic_kernel(CFG, 300.0 * (1 + 1e-12)) == pytest.approx(CFG.c0, rel=1e-10)
        assert seismic_kernel(CFG, 600.0) == pytest.approx(CFG.c0 * 2**-1.242)

    def test_mass_matches_quadrature(self):
        head, _ = integrate.quad(lambda s: seismic_kernel(CFG, s), 0, CFG.s0, epsabs=0, epsrel=1e-13)
        tail, _ = integrate.quad(lambda s: seismic_kernel(CFG, s), CFG.s0, np.inf, epsabs=0, epsrel=1e-13, limit=500)
        assert CFG.kernel_mass == pytest.approx(head + tail, rel=1e-8)
        assert CFG.kernel_mass == pytest.approx(0.9654, abs=1e-4)

    @pytest.mark.parametrize("x", [0.0, 10.0, 299.0, 300.0, 1000.0, 5e4])
    def test_integral_and_tail(self, x):
        quad, _ = integrate.quad(lambda s: seismic_kernel(CFG, s), 0, x, points=[300.0] if x > 300 else None,
                                 epsabs=0, epsrel=1e-12, limit=200)
        assert seismic_kernel_integral(CFG, x) == pytest.approx(quad, rel=1e-9, abs=1e-15)
        assert seismic_kernel_integral(CFG, x) + seismic_kernel_tail(CFG, x) == pytest.approx(CFG.kernel_mass)

    def test_negative(self):
        with pytest.raises(DomainError):
            seismic_kernel(CFG, -1.0)

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            SeismicConfig(theta_s=0.0)

    def test_config_round_trip(self, tmp_path):
        cfg = SeismicConfig(s0=100.0, gamma=0.5)
        path = tmp_path / "s.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert SeismicConfig.load(path) == cfg


class TestInfectiousness:
    def test_no_events_in_window(self):
        times, marks = [0.0, 10.0], [100.0, 5.0]
        assert infectiousness_from_events(CFG, times, marks, 5000.0) == 0.0

    def test_seed_alone(self):
        assert infectiousness_from_events(CFG, [0.0], [100.0], 50.0) == 0.0

    def test_by_hand(self):
        times, marks = [0.0, 100.0], [10.0, 4.0]
        t = 200.0
        exposure = 10.0 * CFG.c0 * 200.0 + 4.0 * CFG.c0 * 100.0
        assert infectiousness_from_events(CFG, times, marks, t) == pytest.approx(1 / exposure, rel=1e-13)

    def test_doubling_marks_halves(self, rng):
        times = np.sort(np.r_[0.0, rng.uniform(0, 2000, 30)])
        marks = rng.uniform(1, 100, 31)
        a = infectiousness_from_events(CFG, times, marks, 2500.0)
        b = infectiousness_from_events(CFG, times, 2 * marks, 2500.0)
        assert b == pytest.approx(a / 2, rel=1e-13)

    def test_shift_invariant(self, rng):
        times = np.sort(np.r_[0.0, rng.uniform(0, 2000, 30)])
        marks = rng.uniform(1, 100, 31)
        a = infectiousness_from_events(CFG, times, marks, 2100.0)
        b = infectiousness_from_events(CFG, times + 1e4, marks, 2100.0 + 1e4)
        assert b == pytest.approx(a, rel=1e-9)

    def test_t_after_observation(self):
        with pytest.raises(DomainError):
            estimate_infectiousness(CFG, Cascade(times=[0.0, 1.0], observation_time=2.0), 3.0)


class TestPrediction:
    def test_no_infectiousness_returns_observed(self):
        c = Cascade(times=[0.0, 10.0], magnitudes=[100.0, 5.0], observation_time=5000.0)
        assert seismic_predict(CFG, c) == 2.0

    def test_at_least_observed(self, rng):
        times = np.sort(np.r_[0.0, rng.uniform(0, 1000, 20)])
        c = Cascade(times=times, magnitudes=rng.uniform(1, 50, 21), observation_time=1000.0)
        d = seismic_predict_detail(CFG, c)
        assert d.popularity >= d.observed == 21

    def test_monotone_in_infectiousness(self, rng, monkeypatch):
        times = np.sort(np.r_[0.0, rng.uniform(0, 1000, 20)])
        c = Cascade(times=times, magnitudes=rng.uniform(1, 50, 21), observation_time=1000.0)
        preds = []
        for p in (0.0, 1e-3, 5e-3, 1e-2):
            monkeypatch.setattr(seismic, "estimate_infectiousness", lambda *a, p=p: p)
            preds.append(seismic_predict(CFG, c))
        assert preds[0] == 21.0
        assert all(a < b for a, b in zip(preds, preds[1:]))

    def test_saturated(self):
        c = Cascade(times=[0.0, 1.0, 2.0], magnitudes=[1.0, 1e6, 1e6], observation_time=3.0)
        d = seismic_predict_detail(CFG, c)
        assert d.saturated and d.popularity == 3.0


class TestSimulation:
    def test_zero_infectiousness(self):
        c = simulate_seismic(CFG, 0.0, SimConfig(seed=0), initial_mark=100.0)
        assert c.size == 1

    def test_deterministic(self):
        sim = SimConfig(seed=5, horizon=3000.0, mark_source=MarkSource.constant(2.0))
        a = simulate_seismic(CFG, 0.2, sim, initial_mark=50.0)
        b = simulate_seismic(CFG, 0.2, sim, initial_mark=50.0)
        np.testing.assert_array_equal(a.times, b.times)
        assert np.all(np.diff(a.times) > 0)

    def test_negative_infectiousness(self):
        with pytest.raises(ValidationError):
            simulate_seismic(CFG, -0.1)
