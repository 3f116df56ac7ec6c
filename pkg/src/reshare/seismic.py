"""SEISMIC-style popularity prediction with time-varying infectiousness.

Each event i spreads to its ``m_i`` followers with a human reaction-time
kernel that is flat up to ``s0`` and then decays as a power law. The
infectiousness p(t) is estimated over a trailing window as

    (events in window) / (sum_i m_i * kernel mass of event i inside window),

and the final size as observed count plus the expected direct children
still to come, inflated by a geometric correction for later generations.

The shipped constants are reference defaults; the trailing window is a
rectangular approximation of the original tapered weighting.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cascades import Cascade
from .errors import DomainError, ValidationError
from .simulation import MarkSource, SimConfig, make_rng, thin


@dataclass(frozen=True)
class SeismicConfig:
    s0: float = 300.0
    theta_s: float = 0.242
    c0: float = 6.27e-4
    window: float | None = None
    gamma: float = 1.0

    def __post_init__(self):
        if self.window is None:
            object.__setattr__(self, "window", 4.0 * self.s0)
        for name in ("s0", "theta_s", "c0", "window", "gamma"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValidationError(f"SEISMIC {name} must be positive and finite")

    @property
    def kernel_mass(self) -> float:
        return self.c0 * self.s0 * (1.0 + 1.0 / self.theta_s)

    def to_dict(self) -> dict:
        return {"family": "SEISMIC", "preset": "reference defaults", "params": asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "SeismicConfig":
        params = d.get("params", d)
        known = {k: params[k] for k in ("s0", "theta_s", "c0", "window", "gamma") if k in params}
        return cls(**known)

    @classmethod
    def load(cls, path) -> "SeismicConfig":
        with Path(path).open(encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _nonneg(s, name="s"):
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} must be non-negative")
    return arr


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def seismic_kernel(config: SeismicConfig, s):
    """c0 on [0, s0], then c0 * (s / s0) ** -(1 + theta_s)."""
    s = _nonneg(s)
    with np.errstate(divide="ignore"):
        decay = config.c0 * (np.maximum(s, config.s0) / config.s0) ** -(1.0 + config.theta_s)
    return _out(np.where(s <= config.s0, config.c0, decay))


def seismic_kernel_integral(config: SeismicConfig, x):
    """Integral of the kernel over [0, x]."""
    x = _nonneg(x, "x")
    s0, th, c0 = config.s0, config.theta_s, config.c0
    late = c0 * s0 * (1.0 + (1.0 - (np.maximum(x, s0) / s0) ** -th) / th)
    return _out(np.where(x <= s0, c0 * x, late))


def seismic_kernel_tail(config: SeismicConfig, x):
    """Integral of the kernel over [x, infinity)."""
    x = _nonneg(x, "x")
    s0, th, c0 = config.s0, config.theta_s, config.c0
    late = c0 * s0 / th * (np.maximum(x, s0) / s0) ** -th
    return _out(np.where(x <= s0, config.kernel_mass - c0 * x, late))


def infectiousness_from_events(config: SeismicConfig, times, marks, t: float) -> float:
    """Trailing-window estimate of p(t) from absolute event times.

    The first event is the seed post and is never counted as an infection.
    """
    times = np.asarray(times, float)
    marks = np.asarray(marks, float)
    if times.size == 0 or t < times[0]:
        raise DomainError("t precedes the first event")
    seen = times <= t
    ts, ms = times[seen], marks[seen]
    w = config.window
    in_window = (ts > t - w)
    in_window[0] = False
    count = int(in_window.sum())
    exposure = ms * (
        np.atleast_1d(seismic_kernel_integral(config, t - ts))
        - np.atleast_1d(seismic_kernel_integral(config, np.maximum(0.0, t - w - ts)))
    )
    denom = math.fsum(exposure)
    if denom <= 0:
        return 0.0
    return count / denom


def _check_t(cascade: Cascade, t):
    if t < 0:
        raise DomainError("t precedes the first event")
    if t > cascade.observation_time:
        raise DomainError(f"t={t!r} is after the observation time {cascade.observation_time!r}")


def estimate_infectiousness(config: SeismicConfig, cascade: Cascade, t: float) -> float:
    _check_t(cascade, t)
    return infectiousness_from_events(config, cascade.times, cascade.magnitudes, t)


@dataclass(frozen=True)
class SeismicPrediction:
    popularity: float
    observed: int
    infectiousness: float
    saturated: bool

    def __float__(self):
        return self.popularity


def seismic_predict_detail(config: SeismicConfig, cascade: Cascade, t: float | None = None) -> SeismicPrediction:
    t = cascade.observation_time if t is None else float(t)
    _check_t(cascade, t)
    p = estimate_infectiousness(config, cascade, t)
    seen = cascade.times <= t
    ts, ms = cascade.times[seen], cascade.magnitudes[seen]
    observed = int(seen.sum())
    future_direct = p * math.fsum(ms * np.atleast_1d(seismic_kernel_tail(config, t - ts)))
    # future events are reshares, so their mean mark is estimated from the
    # observed reshares; the seed post's reach is usually atypical
    m_bar = float(np.mean(ms[1:])) if observed > 1 else float(ms[0])
    denom = 1.0 - config.gamma * p * m_bar
    if denom <= 0:
        return SeismicPrediction(float(observed), observed, p, True)
    return SeismicPrediction(observed + future_direct / denom, observed, p, False)


def seismic_predict(config: SeismicConfig, cascade: Cascade, t: float | None = None) -> float:
    """Predicted final size at time ``t`` (default: the observation time)."""
    return seismic_predict_detail(config, cascade, t).popularity


# --------------------------------------------------------------------------
# synthetic cascades with constant infectiousness


class SeismicExcitation:
    def __init__(self, config: SeismicConfig, infectiousness: float):
        self.config = config
        self.p = infectiousness
        self._t: list[float] = []
        self._m: list[float] = []

    def add(self, t, mark):
        self._t.append(t)
        self._m.append(mark)

    def rate_and_tail(self, s):
        d = s - np.asarray(self._t)
        m = np.asarray(self._m)
        lam = self.p * float(np.dot(m, seismic_kernel(self.config, d)))
        tail = self.p * float(np.dot(m, np.atleast_1d(seismic_kernel_tail(self.config, d))))
        return lam, tail

    def rate(self, s):
        return self.rate_and_tail(s)[0]


def simulate_seismic(config: SeismicConfig, infectiousness: float, sim: SimConfig | None = None,
                     initial_mark: float | None = None, cascade_id: str = "sim") -> Cascade:
    """Cascade from a marked self-exciting process with the SEISMIC kernel.

    Each event i contributes ``infectiousness * m_i * kernel(t - t_i)`` to
    the intensity; the branching factor is
    ``infectiousness * E[m] * kernel_mass``.
    """
    sim = sim or SimConfig()
    if infectiousness < 0:
        raise ValidationError("infectiousness must be non-negative")
    src = sim.mark_source or MarkSource.constant()
    rng = make_rng(sim.seed)
    m0 = src.draw(rng) if initial_mark is None else float(initial_mark)
    exc = SeismicExcitation(config, infectiousness)
    exc.add(0.0, m0)
    times, marks, truncated = thin(
        exc, rng, start=0.0, horizon=sim.horizon, n_existing=1, max_events=sim.max_events,
        draw_mark=src.draw, weight=lambda m: m, extinction_tol=sim.extinction_tol,
    )
    all_t = [0.0] + times
    T = sim.horizon if math.isfinite(sim.horizon) else all_t[-1]
    return Cascade(
        times=all_t, magnitudes=[m0] + marks, observation_time=T, cascade_id=cascade_id,
        simulated=np.ones(len(all_t), bool), truncated=truncated,
    )
