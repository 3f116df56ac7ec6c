"""Thinning (rejection-sampling) simulation of Hawkes and HawkesN cascades.

All kernels are non-increasing, so the intensity just after the current
time bounds the intensity until the next event. The sampler proposes an
exponential wait at that bound, accepts with ratio ``lambda(s') / bound``
and recomputes the bound after every proposal.

"Until extinction" runs stop once the expected number of further direct
children of all existing events drops below ``extinction_tol``; the
probability of missing any event is at most that tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cascades import Cascade
from .errors import SupercriticalError, ValidationError
from .kernels import DEFAULT_POWERLAW_ALPHA, KernelParams, ModelType, expected_mark_effect, kernel_mass

UNTIL_EXTINCTION = "until-extinction"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class MarkSource:
    """Where magnitudes of simulated events come from."""

    kind: str = "constant"
    marks: tuple = ()
    alpha: float = DEFAULT_POWERLAW_ALPHA
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "empirical", "power-law"):
            raise ValidationError(f"unknown mark source {self.kind!r}")
        if self.kind == "empirical":
            marks = np.asarray(self.marks, float)
            if marks.size == 0 or np.any(marks < 0) or not np.all(np.isfinite(marks)):
                raise ValidationError("empirical mark source needs finite non-negative marks")
            object.__setattr__(self, "marks", marks)
        if self.kind == "power-law" and not self.alpha > 1:
            raise ValidationError("power-law mark source needs alpha > 1")
        if self.kind == "constant" and not self.value >= 0:
            raise ValidationError("constant mark must be non-negative")

    @classmethod
    def empirical(cls, marks):
        return cls("empirical", marks=marks)

    @classmethod
    def power_law(cls, alpha=DEFAULT_POWERLAW_ALPHA):
        return cls("power-law", alpha=float(alpha))

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", value=float(value))

    def draw(self, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "empirical":
            return float(self.marks[rng.integers(self.marks.size)])
        # Pareto with minimum 1 and density exponent alpha
        return float((1.0 - rng.random()) ** (-1.0 / (self.alpha - 1.0)))

    def expected_effect(self, beta: float) -> float:
        if self.kind == "constant":
            return self.value ** beta
        if self.kind == "empirical":
            return expected_mark_effect(beta, marks=self.marks)
        return expected_mark_effect(beta, alpha=self.alpha)

    def to_dict(self) -> dict:
        if self.kind == "empirical":
            return {"kind": "empirical", "n_marks": int(len(self.marks))}
        if self.kind == "power-law":
            return {"kind": "power-law", "alpha": self.alpha}
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    horizon: float | str = math.inf
    max_events: int | None = 10**6
    mark_source: MarkSource | None = None
    extinction_tol: float = 1e-12

    def __post_init__(self):
        h = self.horizon
        if isinstance(h, str):
            if h != UNTIL_EXTINCTION:
                raise ValidationError(f"horizon must be a number or {UNTIL_EXTINCTION!r}")
            h = math.inf
        h = float(h)
        if not h > 0:
            raise ValidationError("horizon must be positive")
        object.__setattr__(self, "horizon", h)
        if self.max_events is not None and self.max_events < 1:
            raise ValidationError("max_events must be >= 1")

    @property
    def until_extinction(self) -> bool:
        return math.isinf(self.horizon)


# --------------------------------------------------------------------------
# excitation state: running sums over the history


class ExpExcitation:
    """Sum of exponential kernels, updated in O(1) per event."""

    def __init__(self, kappa, theta):
        self.kappa = kappa
        self.theta = theta
        self._level = 0.0
        self._ref = 0.0

    def add(self, t, weight):
        self._level = self._level * math.exp(-self.theta * (t - self._ref)) + self.kappa * self.theta * weight
        self._ref = t

    def rate(self, s):
        return self._level * math.exp(-self.theta * (s - self._ref))

    def rate_and_tail(self, s):
        r = self.rate(s)
        return r, r / self.theta


class PowerExcitation:
    """Sum of power-law kernels; O(history) per query."""

    _VECTOR_FROM = 48

    def __init__(self, kappa, theta, c):
        self.theta = theta
        self.c = c
        self.kappa = kappa
        self._t = []
        self._w = []
        self._ta = None
        self._wa = None

    def add(self, t, weight):
        self._t.append(t)
        self._w.append(self.kappa * weight)
        self._ta = None

    def _arrays(self):
        if self._ta is None:
            self._ta = np.array(self._t)
            self._wa = np.array(self._w)
        return self._ta, self._wa

    def rate_and_tail(self, s):
        th, c = self.theta, self.c
        if len(self._t) >= self._VECTOR_FROM:
            ta, wa = self._arrays()
            d = s - ta + c
            x = wa * d ** -th
            return float(np.sum(x / d)), float(np.sum(x)) / th
        lam = 0.0
        tail = 0.0
        for t, w in zip(self._t, self._w):
            d = s - t + c
            x = w * d ** -th
            lam += x / d
            tail += x
        return lam, tail / th

    def rate(self, s):
        return self.rate_and_tail(s)[0]


def excitation_for(family: ModelType, params: KernelParams):
    if family.is_powerlaw:
        return PowerExcitation(params.kappa, params.theta, params.c)
    return ExpExcitation(params.kappa, params.theta)


def thin(
    exc,
    rng: np.random.Generator,
    *,
    start: float,
    horizon: float,
    n_existing: int,
    max_events: int | None,
    draw_mark,
    weight,
    population: float | None = None,
    excite_new: bool = True,
    extinction_tol: float = 1e-12,
):
    """Generic thinning loop from time ``start`` given the state in ``exc``.

    Returns ``(times, marks, truncated)`` for the newly accepted events.
    ``population`` enables the HawkesN damping ``1 - n / population``.
    """
    times: list[float] = []
    marks: list[float] = []
    n = n_existing
    s = start
    until_ext = math.isinf(horizon)
    while True:
        if max_events is not None and n >= max_events:
            return times, marks, True
        factor = 1.0 if population is None else 1.0 - n / population
        if factor <= 0:
            break
        lam_bar, tail = exc.rate_and_tail(s)
        lam_bar *= factor
        if until_ext and tail * factor < extinction_tol:
            break
        if not lam_bar > 0:
            break
        s_new = s + rng.exponential(1.0 / lam_bar)
        if s_new > horizon or not math.isfinite(s_new):
            break
        if s_new == s:
            # float time resolution exhausted: the process can no longer age
            return times, marks, True
        lam_new = factor * exc.rate(s_new)
        # debug-level guard on the bound; holds because kernels are non-increasing
        assert lam_new <= lam_bar * (1 + 1e-9)
        if rng.random() * lam_bar < lam_new:
            m = draw_mark(rng)
            times.append(s_new)
            marks.append(m)
            if excite_new:
                exc.add(s_new, weight(m))
            n += 1
        s = s_new
    return times, marks, False


# --------------------------------------------------------------------------


def _resolve_model(model):
    """(family, params, default mark source) from a FittedModel or a pair."""
    if isinstance(model, tuple):
        family, params = model
        family = ModelType.parse(family)
        return family, params.check(family), MarkSource.constant()
    family = model.family
    src = MarkSource.constant()
    if family.is_marked and model.training_marks is not None and len(model.training_marks):
        src = MarkSource.empirical(model.training_marks)
    return family, model.params, src


def _weight_fn(family, params):
    if family.is_marked:
        beta = params.beta
        return lambda m: m ** beta
    return lambda m: 1.0


def nominal_branching(family: ModelType, params: KernelParams, src: MarkSource) -> float:
    effect = src.expected_effect(params.beta) if family.is_marked else 1.0
    return kernel_mass(params, family) * effect


def _setup(model, config: SimConfig | None):
    cfg = config or SimConfig()
    family, params, default_src = _resolve_model(model)
    if not family.is_hawkes:
        raise ValidationError(f"{family} cannot be simulated as a Hawkes process")
    src = cfg.mark_source or default_src
    if cfg.until_extinction and not family.is_hawkesn and cfg.max_events is None:
        n_star = nominal_branching(family, params, src)
        if n_star >= 1:
            raise SupercriticalError(
                f"branching factor {n_star:.4g} >= 1: an until-extinction run may never end; "
                "set a finite horizon or max_events"
            )
    return cfg, family, params, src


def generate_series(model, config: SimConfig | None = None, initial=None, cascade_id: str = "sim") -> Cascade:
    """Sample a fresh cascade starting with one event at time 0.

    ``model`` is a FittedModel or a ``(family, KernelParams)`` pair. The
    initial event's mark comes from ``initial`` (a MarkedEvent) when given,
    otherwise from the mark source.
    """
    cfg, family, params, src = _setup(model, config)
    rng = make_rng(cfg.seed)
    weight = _weight_fn(family, params)
    m0 = src.draw(rng) if initial is None else float(initial.magnitude)
    exc = excitation_for(family, params)
    exc.add(0.0, weight(m0))
    times, marks, truncated = thin(
        exc,
        rng,
        start=0.0,
        horizon=cfg.horizon,
        n_existing=1,
        max_events=cfg.max_events,
        draw_mark=src.draw,
        weight=weight,
        population=params.N if family.is_hawkesn else None,
        extinction_tol=cfg.extinction_tol,
    )
    all_t = [0.0] + times
    T = cfg.horizon if math.isfinite(cfg.horizon) else all_t[-1]
    uid = None if initial is None else initial.user_id
    return Cascade(
        times=all_t,
        magnitudes=[m0] + marks,
        observation_time=T,
        cascade_id=cascade_id,
        initiator_user_id=uid,
        simulated=np.ones(len(all_t), bool),
        truncated=truncated,
    )


def continue_series(model, observed: Cascade, config: SimConfig | None = None) -> Cascade:
    """Simulate the future of ``observed`` after its observation time.

    Observed events excite the future. The result holds the observed events
    followed by simulated ones, which are flagged in ``simulated``.
    """
    cfg, family, params, src = _setup(model, config)
    T = observed.observation_time
    if cfg.horizon <= T:
        raise ValidationError("continuation horizon must lie after the observation time")
    rng = make_rng(cfg.seed)
    weight = _weight_fn(family, params)
    exc = history_excitation(family, params, observed)
    times, marks, truncated = thin(
        exc,
        rng,
        start=T,
        horizon=cfg.horizon,
        n_existing=observed.size,
        max_events=cfg.max_events,
        draw_mark=src.draw,
        weight=weight,
        population=params.N if family.is_hawkesn else None,
        extinction_tol=cfg.extinction_tol,
    )
    all_t = np.concatenate([observed.times, times])
    end = cfg.horizon if math.isfinite(cfg.horizon) else max(T, float(all_t[-1]))
    uids = None
    if observed.user_ids is not None:
        uids = observed.user_ids + (None,) * len(times)
    return Cascade(
        times=all_t,
        magnitudes=np.concatenate([observed.magnitudes, marks]),
        observation_time=end,
        cascade_id=observed.cascade_id,
        initiator_user_id=observed.initiator_user_id,
        user_ids=uids,
        simulated=np.r_[np.zeros(observed.size, bool), np.ones(len(times), bool)],
        orphan=observed.orphan,
        truncated=truncated,
    )


def history_excitation(family, params, cascade: Cascade):
    """Excitation state holding every event of ``cascade``."""
    exc = excitation_for(family, params)
    weight = _weight_fn(family, params)
    for t, m in zip(cascade.times, cascade.magnitudes):
        exc.add(float(t), weight(float(m)))
    return exc


def simulate_hawkesn(family, params: KernelParams, config: SimConfig | None = None) -> Cascade:
    """Sample a HawkesN cascade; it can never exceed ``params.N`` events."""
    family = ModelType.parse(family)
    if not family.is_hawkesn:
        raise ValidationError(f"{family} is not a HawkesN family")
    return generate_series((family, params), config)


def simulate_many(model, config: SimConfig | None = None, n_runs: int = 1, initial=None) -> list[Cascade]:
    """Independent runs seeded ``config.seed + run_index``."""
    cfg = config or SimConfig()
    out = []
    for i in range(n_runs):
        run_cfg = SimConfig(cfg.seed + i, cfg.horizon, cfg.max_events, cfg.mark_source, cfg.extinction_tol)
        out.append(generate_series(model, run_cfg, initial=initial, cascade_id=f"sim{i}"))
    return out


def continue_many(model, observed: Cascade, config: SimConfig | None = None, n_runs: int = 1) -> list[Cascade]:
    cfg = config or SimConfig()
    return [
        continue_series(
            model, observed,
            SimConfig(cfg.seed + i, cfg.horizon, cfg.max_events, cfg.mark_source, cfg.extinction_tol),
        )
        for i in range(n_runs)
    ]


def offspring_counts(model, n_runs: int, seed: int = 0, mark_source: MarkSource | None = None) -> np.ndarray:
    """Direct-children counts of single parents at time 0 (first generation only).

    Each parent's mark is drawn from the mark source; children do not excite
    further events.
    """
    cfg = SimConfig(seed=seed, mark_source=mark_source, max_events=None)
    family, params, default_src = _resolve_model(model)
    src = mark_source or default_src
    weight = _weight_fn(family, params)
    rng = make_rng(cfg.seed)
    counts = np.empty(n_runs, dtype=np.int64)
    pop = params.N if family.is_hawkesn else None
    for i in range(n_runs):
        exc = excitation_for(family, params)
        exc.add(0.0, weight(src.draw(rng)))
        times, _, _ = thin(
            exc, rng, start=0.0, horizon=math.inf, n_existing=1, max_events=None,
            draw_mark=src.draw, weight=weight, population=pop, excite_new=False,
            extinction_tol=cfg.extinction_tol,
        )
        counts[i] = len(times)
    return counts
