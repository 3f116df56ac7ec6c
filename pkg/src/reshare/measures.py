"""Diffusion measures derived from a fitted model.

Conventions:

* The branching factor n* is the expected number of direct children of one
  event: kernel mass times E[m^beta] (1 for unmarked families).
* The viral score counts the initial post, so v = 1 / (1 - n*).
* For HawkesN families n* is the undamped kernel mass and is flagged
  ``nominal``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cascades import Cascade
from .errors import DivergenceError, DomainError, SupercriticalError, ValidationError
from .kernels import KernelParams, ModelType, expected_mark_effect, kernel_mass, kernel_tail_integral
from .simulation import SimConfig, continue_many

VIRAL_SCORE_INCLUDES_INITIAL_POST = True


@dataclass(frozen=True)
class DiffusionMeasures:
    branching_factor: float
    viral_score: float
    supercritical: bool
    nominal: bool = False
    mark_effect: float = 1.0

    def to_dict(self) -> dict:
        divergent = math.isinf(self.viral_score)
        return {
            "branching_factor": self.branching_factor,
            "viral_score": None if divergent else self.viral_score,
            "viral_score_divergent": divergent,
            "viral_score_includes_initial_post": VIRAL_SCORE_INCLUDES_INITIAL_POST,
            "supercritical": self.supercritical,
            "nominal": self.nominal,
            "mark_effect": self.mark_effect,
        }


@dataclass(frozen=True)
class PopularityEstimate:
    mean: float
    p10: float
    p90: float
    n_runs: int


def _resolve(model, marks=None, mark_effect=None):
    if isinstance(model, tuple):
        family, params = model
        family = ModelType.parse(family)
        params = params.check(family)
        training = None
    else:
        family, params, training = model.family, model.params, model.training_marks
    if not family.is_hawkes:
        raise ValidationError(f"{family} has no branching factor")
    effect = 1.0
    if family.is_marked:
        if mark_effect is not None:
            effect = float(mark_effect)
        elif marks is not None:
            effect = expected_mark_effect(params.beta, marks=marks)
        elif training is not None and len(training):
            effect = expected_mark_effect(params.beta, marks=training)
        else:
            raise ValidationError("a marked model needs marks or mark_effect for E[m^beta]")
    return family, params, effect


def branching_factor(model, marks=None, mark_effect=None) -> float:
    """n* = E[m^beta] * integral of the kernel over [0, inf)."""
    family, params, effect = _resolve(model, marks, mark_effect)
    if family.is_powerlaw and params.theta <= 0:
        raise DivergenceError("power-law kernel mass diverges for theta <= 0")
    return kernel_mass(params, family) * effect


def viral_score(model, marks=None, mark_effect=None) -> float:
    """Expected size of a fresh cascade, initial post included; inf if n* >= 1."""
    n_star = branching_factor(model, marks, mark_effect)
    if n_star >= 1:
        return math.inf
    return 1.0 / (1.0 - n_star)


def diffusion_measures(model, marks=None, mark_effect=None) -> DiffusionMeasures:
    family, _, effect = _resolve(model, marks, mark_effect)
    n_star = branching_factor(model, marks, mark_effect)
    return DiffusionMeasures(
        branching_factor=n_star,
        viral_score=math.inf if n_star >= 1 else 1.0 / (1.0 - n_star),
        supercritical=n_star >= 1,
        nominal=family.is_hawkesn,
        mark_effect=effect,
    )


def _horizon(cascade: Cascade, T):
    T = cascade.observation_time if T is None else float(T)
    if T < cascade.times[-1]:
        raise DomainError(f"T={T!r} precedes the last event at {cascade.times[-1]!r}")
    return T


def expected_direct_tail(model, cascade: Cascade, T=None) -> float:
    """Expected number of direct children of observed events arriving after T."""
    family, params, _ = _resolve(model, mark_effect=1.0)
    T = _horizon(cascade, T)
    tails = kernel_tail_integral(params, family, T - cascade.times, cascade.magnitudes)
    return math.fsum(np.atleast_1d(tails))


def predict_final_popularity(model, cascade: Cascade, T=None, marks=None, mark_effect=None) -> float:
    """Closed-form expected final size: n + A1 / (1 - n*).

    A1 sums the kernel tails past T of every observed event using its own
    mark; later generations use the expected mark effect through n*.
    """
    family, params, _ = _resolve(model, marks, mark_effect)
    if family.is_hawkesn:
        raise ValidationError("HawkesN has no closed-form tail; use predict_final_popularity_hawkesn")
    n_star = branching_factor(model, marks, mark_effect)
    if n_star >= 1:
        raise SupercriticalError(
            f"branching factor {n_star:.4g} >= 1: the expected final size is infinite; "
            "use simulation with a horizon instead"
        )
    a1 = expected_direct_tail(model, cascade, T)
    return cascade.size + a1 / (1.0 - n_star)


def predict_final_popularity_hawkesn(model, cascade: Cascade, T=None, config: SimConfig | None = None,
                                     n_runs: int = 200) -> PopularityEstimate:
    """Monte-Carlo final size of a HawkesN cascade from seeded continuations."""
    family, params, _ = _resolve(model, mark_effect=1.0)
    if not family.is_hawkesn:
        raise ValidationError(f"{family} is not a HawkesN family")
    if n_runs < 1:
        raise ValidationError("n_runs must be >= 1")
    T = _horizon(cascade, T)
    observed = cascade if T == cascade.observation_time else cascade.with_observation_time(T)
    cfg = config or SimConfig()
    cfg = SimConfig(cfg.seed, math.inf, cfg.max_events, cfg.mark_source, cfg.extinction_tol)
    sizes = np.array([c.size for c in continue_many(model, observed, cfg, n_runs)], float)
    return PopularityEstimate(
        mean=math.fsum(sizes) / sizes.size,
        p10=float(np.quantile(sizes, 0.1)),
        p90=float(np.quantile(sizes, 0.9)),
        n_runs=n_runs,
    )
