"""Kernel functions, their integrals and the model-type registry.

Exponential kernel:  phi(t) = kappa * theta * exp(-theta * t)
Power-law kernel:    phi(t) = kappa * (t + c) ** -(1 + theta)

Marked families multiply the kernel by ``mark ** beta``. HawkesN families
use the unmarked kernels; their population modulation lives in the
likelihood and simulation code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from .errors import DivergenceError, DomainError, ValidationError

DEFAULT_POWERLAW_ALPHA = 2.016


class ModelType(str, Enum):
    EXP = "EXP"
    PL = "PL"
    mEXP = "mEXP"
    mPL = "mPL"
    EXPN = "EXPN"
    PLN = "PLN"
    SEISMIC = "SEISMIC"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, code) -> "ModelType":
        if isinstance(code, ModelType):
            return code
        try:
            return cls(str(code))
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ValidationError(f"unknown model type {code!r}; valid codes: {valid}") from None

    @property
    def is_marked(self) -> bool:
        return self in (ModelType.mEXP, ModelType.mPL)

    @property
    def is_powerlaw(self) -> bool:
        return self in (ModelType.PL, ModelType.mPL, ModelType.PLN)

    @property
    def is_hawkesn(self) -> bool:
        return self in (ModelType.EXPN, ModelType.PLN)

    @property
    def is_hawkes(self) -> bool:
        """True for every family with a parametric Hawkes likelihood."""
        return self is not ModelType.SEISMIC

    @property
    def param_names(self) -> tuple[str, ...]:
        if not self.is_hawkes:
            return ()
        names = ["kappa", "theta"]
        if self.is_powerlaw:
            names.append("c")
        if self.is_marked:
            names.append("beta")
        if self.is_hawkesn:
            names.append("N")
        return tuple(names)


HAWKES_FAMILIES = tuple(m for m in ModelType if m.is_hawkes)


@dataclass(frozen=True)
class KernelParams:
    kappa: float
    theta: float
    c: float | None = None
    beta: float | None = None
    N: float | None = None

    def check(self, family: ModelType) -> "KernelParams":
        """Raise unless exactly the family's parameters are present and sane."""
        family = ModelType.parse(family)
        names = family.param_names
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in names and value is None:
                raise ValidationError(f"{family} needs parameter {f.name}")
            if f.name not in names and value is not None:
                raise ValidationError(f"{family} does not use parameter {f.name}")
        if self.kappa < 0 or self.theta <= 0:
            raise ValidationError("kappa must be >= 0 and theta > 0")
        if self.c is not None and self.c <= 0:
            raise ValidationError("c must be > 0")
        if self.beta is not None and self.beta < 0:
            raise ValidationError("beta must be >= 0")
        if self.N is not None and self.N < 1:
            raise ValidationError("N must be >= 1")
        return self

    def to_vector(self, family: ModelType) -> np.ndarray:
        return np.array([getattr(self, n) for n in ModelType.parse(family).param_names], float)

    @classmethod
    def from_vector(cls, family: ModelType, x) -> "KernelParams":
        names = ModelType.parse(family).param_names
        return cls(**{n: float(v) for n, v in zip(names, x)})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


def _mark_factor(params: KernelParams, family: ModelType, mark):
    if not family.is_marked:
        return 1.0
    mark = np.asarray(mark, dtype=float)
    if np.any(mark < 0):
        raise DomainError("marks must be non-negative")
    return mark ** params.beta


def _check_nonneg(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} must be non-negative")
    return arr


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def kernel_value(params: KernelParams, family, dt, mark=1.0):
    """phi(dt), times ``mark ** beta`` for marked families. Vectorised."""
    family = ModelType.parse(family)
    dt = _check_nonneg(dt, "dt")
    if family.is_powerlaw:
        base = params.kappa * (dt + params.c) ** -(1.0 + params.theta)
    else:
        base = params.kappa * params.theta * np.exp(-params.theta * dt)
    return _scalar(base * _mark_factor(params, family, mark))


def kernel_integral(params: KernelParams, family, x, mark=1.0):
    """Closed-form integral of phi over [0, x]."""
    family = ModelType.parse(family)
    x = _check_nonneg(x, "x")
    th = params.theta
    if family.is_powerlaw:
        c = params.c
        # c**-th * (1 - (1 + x/c)**-th) / th, written to avoid cancellation
        base = params.kappa * c ** -th * -np.expm1(-th * np.log1p(x / c)) / th
    else:
        base = params.kappa * -np.expm1(-th * x)
    return _scalar(base * _mark_factor(params, family, mark))


def kernel_tail_integral(params: KernelParams, family, x, mark=1.0):
    """Closed-form integral of phi over [x, infinity)."""
    family = ModelType.parse(family)
    x = _check_nonneg(x, "x")
    th = params.theta
    if family.is_powerlaw:
        base = params.kappa * (x + params.c) ** -th / th
    else:
        base = params.kappa * np.exp(-th * x)
    return _scalar(base * _mark_factor(params, family, mark))


def kernel_mass(params: KernelParams, family) -> float:
    """Total integral of the unmarked kernel."""
    return float(kernel_tail_integral(params, family, 0.0, 1.0))


def expected_mark_effect(beta: float, marks=None, alpha: float | None = None) -> float:
    """E[m ** beta], empirically from ``marks`` or analytically for a power law.

    The analytic form assumes marks follow a Pareto law with minimum 1 and
    density exponent ``alpha``, giving (alpha - 1) / (alpha - 1 - beta).
    """
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    if alpha is not None:
        if alpha <= beta + 1:
            raise DivergenceError(f"E[m^beta] diverges for alpha={alpha} <= beta + 1")
        return (alpha - 1.0) / (alpha - 1.0 - beta)
    if marks is None:
        raise ValidationError("either marks or alpha is required")
    marks = np.asarray(marks, dtype=float)
    if marks.size == 0:
        raise ValidationError("empirical mark effect needs at least one mark")
    if beta == 0:
        return 1.0
    return math.fsum(marks ** beta) / marks.size
