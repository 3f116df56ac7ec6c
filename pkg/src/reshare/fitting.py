"""Maximum-likelihood fitting for the Hawkes and HawkesN families.

Each restart draws a log-uniform starting point inside the box, runs
L-BFGS-B on log-transformed parameters (``beta`` stays linear) with the
analytic gradient, then polishes with a few projected Newton steps so the
reported projected-gradient norm is meaningful. The best restart wins;
ties go to the lowest restart index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import __version__
from .cascades import Cascade, CascadeGroup, as_cascade_list
from .errors import ConvergenceError, ValidationError
from .kernels import KernelParams, ModelType
from .likelihood import JointLikelihood

MODEL_SCHEMA_VERSION = 1

DEFAULT_BOUNDS = {
    "kappa": (1e-6, 1e3),
    "theta": (1e-6, 1e3),
    "c": (1e-6, 300.0),
    "beta": (0.0, 1.5),
    "N": (None, 1e9),  # lower bound is the largest observed cascade
}

_MAX_INIT_DRAWS = 100
_MAX_ROUNDS = 8
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class FitConfig:
    n_restarts: int = 10
    seed: int = 0
    bounds: dict | None = None
    ftol: float = 1e-8
    gtol: float = 1e-5
    max_iter: int = 1000
    polish_steps: int = 30


@dataclass(frozen=True, eq=False)
class FittedModel:
    family: ModelType
    params: KernelParams
    nll: float
    converged: bool
    n_restarts_used: int
    observation_time: tuple
    training_marks: np.ndarray | None
    seed: int
    bounds: dict
    diagnostics: dict = field(default_factory=dict)
    data: list | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "version": MODEL_SCHEMA_VERSION,
            "tool_version": __version__,
            "family": self.family.value,
            "params": self.params.as_dict(),
            "nll": self.nll,
            "converged": self.converged,
            "n_restarts_used": self.n_restarts_used,
            "seed": self.seed,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "observation_time": list(self.observation_time),
            "diagnostics": self.diagnostics,
        }
        if self.training_marks is not None:
            out["training_marks"] = [float(m) for m in self.training_marks]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        family = ModelType.parse(d["family"])
        params = KernelParams(**d["params"]).check(family)
        marks = d.get("training_marks")
        return cls(
            family=family,
            params=params,
            nll=float(d.get("nll", math.nan)),
            converged=bool(d.get("converged", False)),
            n_restarts_used=int(d.get("n_restarts_used", 0)),
            observation_time=tuple(d.get("observation_time", ())),
            training_marks=None if marks is None else np.asarray(marks, float),
            seed=int(d.get("seed", 0)),
            bounds={k: tuple(v) for k, v in d.get("bounds", {}).items()},
            diagnostics=d.get("diagnostics", {}),
        )


def dump_json(obj: dict, path):
    """Write JSON with sorted keys and shortest round-trip floats."""
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def save_model(model: FittedModel, path, measures: dict | None = None):
    d = model.to_dict()
    if measures is not None:
        d["measures"] = measures
    dump_json(d, path)


def load_model(path) -> FittedModel:
    with Path(path).open(encoding="utf-8") as fh:
        return FittedModel.from_dict(json.load(fh))


# --------------------------------------------------------------------------


def resolve_bounds(family: ModelType, cascades, overrides: dict | None = None) -> dict:
    """Default box for ``family`` with ``overrides`` applied; checks lo <= hi."""
    out = {}
    max_size = max(c.size for c in cascades)
    for name in family.param_names:
        lo, hi = DEFAULT_BOUNDS[name]
        if name == "N":
            lo = float(max_size)
        if overrides and name in overrides:
            olo, ohi = overrides[name]
            lo = lo if olo is None else float(olo)
            hi = hi if ohi is None else float(ohi)
        if lo > hi:
            raise ValidationError(f"empty box for {name}: lower {lo!r} > upper {hi!r}")
        if name != "beta" and lo <= 0:
            raise ValidationError(f"lower bound for {name} must be positive")
        if name == "beta" and lo < 0:
            raise ValidationError("lower bound for beta must be >= 0")
        if name == "N" and lo < max_size:
            raise ValidationError(f"N lower bound {lo!r} below largest cascade ({max_size})")
        out[name] = (float(lo), float(hi))
    return out


def _check_data(cascades, family: ModelType):
    if not family.is_hawkes:
        raise ValidationError(f"{family} is not fitted by maximum likelihood")
    if family.is_marked and all(np.all(c.magnitudes == 1.0) for c in cascades):
        raise ValidationError(f"{family} needs event magnitudes; all marks are 1.0")


class _Problem:
    """Objective in the transformed space u (log for positive params)."""

    def __init__(self, J: JointLikelihood, lo, hi):
        self.J = J
        names = J.family.param_names
        self.log = np.array([n != "beta" for n in names])
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.ulo = self.to_u(self.lo)
        self.uhi = self.to_u(self.hi)
        self.fixed = self.lo == self.hi

    def to_u(self, p):
        u = np.array(p, float)
        u[self.log] = np.log(u[self.log])
        return u

    def to_p(self, u):
        p = np.array(u, float)
        p[self.log] = np.exp(p[self.log])
        p = np.clip(p, self.lo, self.hi)
        p[self.fixed] = self.lo[self.fixed]
        return p

    def fg(self, u, exact=False):
        p = self.to_p(u)
        r = self.J.evaluate(p, grad=True, exact=exact)
        if not r.finite or not np.all(np.isfinite(r.gradient)):
            return math.inf, np.zeros_like(p)
        jac = np.where(self.log, p, 1.0)
        return r.nll, r.gradient * jac

    def projected(self, u, g):
        at_lo = (u <= self.ulo) & (g > 0)
        at_hi = (u >= self.uhi) & (g < 0)
        pg = np.where(at_lo | at_hi | self.fixed, 0.0, g)
        return pg


def _polish(prob: _Problem, u, f, g, gtol, steps):
    """Projected Newton refinement with finite-difference Hessians of the gradient."""
    for _ in range(steps):
        pg = prob.projected(u, g)
        if np.max(np.abs(pg), initial=0.0) < gtol:
            break
        free = pg != 0
        k = int(free.sum())
        H = np.empty((k, k))
        idx = np.flatnonzero(free)
        for a, i in enumerate(idx):
            h = 1e-5 * max(1.0, abs(u[i]))
            up = u.copy()
            um = u.copy()
            up[i] += h
            um[i] -= h
            H[:, a] = (prob.fg(up)[1][idx] - prob.fg(um)[1][idx]) / (2 * h)
        H = 0.5 * (H + H.T)
        L = None
        lam = 0.0
        for _ in range(20):
            try:
                L = np.linalg.cholesky(H + lam * np.eye(k))
                break
            except np.linalg.LinAlgError:
                # Levenberg damping until the model is convex
                lam = max(10 * lam, 1e-8 * max(float(np.max(np.abs(np.diag(H)))), 1.0))
        if L is None:
            break
        d = np.zeros_like(u)
        d[idx] = -np.linalg.solve(L.T, np.linalg.solve(L, g[idx]))
        step = 1.0
        slope = float(g @ d)
        for _ in range(30):
            un = np.clip(u + step * d, prob.ulo, prob.uhi)
            fn, gn = prob.fg(un)
            if fn <= f + 1e-4 * step * slope + 1e-12 * abs(f):
                break
            step *= 0.5
        else:
            break
        if not math.isfinite(fn):
            break
        u, f, g = un, fn, gn
    return u, f, g


def _descend(prob: _Problem, u, f, g):
    """Projected steepest-descent step with Armijo backtracking; used to leave L-BFGS-B stalls."""
    d = -prob.projected(u, g)
    scale = float(np.max(np.abs(d), initial=0.0))
    if scale == 0.0:
        return u, f, g
    d /= scale
    step = 1.0
    for _ in range(50):
        un = np.clip(u + step * d, prob.ulo, prob.uhi)
        fn, gn = prob.fg(un)
        if math.isfinite(fn) and fn < f + 1e-4 * float(g @ (un - u)):
            return un, fn, gn
        step *= 0.5
    return u, f, g


def _run(prob: _Problem, u0, cfg: FitConfig):
    f0, _ = prob.fg(u0)
    if not math.isfinite(f0):
        return None
    if np.all(prob.fixed):
        f, g = prob.fg(u0)
        return u0, f, g, True, "all parameters fixed", 0
    u, f, g = u0, f0, None
    success, message, nit = False, "", 0
    # per-event scaling keeps the quasi-Newton line search well conditioned on large datasets
    scale = 1.0 / max(prob.J.t.size, 1)

    def scaled(v):
        fv, gv = prob.fg(v)
        return fv * scale, gv * scale

    for _ in range(_MAX_ROUNDS):
        res = minimize(
            scaled,
            u,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(prob.ulo, prob.uhi)),
            options={"ftol": cfg.ftol, "gtol": cfg.gtol * scale, "maxiter": max(cfg.max_iter - nit, 1)},
        )
        nit += int(res.nit)
        success, message = bool(res.success), str(res.message)
        un = np.clip(res.x, prob.ulo, prob.uhi)
        fn, gn = prob.fg(un)
        if not math.isfinite(fn):
            return None
        un, fn, gn = _polish(prob, un, fn, gn, cfg.gtol, cfg.polish_steps)
        if np.max(np.abs(prob.projected(un, gn)), initial=0.0) < cfg.gtol or nit >= cfg.max_iter:
            return un, fn, gn, success, message, nit
        # the line search can stall on badly scaled surfaces; a plain descent step restarts the curvature model
        un, fn_d, gn = _descend(prob, un, fn, gn)
        improved = f - fn_d > _MIN_GAIN * max(abs(fn_d), 1.0)
        u, f, g = un, fn_d, gn
        if not improved:
            break
    return u, f, g, success, message, nit


def _finish(J, prob, family, best, cascades, cfg, bounds, n_used, seed, extra):
    u, _, g, success, message, nit = best
    p = prob.to_p(u)
    pg_norm = float(np.max(np.abs(prob.projected(u, g)), initial=0.0))
    final = J.evaluate(p, grad=False, exact=True)
    marks = None
    if family.is_marked:
        # descendants are reshares, so E[m^beta] is taken over reshare marks;
        # seed posts usually have far larger reach
        marks = np.concatenate([c.magnitudes[1:] for c in cascades])
        if marks.size == 0:
            marks = np.concatenate([c.magnitudes for c in cascades])
    diagnostics = {
        "message": message,
        "iterations": nit,
        "projected_gradient_norm": pg_norm,
        "n_cascades": len(cascades),
        "n_events": int(sum(c.size for c in cascades)),
        **extra,
    }
    return FittedModel(
        family=family,
        params=KernelParams.from_vector(family, p),
        nll=final.nll,
        converged=bool(success and pg_norm < cfg.gtol),
        n_restarts_used=n_used,
        observation_time=tuple(c.observation_time for c in cascades),
        training_marks=marks,
        seed=seed,
        bounds=bounds,
        diagnostics=diagnostics,
        data=cascades,
    )


def fit_series(data, family, config: FitConfig | None = None) -> FittedModel:
    """Fit ``family`` jointly to a cascade, a CascadeGroup or a list of cascades."""
    cfg = config or FitConfig()
    family = ModelType.parse(family)
    cascades = list(data.cascades) if isinstance(data, CascadeGroup) else as_cascade_list(data)
    if not cascades:
        raise ValidationError("fit_series needs at least one cascade")
    _check_data(cascades, family)
    if cfg.n_restarts < 1:
        raise ValidationError("n_restarts must be >= 1")
    bounds = resolve_bounds(family, cascades, cfg.bounds)
    J = JointLikelihood(cascades, family)
    names = family.param_names
    lo = np.array([bounds[n][0] for n in names])
    hi = np.array([bounds[n][1] for n in names])
    prob = _Problem(J, lo, hi)
    rng = np.random.default_rng(cfg.seed)

    best = None
    failures = []
    for k in range(cfg.n_restarts):
        out = None
        for _ in range(_MAX_INIT_DRAWS):
            u0 = rng.uniform(prob.ulo, prob.uhi)
            if math.isfinite(prob.fg(u0)[0]):
                break
        else:
            failures.append(f"restart {k}: no finite starting point")
            continue
        try:
            out = _run(prob, u0, cfg)
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            failures.append(f"restart {k}: {exc}")
            continue
        if out is None:
            failures.append(f"restart {k}: non-finite objective")
            continue
        if best is None or out[1] < best[1]:
            best = out
    if best is None:
        raise ConvergenceError("all restarts failed", best=None, diagnostics=failures)
    return _finish(J, prob, family, best, cascades, cfg, bounds, cfg.n_restarts, cfg.seed,
                   {"failed_restarts": len(failures)})


def refit_with_bounds(model: FittedModel, bounds: dict, data=None,
                      config: FitConfig | None = None) -> FittedModel:
    """Re-optimise ``model`` from its current parameters under new bounds.

    ``bounds`` maps parameter names to ``(lower, upper)``; ``None`` keeps the
    existing side. Starting values are clipped into the new box. ``data``
    defaults to the cascades the model was fitted on.
    """
    cfg = config or FitConfig()
    family = model.family
    cascades = data if data is not None else model.data
    if cascades is None:
        raise ValidationError("refit needs the training cascades")
    cascades = as_cascade_list(cascades)
    for name, (lo, hi) in bounds.items():
        if name not in family.param_names:
            raise ValidationError(f"{family} has no parameter {name}")
        if lo is not None and hi is not None and lo > hi:
            raise ValidationError(f"empty box for {name}: lower {lo!r} > upper {hi!r}")
    merged = {n: model.bounds.get(n, (None, None)) for n in family.param_names}
    for name, (lo, hi) in bounds.items():
        olo, ohi = merged[name]
        merged[name] = (olo if lo is None else lo, ohi if hi is None else hi)
    new_bounds = resolve_bounds(family, cascades, merged)
    names = family.param_names
    lo = np.array([new_bounds[n][0] for n in names])
    hi = np.array([new_bounds[n][1] for n in names])
    J = JointLikelihood(cascades, family)
    prob = _Problem(J, lo, hi)
    p0 = np.clip(model.params.to_vector(family), lo, hi)
    out = _run(prob, prob.to_u(p0), cfg)
    if out is None:
        raise ConvergenceError("refit start is not a finite point", best=p0)
    return _finish(J, prob, family, out, cascades, cfg, new_bounds, 1, model.seed,
                   {"refit": True})
