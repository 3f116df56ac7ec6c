"""Intensity, compensator and negative log-likelihood with analytic gradients.

The initial event of every cascade is conditioned on: it contributes no
log-intensity term, and the compensator integrates from 0. Intensities use
a strict past (t_i < t), so tied timestamps never excite each other.

For HawkesN families the intensity is damped by ``1 - N_t / N`` where
``N_t`` counts events strictly before ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cascades import Cascade, CascadeGroup, as_cascade_list
from .errors import DomainError, ValidationError
from .kernels import KernelParams, ModelType, kernel_integral, kernel_value

# pairs materialised once and reused across evaluations; beyond this budget
# pair blocks are rebuilt on every call to bound memory
PAIR_BUDGET = 16_000_000
BLOCK_PAIRS = 1_000_000


@dataclass
class LikelihoodResult:
    nll: float
    gradient: np.ndarray
    diagnostic: str | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.nll)


def _strict_count(times, t):
    return int(np.searchsorted(times, t, side="left"))


def _check_params(params: KernelParams, family) -> ModelType:
    family = ModelType.parse(family)
    if not family.is_hawkes:
        raise ValidationError(f"{family} has no point-process likelihood")
    params.check(family)
    return family


def intensity_at(params: KernelParams, family, cascade: Cascade, t: float) -> float:
    """lambda(t) from events strictly before ``t``."""
    family = _check_params(params, family)
    if not 0.0 <= t <= cascade.observation_time:
        raise DomainError(f"t={t!r} outside [0, {cascade.observation_time!r}]")
    k = _strict_count(cascade.times, t)
    if k == 0:
        return 0.0
    vals = np.atleast_1d(
        kernel_value(params, family, t - cascade.times[:k], cascade.magnitudes[:k])
    )
    lam = math.fsum(vals)
    if family.is_hawkesn:
        lam *= max(0.0, 1.0 - k / params.N)
    return lam


def compensator(params: KernelParams, family, cascade: Cascade, T: float | None = None) -> float:
    """Integral of lambda over [0, T] in closed form."""
    family = _check_params(params, family)
    times, marks = cascade.times, cascade.magnitudes
    T = cascade.observation_time if T is None else float(T)
    if T < times[-1]:
        raise DomainError(f"T={T!r} precedes the last event at {times[-1]!r}")
    if not family.is_hawkesn:
        return math.fsum(np.atleast_1d(kernel_integral(params, family, T - times, marks)))
    # the damping factor is constant between consecutive events
    n = times.size
    bounds = np.append(times[1:], T)
    total = []
    for j in range(n):
        factor = 1.0 - (j + 1) / params.N
        if factor <= 0:
            break
        hi = kernel_integral(params, family, bounds[j] - times[: j + 1], marks[: j + 1])
        lo = kernel_integral(params, family, times[j] - times[: j + 1], marks[: j + 1])
        total.append(factor * math.fsum(np.atleast_1d(hi - lo)))
    return math.fsum(total)


# --------------------------------------------------------------------------
# vectorised joint evaluation


def _pairs_for(n_local: int, lo: int, hi: int):
    """All (parent, child) local index pairs with parent < child, child in [lo, hi)."""
    kids = np.arange(lo, hi)
    counts = kids
    child = np.repeat(kids, counts)
    starts = np.cumsum(counts) - counts
    parent = np.arange(child.size) - np.repeat(starts, counts)
    return parent, child


@dataclass
class _Block:
    parent: np.ndarray  # global event index
    child: np.ndarray  # global event index
    dt: np.ndarray
    strict: np.ndarray
    # strict pairs only: child slot, gap, parent log-mark
    q: np.ndarray = None
    dt_s: np.ndarray = None
    logm_p: np.ndarray = None
    silent: np.ndarray = None  # zero-mark parents, only when any exist


@dataclass
class _Recipe:
    offset: int
    n: int
    lo: int
    hi: int


class JointLikelihood:
    """Negative log-likelihood of cascades sharing one parameter vector.

    Build once per dataset; :meth:`evaluate` is then cheap enough to call
    from an optimizer. The free-parameter order is ``family.param_names``.
    """

    def __init__(self, data, family):
        self.family = ModelType.parse(family)
        if not self.family.is_hawkes:
            raise ValidationError(f"{self.family} has no point-process likelihood")
        self.cascades = as_cascade_list(data)
        if not self.cascades:
            raise ValidationError("need at least one cascade")
        cs = self.cascades
        sizes = np.array([c.size for c in cs])
        self.max_size = int(sizes.max())
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.t = np.concatenate([c.times for c in cs])
        if self.family.is_marked:
            self.m = np.concatenate([c.magnitudes for c in cs])
        else:
            self.m = np.ones(self.t.size)
        with np.errstate(divide="ignore"):
            lm = np.log(self.m)
        self.logm = np.where(self.m > 0, lm, 0.0)
        self.has_zero_mark = bool(self.family.is_marked and np.any(self.m == 0))
        self.T_event = np.repeat([c.observation_time for c in cs], sizes)
        local = np.arange(self.t.size) - np.repeat(offsets, sizes)
        self.local = local
        # next boundary after each event: following event time, or T
        nxt = np.empty(self.t.size)
        nxt[:-1] = self.t[1:]
        last = offsets + sizes - 1
        nxt[last] = [c.observation_time for c in cs]
        self.next_bound = nxt
        self.cascade_of = np.repeat(np.arange(len(cs)), sizes)

        # children: every non-initial event
        child_mask = local > 0
        self.children = np.flatnonzero(child_mask)
        self.slot = np.full(self.t.size, -1)
        self.slot[self.children] = np.arange(self.children.size)
        # events strictly before each child (within its cascade)
        strict_before = np.empty(self.t.size, dtype=float)
        for c, off in zip(cs, offsets):
            strict_before[off : off + c.size] = np.searchsorted(c.times, c.times, side="left")
        self.a = strict_before[self.children]

        dtmin_all = np.full(self.children.size, np.inf)
        dtmin_pos = np.full(self.children.size, np.inf)
        self._blocks: list = []
        budget = PAIR_BUDGET
        for c, off in zip(cs, offsets):
            n = c.size
            if n < 2:
                continue
            total = n * (n - 1) // 2
            lo = 1
            while lo < n:
                # grow the child range until the block holds ~BLOCK_PAIRS pairs
                hi = lo + 1
                while hi < n and (hi * (hi - 1) - lo * (lo - 1)) // 2 < BLOCK_PAIRS:
                    hi += 1
                blk = self._build(off, n, lo, hi)
                np.minimum.at(dtmin_all, self.slot[blk.child[blk.strict]], blk.dt[blk.strict])
                pos = blk.strict & (self.m[blk.parent] > 0)
                np.minimum.at(dtmin_pos, self.slot[blk.child[pos]], blk.dt[pos])
                if total <= budget:
                    self._blocks.append(blk)
                else:
                    self._blocks.append(_Recipe(off, n, lo, hi))
                lo = hi
            if total <= budget:
                budget -= total
        self._merge_materialised()
        self.no_parent = ~np.isfinite(dtmin_all)
        self.dtmin_all = np.where(self.no_parent, 0.0, dtmin_all)
        self.dtmin_pos = np.where(np.isfinite(dtmin_pos), dtmin_pos, self.dtmin_all)
        self.n_params = len(self.family.param_names)

    def _build(self, off, n, lo, hi) -> _Block:
        p, q = _pairs_for(n, lo, hi)
        p = p + off
        q = q + off
        dt = self.t[q] - self.t[p]
        strict = dt > 0
        if strict.all():
            ps, qs, dts = p, q, dt
        else:
            ps, qs, dts = p[strict], q[strict], dt[strict]
        silent = None
        if self.has_zero_mark:
            silent = self.m[ps] == 0
        return _Block(p, q, dt, strict, self.slot[qs], dts, self.logm[ps], silent)

    def _merge_materialised(self):
        mats = [b for b in self._blocks if isinstance(b, _Block)]
        rest = [b for b in self._blocks if not isinstance(b, _Block)]
        if len(mats) > 1:
            mats = [
                _Block(
                    np.concatenate([b.parent for b in mats]),
                    np.concatenate([b.child for b in mats]),
                    np.concatenate([b.dt for b in mats]),
                    np.concatenate([b.strict for b in mats]),
                    np.concatenate([b.q for b in mats]),
                    np.concatenate([b.dt_s for b in mats]),
                    np.concatenate([b.logm_p for b in mats]),
                    None if mats[0].silent is None else np.concatenate([b.silent for b in mats]),
                )
            ]
        self._blocks = mats + rest

    def _iter_blocks(self):
        for b in self._blocks:
            yield b if isinstance(b, _Block) else self._build(b.offset, b.n, b.lo, b.hi)

    # ------------------------------------------------------------------

    def _unpack(self, x):
        names = self.family.param_names
        vals = dict(zip(names, (float(v) for v in x)))
        return (
            vals["kappa"],
            vals["theta"],
            vals.get("c"),
            vals.get("beta", 0.0),
            vals.get("N"),
        )

    def _G(self, x, theta, c, grad):
        """Unscaled kernel integral over [0, x] and its theta/c derivatives."""
        if self.family.is_powerlaw:
            A = np.float64(c) ** -theta
            B = (x + c) ** -theta
            G = A * -np.expm1(-theta * np.log1p(x / c)) / theta
            if not grad:
                return G, None, None
            Gt = (-math.log(c) * A + np.log(x + c) * B) / theta - G / theta
            Gc = B / (x + c) - A / c
            return G, Gt, Gc
        G = -np.expm1(-theta * x)
        if not grad:
            return G, None, None
        return G, x * np.exp(-theta * x), None

    def evaluate(self, x, grad: bool = True, exact: bool = True) -> LikelihoodResult:
        with np.errstate(all="ignore"):
            return self._evaluate(x, grad, exact)

    def _evaluate(self, x, grad, exact):
        """NLL (and gradient) at parameter vector ``x``.

        ``exact=True`` accumulates with correctly rounded summation so the
        result does not depend on cascade order; the optimizer uses the
        faster pairwise sums.
        """
        fam = self.family
        kappa, theta, c, beta, N = self._unpack(x)
        npar = self.n_params
        names = fam.param_names
        idx = {n: i for i, n in enumerate(names)}
        total = math.fsum if exact else (lambda a: float(np.sum(a)))
        nan_grad = np.full(npar, np.nan)

        if kappa <= 0 or theta <= 0 or (c is not None and c <= 0):
            return LikelihoodResult(math.inf, nan_grad, "parameters outside the open domain")
        if fam.is_hawkesn and N < self.max_size:
            return LikelihoodResult(math.inf, nan_grad, f"N={N!r} below cascade size {self.max_size}")

        w = self.m ** beta if fam.is_marked else self.m
        nc = self.children.size

        # ---- sum of log intensities over non-initial events
        log_terms = np.zeros(nc)
        d_theta = np.zeros(nc)
        d_c = np.zeros(nc)
        d_beta = np.zeros(nc)
        if nc:
            if np.any(self.no_parent):
                k = int(np.flatnonzero(self.no_parent)[0])
                ev = self.children[k]
                return LikelihoodResult(
                    math.inf,
                    nan_grad,
                    f"zero intensity at event {self.local[ev]} of cascade "
                    f"{self.cascades[self.cascade_of[ev]].cascade_id!r} (tied with its parents)",
                )
            dtmin = self.dtmin_pos if (fam.is_marked and beta > 0) else self.dtmin_all
            S = np.zeros(nc)
            St = np.zeros(nc)
            Sc = np.zeros(nc)
            Sb = np.zeros(nc)
            if fam.is_powerlaw:
                ldmin = np.log(dtmin + c)
            marked = fam.is_marked and beta != 0.0
            for blk in self._iter_blocks():
                q = blk.q
                dt = blk.dt_s
                if fam.is_powerlaw:
                    ld = np.log(dt + c)
                    e = -(1.0 + theta) * (ld - ldmin[q])
                else:
                    e = -theta * (dt - dtmin[q])
                if marked:
                    e += beta * blk.logm_p
                r = np.exp(e)
                if marked and blk.silent is not None and beta > 0:
                    r[blk.silent] = 0.0
                S += np.bincount(q, r, nc)
                if grad:
                    if fam.is_powerlaw:
                        St += np.bincount(q, r * ld, nc)
                        Sc += np.bincount(q, r / (dt + c), nc)
                    else:
                        St += np.bincount(q, r * dt, nc)
                    if fam.is_marked:
                        Sb += np.bincount(q, r * blk.logm_p, nc)
            if np.any(S <= 0):
                k = int(np.flatnonzero(S <= 0)[0])
                ev = self.children[k]
                return LikelihoodResult(
                    math.inf,
                    nan_grad,
                    f"zero intensity at event {self.local[ev]} of cascade "
                    f"{self.cascades[self.cascade_of[ev]].cascade_id!r}",
                )
            if fam.is_powerlaw:
                shift = -(1.0 + theta) * np.log(dtmin + c)
            else:
                shift = math.log(theta) - theta * dtmin
            log_terms = math.log(kappa) + shift + np.log(S)
            if fam.is_hawkesn:
                f = 1.0 - self.a / N
                log_terms = log_terms + np.log(f)
            if grad:
                if fam.is_powerlaw:
                    d_theta = -St / S
                    d_c = -(1.0 + theta) * Sc / S
                else:
                    d_theta = 1.0 / theta - St / S
                if fam.is_marked:
                    d_beta = Sb / S

        # ---- compensator
        if not fam.is_hawkesn:
            G, Gt, Gc = self._G(self.T_event - self.t, theta, c, grad)
            comp_terms = kappa * w * G
            if grad:
                comp_k = w * G
                comp_t = kappa * w * Gt
                comp_c = kappa * w * Gc if fam.is_powerlaw else None
                comp_b = comp_terms * self.logm if fam.is_marked else None
        else:
            n_ev = self.t.size
            D = np.zeros(n_ev)
            Dt = np.zeros(n_ev)
            Dc = np.zeros(n_ev)
            # diagonal: interval after each event, integrated from the event itself
            G, Gt, Gc = self._G(self.next_bound - self.t, theta, c, grad)
            D += w * G
            if grad:
                Dt += w * Gt
                if fam.is_powerlaw:
                    Dc += w * Gc
            for blk in self._iter_blocks():
                p, q = blk.parent, blk.child
                hi = self.next_bound[q] - self.t[p]
                G1, G1t, G1c = self._G(hi, theta, c, grad)
                G0, G0t, G0c = self._G(blk.dt, theta, c, grad)
                D += np.bincount(q, w[p] * (G1 - G0), n_ev)
                if grad:
                    Dt += np.bincount(q, w[p] * (G1t - G0t), n_ev)
                    if fam.is_powerlaw:
                        Dc += np.bincount(q, w[p] * (G1c - G0c), n_ev)
            k_after = self.local + 1.0
            fac = 1.0 - k_after / N
            comp_terms = kappa * fac * D
            if grad:
                comp_k = fac * D
                comp_t = kappa * fac * Dt
                comp_c = kappa * fac * Dc if fam.is_powerlaw else None
                comp_N = kappa * k_after / N**2 * D

        nll = total(comp_terms) - total(log_terms)
        if not math.isfinite(nll):
            return LikelihoodResult(math.inf, nan_grad, "non-finite likelihood (overflow)")
        if not grad:
            return LikelihoodResult(nll, nan_grad)

        g = np.zeros(npar)
        g[idx["kappa"]] = total(comp_k) - nc / kappa
        g[idx["theta"]] = total(comp_t) - total(d_theta)
        if fam.is_powerlaw:
            g[idx["c"]] = total(comp_c) - total(d_c)
        if fam.is_marked:
            g[idx["beta"]] = total(comp_b) - total(d_beta)
        if fam.is_hawkesn:
            f = 1.0 - self.a / N
            g[idx["N"]] = total(comp_N) - total((self.a / N**2) / f)
        if not np.all(np.isfinite(g)):
            return LikelihoodResult(nll, g, "non-finite gradient")
        return LikelihoodResult(nll, g)

    def __call__(self, params: KernelParams, grad: bool = True) -> LikelihoodResult:
        params.check(self.family)
        return self.evaluate(params.to_vector(self.family), grad=grad)


def neg_log_likelihood(params: KernelParams, family, cascade: Cascade) -> LikelihoodResult:
    """NLL = compensator(T) - sum over non-initial events of log lambda(t_i)."""
    family = _check_params(params, family)
    return JointLikelihood([cascade], family)(params)


def joint_neg_log_likelihood(params: KernelParams, family, group) -> LikelihoodResult:
    """Sum of per-cascade NLLs (and gradients) under shared parameters."""
    family = _check_params(params, family)
    if isinstance(group, CascadeGroup):
        cascades = list(group.cascades)
    else:
        cascades = as_cascade_list(group)
    return JointLikelihood(cascades, family)(params)
