import math

import numpy as np
import pytest

from reshare.cascades import Cascade
from reshare.kernels import KernelParams, ModelType

FIXTURES = __import__("pathlib").Path(__file__).with_name("fixtures")

HAWKES = [ModelType.EXP, ModelType.PL, ModelType.mEXP, ModelType.mPL, ModelType.EXPN, ModelType.PLN]


def random_params(rng, family, n_events=1):
    """Interior parameter draw for ``family``; N sits above ``n_events``."""
    family = ModelType.parse(family)
    kw = {"kappa": math.exp(rng.uniform(math.log(0.05), math.log(2.0))),
          "theta": math.exp(rng.uniform(math.log(0.05), math.log(3.0)))}
    if family.is_powerlaw:
        kw["c"] = math.exp(rng.uniform(math.log(0.1), math.log(10.0)))
    if family.is_marked:
        kw["beta"] = rng.uniform(0.1, 1.2)
    if family.is_hawkesn:
        kw["N"] = n_events + math.exp(rng.uniform(0, math.log(200.0)))
    return KernelParams(**kw)


def random_cascade(rng, n=None, marked=True, T_extra=None, cascade_id="c"):
    """Random sorted times from 0 with distinct values and log-uniform marks."""
    n = int(rng.integers(2, 40)) if n is None else n
    gaps = rng.exponential(rng.uniform(0.2, 5.0), n - 1)
    times = np.concatenate([[0.0], np.cumsum(gaps + 1e-3)])
    marks = np.exp(rng.uniform(0, math.log(500), n)).round() if marked else None
    extra = rng.uniform(0, 10) if T_extra is None else T_extra
    return Cascade(times=times, magnitudes=marks, observation_time=times[-1] + extra, cascade_id=cascade_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
