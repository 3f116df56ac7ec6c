import csv
import math

import numpy as np
import pytest

from reshare.cascades import Cascade, CascadeGroup
from reshare.errors import ConvergenceError, ValidationError
from reshare.features import (
    FEATURE_SCHEMA_VERSION,
    VIRAL_SENTINEL,
    feature_columns,
    generate_features,
    six_point_summary,
    write_features_csv,
)
from reshare.fitting import FitConfig
from reshare.kernels import KernelParams, ModelType
from reshare.simulation import SimConfig, generate_series


def brute_quantile(values, q):
    """Linear interpolation between order statistics at position q * (n - 1)."""
    xs = sorted(values)
    pos = q * (len(xs) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


def exp_group(key, theta, n=15, seed=0):
    cs = tuple(generate_series((ModelType.EXP, KernelParams(0.6, theta)),
                               SimConfig(seed=seed + i, horizon=30.0 / theta), cascade_id=f"{key}{i}")
               for i in range(n))
    return CascadeGroup(cs, key)


class TestSixPoint:
    def test_example(self):
        assert six_point_summary([1, 2, 3, 4, 100]) == (1.0, 2.0, 3.0, 22.0, 4.0, 100.0)

    def test_constant(self):
        assert six_point_summary([7.5] * 9) == (7.5,) * 6

    def test_single(self):
        assert six_point_summary([3.0]) == (3.0,) * 6

    def test_matches_brute_force(self, rng):
        for n in (2, 3, 10, 101):
            v = rng.lognormal(0, 2, n)
            got = six_point_summary(v)
            want = (min(v), brute_quantile(v, 0.25), brute_quantile(v, 0.5), sum(v) / n,
                    brute_quantile(v, 0.75), max(v))
            np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_order_free(self, rng):
        v = rng.normal(size=50)
        assert six_point_summary(v) == six_point_summary(v[::-1])

    @pytest.mark.parametrize("bad", [[], [1.0, np.nan], [np.inf]])
    def test_invalid(self, bad):
        with pytest.raises(ValidationError):
            six_point_summary(bad)


class TestColumns:
    def test_layout(self):
        cols = feature_columns("mPL")
        assert cols[:5] == ["schema_version", "user_id", "n_cascades", "converged", "fit_failed"]
        assert cols[5:9] == ["kappa", "theta", "c", "beta"]
        assert cols[9:13] == ["branching_factor", "viral_score", "viral_divergent", "has_inter_event_times"]
        assert len(cols) == 13 + 18 and len(set(cols)) == len(cols)
        assert cols[-1] == "magnitude_max"


@pytest.fixture(scope="module")
def groups():
    return [exp_group("a", 1.0, seed=0), exp_group("b", 0.2, seed=100), exp_group("c", 3.0, seed=200)]


@pytest.fixture(scope="module")
def table(groups):
    return generate_features(groups, "EXP", FitConfig(n_restarts=2, seed=0))


class TestGenerate:
    def test_one_row_per_group(self, table, groups):
        assert len(table) == 3 and table.user_ids() == ["a", "b", "c"]
        assert all(len(r) == len(table.columns) for r in table.rows)
        assert set(table.column("schema_version")) == {FEATURE_SCHEMA_VERSION}

    def test_permuting_groups_permutes_rows(self, table, groups):
        again = generate_features(groups[::-1], "EXP", FitConfig(n_restarts=2, seed=0))
        assert again.rows == table.rows[::-1]

    def test_summaries(self, table, groups):
        sizes = [c.size for c in groups[0].cascades]
        got = [table.column(f"size_{k}")[0] for k in ("min", "q1", "median", "mean", "q3", "max")]
        np.testing.assert_allclose(got, six_point_summary(sizes))

    def test_matrix(self, table):
        m = table.matrix()
        assert m.shape == (3, len(table.columns) - 2) and m.dtype == float

    def test_sizes_without_reshares(self):
        group = CascadeGroup(tuple(Cascade(times=[0.0], observation_time=5.0, cascade_id=str(i)) for i in range(3)),
                             "solo")
        t = generate_features([group], "EXP", FitConfig(n_restarts=1))
        assert t.column("has_inter_event_times")[0] == 0
        assert t.column("iet_max")[0] == 0.0
        assert t.column("size_mean")[0] == 1.0

    def test_divergent_uses_sentinel(self):
        # dense bursts force a supercritical estimate
        times = np.r_[0.0, np.linspace(0.01, 1.0, 200)]
        group = CascadeGroup((Cascade(times=times, observation_time=1.0),), "burst")
        t = generate_features([group], "EXP", FitConfig(n_restarts=2, seed=0))
        assert t.column("viral_divergent")[0] == 1
        assert t.column("viral_score")[0] == VIRAL_SENTINEL

    def test_failed_group_gets_flag(self, groups):
        bad = CascadeGroup((Cascade(times=[0.0, 0.0, 1.0]),), "bad")
        t = generate_features([groups[0], bad], "EXP", FitConfig(n_restarts=1, seed=0))
        assert list(t.column("fit_failed")) == [0, 1]
        assert set(t.errors) == {"bad"}

    def test_all_failed(self):
        bad = CascadeGroup((Cascade(times=[0.0, 0.0, 1.0]),), "bad")
        with pytest.raises(ConvergenceError):
            generate_features([bad], "EXP", FitConfig(n_restarts=1))

    def test_csv(self, table, tmp_path):
        path = tmp_path / "f.csv"
        write_features_csv(table, path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == table.columns and len(rows) == 4
        assert float(rows[1][table.columns.index("theta")]) == table.column("theta")[0]
