"""Per-user temporal feature vectors.

Each row joins a user's jointly fitted kernel parameters, the derived
diffusion measures and three six-point summaries (cascade sizes, inter-event
times within cascades, event magnitudes including initial posts).

Six-point order is (min, q1, median, mean, q3, max); quantiles use linear
interpolation between order statistics, so quantile q of the sorted sample
x_1..x_n sits at rank 1 + (n - 1) q.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascades import CascadeGroup
from .errors import ConvergenceError, ReshareError, ValidationError
from .fitting import FitConfig, fit_series
from .kernels import ModelType
from .measures import diffusion_measures

FEATURE_SCHEMA_VERSION = 1
SIX_POINT = ("min", "q1", "median", "mean", "q3", "max")
# stands in for an infinite viral score; the viral_divergent flag marks it
VIRAL_SENTINEL = 1e9


def six_point_summary(values) -> tuple[float, float, float, float, float, float]:
    """(min, q1, median, mean, q3, max) of a non-empty sample."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValidationError("six-point summary of an empty sample")
    if not np.all(np.isfinite(x)):
        raise ValidationError("six-point summary needs finite values")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    mean = math.fsum(x) / x.size
    # the mean of floats can stray an ulp outside the range
    mean = min(max(mean, float(x.min())), float(x.max()))
    return float(x.min()), float(q1), float(med), mean, float(q3), float(x.max())


def feature_columns(family) -> list[str]:
    family = ModelType.parse(family)
    cols = ["schema_version", "user_id", "n_cascades", "converged", "fit_failed"]
    cols += list(family.param_names)
    cols += ["branching_factor", "viral_score", "viral_divergent", "has_inter_event_times"]
    for prefix in ("size", "iet", "magnitude"):
        cols += [f"{prefix}_{s}" for s in SIX_POINT]
    return cols


@dataclass(frozen=True)
class FeatureTable:
    family: ModelType
    columns: list
    rows: list
    errors: dict

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([row[i] for row in self.rows])

    def matrix(self, exclude=("schema_version", "user_id")) -> np.ndarray:
        """Numeric feature matrix, one row per user."""
        keep = [i for i, c in enumerate(self.columns) if c not in exclude]
        return np.array([[float(row[i]) for i in keep] for row in self.rows])

    def user_ids(self) -> list[str]:
        return [row[1] for row in self.rows]


def _summaries(group: CascadeGroup):
    sizes = [c.size for c in group.cascades]
    gaps = [np.diff(c.times) for c in group.cascades if c.size > 1]
    marks = np.concatenate([c.magnitudes for c in group.cascades])
    if gaps:
        iet = six_point_summary(np.concatenate(gaps))
        has_iet = 1
    else:
        iet = (0.0,) * 6
        has_iet = 0
    return six_point_summary(sizes), iet, has_iet, six_point_summary(marks)


def _row(group: CascadeGroup, family: ModelType, config: FitConfig):
    sizes, iet, has_iet, mags = _summaries(group)
    error = None
    try:
        model = fit_series(group, family, config)
    except ConvergenceError as exc:
        model = exc.best
        error = exc
    if model is None:
        params = [0.0] * len(family.param_names)
        converged, failed = 0, 1
        n_star, viral, divergent = 0.0, 1.0, 0
    else:
        params = [float(v) for v in model.params.to_vector(family)]
        converged, failed = int(model.converged), 0
        m = diffusion_measures(model)
        n_star = m.branching_factor
        divergent = int(m.supercritical)
        viral = VIRAL_SENTINEL if divergent else m.viral_score
    row = [FEATURE_SCHEMA_VERSION, str(group.group_key), len(group.cascades), converged, failed]
    row += params
    row += [n_star, viral, divergent, has_iet]
    row += list(sizes) + list(iet) + list(mags)
    return row, error


def generate_features(groups, family, config: FitConfig | None = None) -> FeatureTable:
    """One feature row per group, in input order.

    Each group is fitted jointly. A fit that fails to converge still yields
    a row (``converged`` = 0); a fit that fails outright yields a row with
    ``fit_failed`` = 1 and zero parameters. Only when every group fails is
    an error raised.
    """
    family = ModelType.parse(family)
    if not family.is_hawkes:
        raise ValidationError(f"features need a Hawkes-family model, not {family.value}")
    groups = list(groups)
    if not groups:
        raise ValidationError("no groups to featurize")
    config = config or FitConfig()
    rows, errors = [], {}
    for group in groups:
        if not isinstance(group, CascadeGroup):
            raise ValidationError("generate_features expects CascadeGroup items")
        try:
            row, error = _row(group, family, config)
        except ReshareError as exc:
            if isinstance(exc, ConvergenceError):
                raise
            raise ValidationError(f"group {group.group_key!r}: {exc}") from exc
        rows.append(row)
        if error is not None:
            errors[str(group.group_key)] = str(error)
    if all(row[4] == 1 for row in rows):
        raise ConvergenceError("every group failed to fit", diagnostics={"errors": errors})
    return FeatureTable(family, feature_columns(family), rows, errors)


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_features_csv(table: FeatureTable, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])
