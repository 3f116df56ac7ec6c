"""Command-line interface: parse -> fit -> simulate / predict -> features.

Exit codes: 0 success (a fit that did not converge is still a success),
1 input/output failure, 2 usage or data-format error.

Every run writes a manifest next to its main output (``<out>.manifest.json``
unless ``--manifest`` is given). The manifest holds the wall-clock duration,
so it is the one file that differs between otherwise identical runs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import secrets
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cascades import (
    UNKNOWN_INITIATOR,
    CascadeGroup,
    group_by_initiator,
    load_cascades_csv,
    load_field_map,
    parse_raw_tweets,
    write_cascades_csv,
    write_users_csv,
)
from .errors import ConvergenceError, ReshareError, SupercriticalError, ValidationError
from .features import FEATURE_SCHEMA_VERSION, generate_features, write_features_csv
from .fitting import MODEL_SCHEMA_VERSION, FitConfig, FittedModel, dump_json, fit_series, save_model
from .kernels import KernelParams, ModelType, kernel_value
from .likelihood import intensity_at
from .measures import diffusion_measures, predict_final_popularity, predict_final_popularity_hawkesn
from .seismic import SeismicConfig, seismic_predict_detail
from .simulation import UNTIL_EXTINCTION, MarkSource, SimConfig, continue_many, simulate_many

EXIT_OK, EXIT_IO, EXIT_USAGE = 0, 1, 2
INDEX_KIND = "model-index"


class UsageError(Exception):
    """Bad flag combination detected after argument parsing."""


@dataclass
class RunManifest:
    subcommand: str
    inputs: list
    config_hash: str
    seed: int | None
    seed_source: str
    tool_version: str = __version__
    duration_s: float = 0.0
    outputs: list = field(default_factory=list)


# --------------------------------------------------------------------------
# helpers


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_hash(args: argparse.Namespace, inputs: list) -> str:
    skip = {"func", "manifest", "config"}
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    payload = {"flags": flags, "inputs": [_file_digest(p) for p in inputs]}
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _resolve_seed(args) -> tuple[int, str]:
    if getattr(args, "seed", None) is not None:
        return args.seed, "explicit"
    # 31 bits keeps seed + run index well inside int64
    args.seed = secrets.randbits(31)
    return args.seed, "auto"


def _load_cascades(path, need_marks: bool = False):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), [])
    has_marks = "magnitude" in header
    if need_marks and not has_marks:
        raise ValidationError(f"{path}: a marked model needs a magnitude column")
    return load_cascades_csv(path, has_marks=has_marks)


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def _measures_dict(model: FittedModel) -> dict:
    return diffusion_measures(model).to_dict()


def _safe_name(key: str) -> str:
    keep = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in key)
    digest = hashlib.sha1(key.encode()).hexdigest()[:8]
    return f"{keep[:40]}-{digest}"


def _load_models(path):
    """Return ``{group_key: FittedModel}`` or ``{None: FittedModel}`` for a single model."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("kind") == INDEX_KIND:
        out = {}
        for entry in d["groups"]:
            with (path.parent / entry["model"]).open(encoding="utf-8") as fh:
                out[entry["group_key"]] = FittedModel.from_dict(json.load(fh))
        return out
    return {None: FittedModel.from_dict(d)}


def _mark_source(spec: str | None, model: FittedModel) -> MarkSource:
    if spec is None:
        if model.family.is_marked and model.training_marks is not None:
            return MarkSource.empirical(model.training_marks)
        return MarkSource.constant()
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        return MarkSource.constant(float(arg) if arg else 1.0)
    if kind in ("power-law", "powerlaw"):
        return MarkSource.power_law(float(arg)) if arg else MarkSource.power_law()
    if kind == "empirical":
        if model.training_marks is None:
            raise UsageError("--mark-source empirical needs a marked model with training marks")
        return MarkSource.empirical(model.training_marks)
    raise UsageError(f"unknown mark source {spec!r}; use empirical, constant[:v] or power-law[:alpha]")


def _horizon(text: str) -> float | str:
    if text in (UNTIL_EXTINCTION, "inf"):
        return UNTIL_EXTINCTION
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("horizon must be positive")
    return value


def _max_events(text: str) -> int | None:
    if text.lower() in ("none", "0"):
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("max-events must be >= 1 (or 'none')")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


# --------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> list:
    fmap = load_field_map(args.field_map) if args.field_map else None
    result = parse_raw_tweets(
        args.input, field_map=fmap, drop_orphans=args.drop_orphans,
        include_singletons=args.include_singletons,
    )
    out = Path(args.out)
    write_cascades_csv(result.cascades, out)
    users = Path(args.users) if args.users else out.with_name(out.stem + ".users.csv")
    summary_path = Path(args.summary) if args.summary else out.with_name(out.stem + ".summary.json")
    write_users_csv(result.users, users)
    summary = result.summary.as_dict()
    dump_json(summary, summary_path)
    print(json.dumps(summary, sort_keys=True))
    return [str(out), str(users), str(summary_path)]


def _fit_one(data, family, cfg) -> FittedModel:
    try:
        return fit_series(data, family, cfg)
    except ConvergenceError as exc:
        if exc.best is None:
            raise
        return exc.best


def _plot_tables(model: FittedModel, cascades, prefix: Path) -> list:
    family, params = model.family, model.params
    grid = np.concatenate([[0.0], np.logspace(-3, 6, 181)])
    kernel_path = prefix.with_name(prefix.name + ".kernel.csv")
    _write_rows(kernel_path, ["t", "phi"],
                [[_cell(t), _cell(v)] for t, v in zip(grid, np.atleast_1d(kernel_value(params, family, grid)))])
    rows = []
    for c in cascades:
        for t in np.linspace(0.0, c.observation_time, 201):
            rows.append([c.cascade_id, _cell(float(t)), _cell(intensity_at(params, family, c, float(t)))])
    intensity_path = prefix.with_name(prefix.name + ".intensity.csv")
    _write_rows(intensity_path, ["cascade_id", "t", "lambda"], rows)
    return [str(kernel_path), str(intensity_path)]


def cmd_fit(args) -> list:
    family = ModelType.parse(args.model_type)
    if not family.is_hawkes:
        raise UsageError("SEISMIC is not fitted; use `predict --seismic`")
    cascades = _load_cascades(args.input, need_marks=family.is_marked)
    cfg = FitConfig(n_restarts=args.n_restarts, seed=args.seed)
    out = Path(args.out)
    written = []
    if not args.group_by_user:
        model = _fit_one(cascades, family, cfg)
        save_model(model, out, measures=_measures_dict(model))
        written.append(str(out))
        if args.emit_plot_data:
            written += _plot_tables(model, cascades, out.with_suffix(""))
        return written
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for group in group_by_initiator(cascades):
        name = _safe_name(group.group_key) + ".json"
        try:
            model = _fit_one(group, family, cfg)
        except ReshareError as exc:
            entries.append({"group_key": group.group_key, "model": None, "error": str(exc),
                            "n_cascades": len(group.cascades)})
            continue
        save_model(model, out / name, measures=_measures_dict(model))
        written.append(str(out / name))
        entries.append({"group_key": group.group_key, "model": name, "converged": model.converged,
                        "n_cascades": len(group.cascades)})
        if args.emit_plot_data:
            written += _plot_tables(model, group.cascades, out / name.removesuffix(".json"))
    index = {"kind": INDEX_KIND, "version": MODEL_SCHEMA_VERSION, "family": family.value,
             "groups": [e for e in entries if e["model"] is not None],
             "failed": [e for e in entries if e["model"] is None]}
    dump_json(index, out / "index.json")
    written.append(str(out / "index.json"))
    return written


def cmd_simulate(args) -> list:
    models = _load_models(args.model)
    if len(models) != 1:
        raise UsageError("simulate needs a single model file, not an index")
    model = next(iter(models.values()))
    if not model.family.is_hawkes:
        raise UsageError("simulate supports Hawkes-family models")
    cfg = SimConfig(seed=args.seed, horizon=args.horizon, max_events=args.max_events,
                    mark_source=_mark_source(args.mark_source, model))
    runs = []
    if args.continue_from:
        observed = _load_cascades(args.continue_from)
        for k, c in enumerate(observed):
            # each observed cascade gets its own block of seeds
            sub = SimConfig(args.seed + k * args.n_runs, cfg.horizon, cfg.max_events, cfg.mark_source)
            if not cfg.until_extinction and cfg.horizon <= c.observation_time:
                raise UsageError(f"horizon must exceed the observation time of cascade {c.cascade_id!r}")
            for i, sim in enumerate(continue_many(model, c, sub, args.n_runs)):
                runs.append((f"{c.cascade_id}/sim{i}", c.cascade_id, c.size, sim))
    else:
        from .cascades import MarkedEvent
        initial = None if args.initial_mark is None else MarkedEvent(0.0, args.initial_mark)
        for i, sim in enumerate(simulate_many(model, cfg, args.n_runs, initial=initial)):
            runs.append((f"sim{i}", "", 0, sim))
    sims = [_renamed(sim, run_id) for run_id, _, _, sim in runs]
    out = Path(args.out)
    write_cascades_csv(sims, out, simulated_column=True)
    sizes = Path(args.sizes) if args.sizes else out.with_name(out.stem + ".sizes.csv")
    _write_rows(sizes, ["run_id", "source_cascade_id", "seed", "size", "simulated_events", "truncated"],
                [[run_id, src, _cell(args.seed + i), sim.size, sim.size - n_obs, _cell(sim.truncated)]
                 for i, (run_id, src, n_obs, sim) in enumerate(runs)])
    return [str(out), str(sizes)]


def _renamed(c, cascade_id):
    from .cascades import Cascade
    return Cascade(times=c.times, magnitudes=c.magnitudes, observation_time=c.observation_time,
                   cascade_id=cascade_id, initiator_user_id=c.initiator_user_id, user_ids=c.user_ids,
                   simulated=c.simulated, orphan=c.orphan, truncated=c.truncated)


PREDICT_COLUMNS = ["cascade_id", "group_key", "method", "observe_until", "observed", "prediction",
                   "p10", "p90", "branching_factor", "viral_score", "viral_divergent", "status"]


def _observe(c, T):
    if T is None:
        return c
    return c.observed_until(min(T, c.observation_time))


def _predict_hawkes(model, c, args, k):
    m = diffusion_measures(model)
    base = [m.branching_factor, None if m.supercritical else m.viral_score, m.supercritical]
    if model.family.is_hawkesn:
        cfg = SimConfig(seed=args.seed + k * args.n_runs, max_events=args.max_events)
        est = predict_final_popularity_hawkesn(model, c, config=cfg, n_runs=args.n_runs)
        return ["hawkesn-mc", est.mean, est.p10, est.p90, *base, "ok"]
    try:
        pred = predict_final_popularity(model, c)
    except SupercriticalError:
        return ["closed-form", None, None, None, *base, "supercritical"]
    return ["closed-form", pred, None, None, *base, "ok"]


def cmd_predict(args) -> list:
    if (args.model is None) == (args.seismic is None):
        raise UsageError("give exactly one of --model or --seismic")
    cascades = _load_cascades(args.input)
    rows = []
    if args.seismic is not None:
        config = SeismicConfig() if args.seismic == "default" else SeismicConfig.load(args.seismic)
        for c in cascades:
            c = _observe(c, args.observe_until)
            d = seismic_predict_detail(config, c)
            reshare_marks = c.magnitudes[1:] if c.size > 1 else c.magnitudes
            n_eff = d.infectiousness * float(np.mean(reshare_marks)) * config.kernel_mass
            rows.append([c.cascade_id, c.initiator_user_id, "seismic", c.observation_time, c.size,
                         d.popularity, None, None, n_eff, None, None,
                         "saturated" if d.saturated else "ok"])
    else:
        models = _load_models(args.model)
        single = models.get(None) if len(models) == 1 else None
        for k, c in enumerate(cascades):
            c = _observe(c, args.observe_until)
            key = c.initiator_user_id or UNKNOWN_INITIATOR
            model = single or models.get(key)
            head = [c.cascade_id, c.initiator_user_id, None, c.observation_time, c.size]
            if model is None:
                rows.append(head + [None] * 6 + ["no_model"])
                continue
            try:
                tail = _predict_hawkes(model, c, args, k)
            except ReshareError as exc:
                rows.append(head + [None] * 6 + [f"error:{type(exc).__name__}"])
                continue
            head[2] = tail[0]
            rows.append(head + tail[1:])
    _write_rows(args.out, PREDICT_COLUMNS, [[_cell(v) for v in row] for row in rows])
    return [str(args.out)]


def top_k_groups(groups: list[CascadeGroup], k: int | None) -> list[CascadeGroup]:
    """Keep the k groups with most cascades; ties go to the smaller user id."""
    if k is None:
        return groups
    if k <= 0:
        raise UsageError("--top-k-users must be positive")
    ranked = sorted(groups, key=lambda g: (-len(g.cascades), g.group_key))
    return ranked[:k]


def cmd_features(args) -> list:
    family = ModelType.parse(args.model_type)
    if not family.is_hawkes:
        raise UsageError("features need a Hawkes-family model type")
    cascades = _load_cascades(args.input, need_marks=family.is_marked)
    groups = [g for g in group_by_initiator(cascades)
              if args.include_unknown or g.group_key != UNKNOWN_INITIATOR]
    if not groups:
        raise ValidationError("no user groups to featurize")
    groups = top_k_groups(groups, args.top_k_users)
    table = generate_features(groups, family, FitConfig(n_restarts=args.n_restarts, seed=args.seed))
    write_features_csv(table, args.out)
    for key, err in table.errors.items():
        print(f"warning: {key}: {err}", file=sys.stderr)
    return [str(args.out)]


# --------------------------------------------------------------------------
# parser


def _add_common(p, randomized=False):
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    if randomized:
        p.add_argument("--seed", type=int, default=None, help="master seed (auto-generated and recorded if absent)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reshare", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--version", action="version",
        version=f"reshare {__version__} (model schema {MODEL_SCHEMA_VERSION}, feature schema {FEATURE_SCHEMA_VERSION})",
    )
    parser.add_argument("--config", help="key=value file setting any flag of the subcommand")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="tweet dump (JSON lines) -> cascade CSV, user table, summary")
    p.add_argument("input")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--users")
    p.add_argument("--summary")
    p.add_argument("--field-map", "--field_map", dest="field_map")
    p.add_argument("--drop-orphans", action="store_true")
    p.add_argument("--include-singletons", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("fit", help="fit a model to cascades (optionally one joint fit per user)")
    p.add_argument("input")
    p.add_argument("--model-type", "--model_type", dest="model_type", required=True)
    p.add_argument("--out", "-o", required=True, help="model JSON, or a directory with --group-by-user")
    p.add_argument("--group-by-user", action="store_true")
    p.add_argument("--n-restarts", type=_positive_int, default=10)
    p.add_argument("--emit-plot-data", action="store_true")
    _add_common(p, randomized=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate new cascades or continue observed ones")
    p.add_argument("--model", required=True)
    p.add_argument("--continue", dest="continue_from", metavar="CASCADES")
    p.add_argument("--horizon", type=_horizon, default=UNTIL_EXTINCTION)
    p.add_argument("--n-runs", type=_positive_int, default=1)
    p.add_argument("--max-events", type=_max_events, default=10**6)
    p.add_argument("--mark-source")
    p.add_argument("--initial-mark", type=float)
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--sizes")
    _add_common(p, randomized=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="final-popularity prediction per cascade")
    p.add_argument("input")
    p.add_argument("--model")
    p.add_argument("--seismic", nargs="?", const="default", metavar="CONFIG")
    p.add_argument("--observe-until", type=float)
    p.add_argument("--n-runs", type=_positive_int, default=200, help="Monte-Carlo runs for HawkesN")
    p.add_argument("--max-events", type=_max_events, default=10**6)
    p.add_argument("--out", "-o", required=True)
    _add_common(p, randomized=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("features", help="per-user feature vectors")
    p.add_argument("input")
    p.add_argument("--model-type", "--model_type", dest="model_type", required=True)
    p.add_argument("--top-k-users", type=int)
    p.add_argument("--include-unknown", action="store_true", help="keep cascades with no initiator")
    p.add_argument("--n-restarts", type=_positive_int, default=10)
    p.add_argument("--out", "-o", required=True)
    _add_common(p, randomized=True)
    p.set_defaults(func=cmd_features)
    return parser


def _config_tokens(path) -> list[str]:
    tokens = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() == "true":
            tokens.append(flag)
        elif value.lower() != "false":
            tokens += [flag, value]
    return tokens


def _expand_config(argv: list[str]) -> list[str]:
    """Splice ``--config`` flags in right after the subcommand so explicit flags win."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    commands = {"parse", "fit", "simulate", "predict", "features"}
    pos = next((i for i, a in enumerate(rest) if a in commands), None)
    if pos is None:
        return rest
    return rest[: pos + 1] + _config_tokens(known.config) + rest[pos + 1:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
    except UsageError as exc:
        print(f"reshare: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"reshare: error: {exc}", file=sys.stderr)
        return EXIT_IO
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        seed, seed_source = _resolve_seed(args) if hasattr(args, "seed") else (None, "none")
        inputs = [p for p in (getattr(args, "input", None), getattr(args, "model", None),
                              getattr(args, "continue_from", None)) if p]
        if getattr(args, "seismic", None) not in (None, "default"):
            inputs.append(args.seismic)
        manifest = RunManifest(args.command, inputs, _config_hash(args, inputs), seed, seed_source)
        outputs = args.func(args)
    except UsageError as exc:
        print(f"reshare {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReshareError as exc:
        print(f"reshare {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"reshare {args.command}: error: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"reshare {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO
    manifest.duration_s = time.perf_counter() - started
    manifest.outputs = outputs
    target = args.manifest or (str(Path(args.out)) + ".manifest.json")
    try:
        Path(target).write_text(json.dumps(asdict(manifest), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"reshare {args.command}: error: cannot write manifest: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
