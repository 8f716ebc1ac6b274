"""Command-line interface.

Subcommands: ``gen`` (synthetic data), ``select`` (one round on a features
file), ``run`` (full experiment), ``ablate`` (alpha / distance / aggregation
tables) and ``report`` (summarize JSONL reports).

Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .datagen import ScenarioConfig, generate
from .embedding import EmbeddingBatch
from .exceptions import ConfigError, GalaError, SchemaError
from .harness import (
    STRATEGIES,
    ExperimentSpec,
    ablation_study,
    efficacy_summary,
    final_reports,
    read_reports_jsonl,
    run_experiment,
    write_reports_jsonl,
    write_summary_csv,
)
from .io import (
    atomic_write_text,
    load_model,
    read_features_csv,
    read_probabilities_csv,
    write_answer_key,
    write_features_csv,
)
from .selection import select_from_embeddings, select_round
from .trainer import TrainConfig, even_schedule
from .types import UNLABELED, LabeledPool, SelectionConfig, validate_dataset

log = logging.getLogger("gala")

EXIT_RUNTIME, EXIT_CONFIG, EXIT_IO = 1, 2, 3

_SCENARIO_KEYS = {f.name for f in fields(ScenarioConfig)} - {"rng_seed"}
_SELECTION_KEYS = {f.name for f in fields(SelectionConfig)} - {"rng_seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"rng_seed"}
_OTHER_KEYS = {"seed", "seeds", "strategies", "features", "answer_key", "model", "probs",
               "out", "round", "diagnostics"}
KNOWN_KEYS = _SCENARIO_KEYS | _SELECTION_KEYS | _TRAIN_KEYS | _OTHER_KEYS

_AGGREGATE = {"min": "minimum", "avg": "average", "minimum": "minimum", "average": "average"}


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        out[key] = value
    return out


def _coerce(value, kind):
    if not isinstance(value, str):
        return value
    try:
        if kind is bool:
            return value.strip().lower() in ("1", "true", "yes", "on")
        if kind is tuple:
            return tuple(float(v) for v in value.replace(" ", "").split(",") if v)
        return kind(value)
    except ValueError:
        raise ConfigError(f"cannot parse {value!r} as {kind.__name__}") from None


def _int_list(value):
    if isinstance(value, str):
        try:
            return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
        except ValueError:
            raise ConfigError(f"expected comma-separated integers, got {value!r}") from None
    return tuple(value)


def _typed(cls, values: dict, names):
    kw = {}
    for f in fields(cls):
        if f.name in names and f.name in values:
            default = f.default
            kind = type(default) if default is not None else str
            if f.name == "active_epochs":
                kw[f.name] = _int_list(values[f.name])
            elif f.name == "domain_shift":
                shift = _coerce(values[f.name], tuple)
                kw[f.name] = shift * 3 if len(shift) == 1 else shift
            else:
                kw[f.name] = _coerce(values[f.name], kind)
    return kw


def merged_settings(args) -> dict:
    """Config-file values overridden by explicit command-line flags."""
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    flag_map = {
        "seed": "seed", "budget": "budget_per_round", "rounds": "rounds",
        "alpha": "alpha_percent", "distance": "distance_mode", "aggregate": "aggregation_mode",
        "global_embed": "global_embedding", "local_embed": "local_embedding",
        "strategy": "strategies", "out": "out", "features": "features", "model": "model",
        "probs": "probs", "answer_key": "answer_key", "seeds": "seeds",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            values[key] = val
    if "aggregation_mode" in values:
        agg = str(values["aggregation_mode"])
        if agg not in _AGGREGATE:
            raise ConfigError(f"aggregation must be min or avg, got {agg!r}")
        values["aggregation_mode"] = _AGGREGATE[agg]
    return values


def build_configs(values: dict):
    seed = int(_coerce(values.get("seed", 0), int))
    scenario = ScenarioConfig(rng_seed=seed, **_typed(ScenarioConfig, values, _SCENARIO_KEYS))
    selection = SelectionConfig(rng_seed=seed, **_typed(SelectionConfig, values, _SELECTION_KEYS))
    tkw = _typed(TrainConfig, values, _TRAIN_KEYS)
    if "active_epochs" not in tkw and selection.rounds != TrainConfig().rounds:
        epochs = tkw.get("epochs", TrainConfig().epochs)
        tkw["active_epochs"] = even_schedule(epochs, selection.rounds)
    training = TrainConfig(rng_seed=seed, **tkw)
    return scenario, selection, training


def _out_dir(values) -> Path:
    return Path(values.get("out", "."))


def cmd_gen(args) -> int:
    values = merged_settings(args)
    scenario, _, _ = build_configs(values)
    ds, key = generate(scenario)
    out = _out_dir(values)
    write_features_csv(ds, out / "features.csv")
    write_answer_key(key, out / "answer_key.csv")
    print(f"wrote {len(ds)} rows to {out / 'features.csv'} and {len(key)} labels to "
          f"{out / 'answer_key.csv'}")
    return 0


def _load_dataset(values):
    if "features" not in values:
        raise ConfigError("a features file is required (--features or 'features = ...')")
    n_classes = int(values["n_classes"]) if "n_classes" in values else None
    ds = read_features_csv(values["features"], n_classes=n_classes)
    validate_dataset(ds)
    return ds


def cmd_select(args) -> int:
    values = merged_settings(args)
    _, selection, _ = build_configs(values)
    ds = _load_dataset(values)
    tgt = ds.target_mask
    annotated = ds.ids[tgt & (ds.labels != UNLABELED)]
    unlabeled = ds.ids[tgt & (ds.labels == UNLABELED)]
    pool = LabeledPool(tuple(annotated.tolist()), tuple(unlabeled.tolist()))
    rnd = int(values.get("round", 1))
    if "model" in values:
        result = select_round(pool, load_model(values["model"]), ds, selection, rnd)
    elif "probs" in values:
        pid, P = read_probabilities_csv(values["probs"])
        prob_of = {int(i): p for i, p in zip(pid, P)}

        def batch(ids):
            missing = [int(i) for i in ids if int(i) not in prob_of]
            if missing:
                raise SchemaError(f"probabilities missing for ids {missing[:5]}")
            rows = ds.rows(ids)
            probs = np.stack([prob_of[int(i)] for i in ids]) if len(ids) else np.zeros((0, P.shape[1]))
            return EmbeddingBatch(ds.features[rows], probs, ids)

        if len(unlabeled) < selection.budget_per_round:
            raise GalaError(f"{len(unlabeled)} unlabeled targets for a budget of "
                            f"{selection.budget_per_round}", "TOO_FEW_TARGETS")
        target = batch(unlabeled)
        src_ids = ds.source_ids
        if selection.local_embedding == "gradient":
            source = batch(src_ids)
        else:
            source = EmbeddingBatch(ds.features[ds.rows(src_ids)],
                                    np.full((len(src_ids), P.shape[1]), 1.0 / P.shape[1]), src_ids)
        result = select_from_embeddings(target, source, ds.domains[ds.rows(src_ids)], selection,
                                        ds.n_source_domains, rnd)
    else:
        raise ConfigError("select needs --model or --probs")
    text = json.dumps(result.to_dict(), sort_keys=True, indent=1) + "\n"
    out = _out_dir(values) / "selection.json"
    atomic_write_text(out, text)
    print(" ".join(str(i) for i in result.selected_ids))
    return 0


def _experiment_spec(values) -> ExperimentSpec:
    scenario, selection, training = build_configs(values)
    strategies = tuple(s.strip() for s in str(values.get("strategies", "gala,random")).split(",")
                       if s.strip())
    seeds = _int_list(values.get("seeds", str(values.get("seed", 0))))
    kw = dict(selection=selection, training=training, strategies=strategies, seeds=seeds,
              diagnostics=_coerce(values.get("diagnostics", "true"), bool))
    if "features" in values:
        if not Path(values["features"]).exists():
            raise FileNotFoundError(values["features"])
        n_classes = int(values["n_classes"]) if "n_classes" in values else None
        return ExperimentSpec(scenario=str(values["features"]), answer_key=values.get("answer_key"),
                              n_classes=n_classes, **kw)
    return ExperimentSpec(scenario=scenario, **kw)


def cmd_run(args) -> int:
    values = merged_settings(args)
    spec = _experiment_spec(values)
    reports = run_experiment(spec)
    out = _out_dir(values)
    write_reports_jsonl(reports, out / "reports.jsonl")
    write_summary_csv(reports, out / "summary.csv")
    summary = efficacy_summary(reports)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    values = merged_settings(args)
    spec = _experiment_spec(values)
    tables, flags, reports = ablation_study(spec)
    out = _out_dir(values)
    write_reports_jsonl(reports, out / "ablation.jsonl")
    lines = ["table,setting,mean_target_accuracy"]
    for name, rows in tables.items():
        lines += [f"{name},{setting},{acc!r}" for setting, acc in rows]
    atomic_write_text(out / "ablation.csv", "\n".join(lines) + "\n")
    for name, rows in tables.items():
        print(f"[{name}]")
        for setting, acc in rows:
            print(f"  {setting!s:>14}  {acc:.4f}")
    for flag, ok in flags.items():
        print(f"{flag}: {'holds' if ok else 'does not hold'}")
    return 0


def report_table(reports) -> str:
    """Per-strategy mean/std final accuracy and paired wins of GALA over each other strategy."""
    fin = final_reports(reports)
    by = {}
    for r in fin:
        name = r.strategy if not r.variant else f"{r.strategy}[{r.variant}]"
        by.setdefault(name, {})[r.seed] = r.target_accuracy
    lines = [f"{'strategy':<28}{'runs':>5}  {'mean':>7} {'std':>7}  gala wins"]
    gala = by.get("gala", {})
    for name in sorted(by):
        vals = np.array([by[name][s] for s in sorted(by[name])])
        wins = ""
        if name != "gala" and gala:
            paired = sorted(set(gala) & set(by[name]))
            wins = f"{sum(gala[s] > by[name][s] for s in paired)}/{len(paired)}"
        lines.append(f"{name:<28}{len(vals):>5}  {vals.mean():7.4f} {vals.std():7.4f}  {wins}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    if not args.reports:
        raise ConfigError("no report files given")
    reports = []
    for path in args.reports:
        reports += read_reports_jsonl(path)
    if not final_reports(reports):
        raise SchemaError("reports contain no final records")
    print(report_table(reports))
    return 0


def _common(p, select=False):
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--budget", type=int, metavar="B")
    p.add_argument("--rounds", type=int, metavar="R")
    p.add_argument("--alpha", type=float, metavar="PCT")
    p.add_argument("--distance", choices=("standardized", "mean_only", "wasserstein"))
    p.add_argument("--aggregate", choices=("min", "avg"))
    p.add_argument("--global-embed", dest="global_embed", choices=("gradient", "feature"))
    p.add_argument("--local-embed", dest="local_embed", choices=("gradient", "feature"))
    p.add_argument("--strategy", metavar="LIST", help=f"comma-separated subset of {STRATEGIES}")
    p.add_argument("--seeds", metavar="LIST", help="comma-separated repetition seeds")
    p.add_argument("--features", metavar="PATH")
    p.add_argument("--answer-key", dest="answer_key", metavar="PATH")
    if select:
        p.add_argument("--model", metavar="PATH")
        p.add_argument("--probs", metavar="PATH")


def build_parser():
    parser = _ArgumentParser(prog="gala", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    for name, func, helptext in (
        ("gen", cmd_gen, "write a synthetic features CSV and answer key"),
        ("select", cmd_select, "run one selection round on a features file"),
        ("run", cmd_run, "run a full experiment and write JSONL + CSV reports"),
        ("ablate", cmd_ablate, "alpha sweep, distance and aggregation ablations"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p, select=(name == "select"))
        p.set_defaults(func=func)
    p = sub.add_parser("report", help="summarize JSONL reports")
    p.add_argument("reports", nargs="*", metavar="REPORT")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gala: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, SchemaError) as exc:
        print(f"gala: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GalaError as exc:
        print(f"gala: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
