"""End-to-end active domain adaptation experiments.

A cell is one (strategy, seed) pair: train on the sources up to the first
active epoch, then alternate selection, annotation from the answer key and
further training at each active epoch, and finish the remaining epochs.
All strategies of a seed share the data, the initial model and the training
seed, so differences come from the selection rule alone.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .datagen import ScenarioConfig, generate
from .embedding import features_of, forward
from .exceptions import ConfigError, SchemaError, ValidationError
from .io import atomic_write_text, read_answer_key, read_features_csv
from .selection import BASELINES, baseline_select, select_round
from .trainer import TrainConfig, evaluate, train_epochs
from .types import Dataset, LabeledPool, ModelState, SelectionConfig, validate_dataset

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1
STRATEGIES = ("gala",) + BASELINES + ("none", "full")


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from integer parts."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run.

    ``scenario`` is either a :class:`ScenarioConfig` (data regenerated per
    seed) or the path of a features CSV, in which case ``answer_key`` must
    name the CSV holding the target labels.
    """

    scenario: Union[ScenarioConfig, str]
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    strategies: tuple = ("gala", "random")
    seeds: tuple = (0,)
    answer_key: Optional[str] = None
    n_classes: Optional[int] = None
    diagnostics: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; choose from {STRATEGIES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.selection.rounds != self.training.rounds:
            raise ConfigError(
                f"selection.rounds = {self.selection.rounds} but training has "
                f"{self.training.rounds} active epochs")
        if isinstance(self.scenario, str) and self.answer_key is None:
            raise ConfigError("an answer key file is required with external features")


@dataclass(frozen=True)
class RoundReport:
    strategy: str
    seed: int
    round: int
    kind: str
    selected_ids: tuple
    domain_accuracy: tuple
    target_accuracy: float
    budget_fraction: float
    variant: str = ""
    proxy_a_distance: Optional[float] = None
    joint_accuracy: Optional[float] = None

    def to_json(self) -> str:
        doc = asdict(self)
        doc["selected_ids"] = list(self.selected_ids)
        doc["domain_accuracy"] = list(self.domain_accuracy)
        doc["schema"] = REPORT_SCHEMA
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RoundReport":
        try:
            doc = json.loads(line)
            if doc.pop("schema", None) != REPORT_SCHEMA:
                raise SchemaError("unsupported report schema")
            doc["selected_ids"] = tuple(doc["selected_ids"])
            doc["domain_accuracy"] = tuple(doc["domain_accuracy"])
            return cls(**doc)
        except (ValueError, TypeError, KeyError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed report line: {exc}") from None


def proxy_domain_discrepancy(ds: Dataset, model: Optional[ModelState], seed=0) -> float:
    """Proxy A-distance between the source union and the target, in ``[0, 2]``.

    A logistic-regression probe is trained on the model's penultimate
    features of a balanced source/target sample (half for training, half
    held out); the result is ``2 (1 - 2 err)`` of the held-out error.
    """
    src = np.flatnonzero(ds.source_mask)
    tgt = np.flatnonzero(ds.target_mask)
    if src.size == 0 or tgt.size == 0:
        raise ValidationError("need both source and target rows", "EMPTY_DOMAIN")
    rng = np.random.default_rng(seed)
    n = min(src.size, tgt.size)
    src = rng.choice(src, n, replace=False)
    tgt = rng.choice(tgt, n, replace=False)
    rows = np.concatenate([src, tgt])
    y = np.concatenate([np.zeros(n), np.ones(n)])
    Z = ds.features[rows] if model is None else features_of(model, ds.features[rows])
    perm = rng.permutation(rows.size)
    half = rows.size // 2
    train, test = perm[:half], perm[half:]
    if np.unique(y[train]).size < 2:
        return 0.0
    probe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=1000))
    probe.fit(Z[train], y[train])
    err = float(np.mean(probe.predict(Z[test]) != y[test]))
    return float(np.clip(2.0 * (1.0 - 2.0 * err), 0.0, 2.0))


class ExperimentRunner:
    """Runs cells of one spec, caching data and the shared warm-up model per seed."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self._data = {}
        self._warm = {}
        self._external = None

    def data(self, seed):
        if seed not in self._data:
            sc = self.spec.scenario
            if isinstance(sc, ScenarioConfig):
                ds, key = generate(replace(sc, rng_seed=derive_seed(sc.rng_seed, seed)))
            else:
                if self._external is None:
                    ds = read_features_csv(sc, n_classes=self.spec.n_classes)
                    key = read_answer_key(self.spec.answer_key)
                    missing = set(ds.target_ids.tolist()) - set(key)
                    if missing:
                        raise SchemaError(f"answer key lacks {len(missing)} target ids")
                    self._external = (ds, key)
                ds, key = self._external
            validate_dataset(ds)
            self.spec.selection.check_budget(int(ds.target_mask.sum()))
            self._data[seed] = (ds, key)
        return self._data[seed]

    def training_config(self, seed) -> TrainConfig:
        return replace(self.spec.training, rng_seed=derive_seed(self.spec.training.rng_seed, seed, 1))

    def initial_model(self, seed) -> ModelState:
        ds, _ = self.data(seed)
        tc = self.spec.training
        return ModelState.initialize(ds.n_features, ds.n_classes, tc.hidden_dim,
                                     seed=derive_seed(tc.rng_seed, seed, 2))

    def warm_model(self, seed) -> ModelState:
        """Source-only model at the first active epoch (shared by all selection strategies)."""
        if seed not in self._warm:
            ds, _ = self.data(seed)
            tc = self.training_config(seed)
            first = tc.active_epochs[0] if tc.active_epochs else tc.epochs
            self._warm[seed] = train_epochs(self.initial_model(seed), ds,
                                            LabeledPool.from_dataset(ds), tc, 0, first)
        return self._warm[seed]

    def _accuracies(self, model, ds, key):
        accs = tuple(evaluate(model, ds, k, key) for k in range(ds.n_source_domains + 1))
        return accs, accs[-1]

    def _final(self, strategy, seed, variant, model, ds, key, pool, rnd):
        accs, tacc = self._accuracies(model, ds, key)
        n_t = int(ds.target_mask.sum())
        pad = joint = None
        if self.spec.diagnostics:
            pad = proxy_domain_discrepancy(ds, model, derive_seed(seed, 3))
            train_rows = np.concatenate([np.flatnonzero(ds.source_mask),
                                         ds.rows(pool.selected_ids) if pool.selected_ids
                                         else np.zeros(0, np.int64)])
            if train_rows.size:
                _, P = forward(model, ds.features[train_rows])
                joint = float(np.mean(np.argmax(P, axis=1) == ds.labels[train_rows]))
        return RoundReport(strategy, seed, rnd, "final", tuple(pool.selected_ids), accs, tacc,
                           len(pool.selected_ids) / n_t, variant, pad, joint)

    def run_cell(self, strategy, seed, selection: Optional[SelectionConfig] = None,
                 variant="") -> list:
        sel = self.spec.selection if selection is None else selection
        ds, key = self.data(seed)
        tc = self.training_config(seed)
        bounds = list(tc.active_epochs) + [tc.epochs]
        n_t = int(ds.target_mask.sum())
        pool = LabeledPool.from_dataset(ds)

        if strategy in ("none", "full"):
            if strategy == "full":
                ids = list(pool.remaining_ids)
                ds = ds.with_labels(ids, [key[i] for i in ids])
                pool = pool.add(ids)
                model = train_epochs(self.initial_model(seed), ds, pool, tc, 0, bounds[0])
            else:
                model = self.warm_model(seed)
            for a, b in zip(bounds, bounds[1:]):
                model = train_epochs(model, ds, pool, tc, a, b)
            return [self._final(strategy, seed, variant, model, ds, key, pool, 0)]

        model = self.warm_model(seed)
        sel = replace(sel, rng_seed=derive_seed(sel.rng_seed, seed))
        reports = []
        for r in range(1, len(bounds)):
            if strategy == "gala":
                ids = list(select_round(pool, model, ds, sel, r).selected_ids)
            else:
                ids = baseline_select(strategy, pool, model, ds, sel.budget_per_round,
                                      seed=derive_seed(sel.rng_seed, r))
            ds = ds.with_labels(ids, [key[i] for i in ids])
            pool = pool.add(ids)
            model = train_epochs(model, ds, pool, tc, bounds[r - 1], bounds[r])
            accs, tacc = self._accuracies(model, ds, key)
            reports.append(RoundReport(strategy, seed, r, "round", tuple(ids), accs, tacc,
                                       len(pool.selected_ids) / n_t, variant))
        reports.append(self._final(strategy, seed, variant, model, ds, key, pool, len(bounds) - 1))
        return reports


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GALA_THREADS", "1")))
    except ValueError:
        return 1


def _run_cells(spec, cells):
    runner = ExperimentRunner(spec)
    return [runner.run_cell(*cell) for cell in cells]


def run_cells(spec: ExperimentSpec, cells: Sequence[tuple], n_jobs=None) -> list:
    """Run ``(strategy, seed, selection, variant)`` cells; results in input order.

    Cells of one seed stay in one worker so the warm-up model is computed once.
    """
    n_jobs = _threads() if n_jobs is None else max(1, n_jobs)
    if n_jobs == 1 or len(cells) <= 1:
        return _run_cells(spec, cells)
    groups = {}
    for pos, cell in enumerate(cells):
        groups.setdefault(cell[1], []).append(pos)
    out = [None] * len(cells)
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = {seed: pool.submit(_run_cells, spec, [cells[p] for p in positions])
                   for seed, positions in groups.items()}
        for seed, positions in groups.items():
            for p, res in zip(positions, futures[seed].result()):
                out[p] = res
    return out


def run_experiment(spec: ExperimentSpec, n_jobs=None) -> list:
    """All reports of the spec, ordered by strategy then seed then round."""
    cells = [(s, seed, None, "") for s in spec.strategies for seed in spec.seeds]
    return [r for cell in run_cells(spec, cells, n_jobs) for r in cell]


def final_reports(reports):
    return [r for r in reports if r.kind == "final"]


def mean_final_accuracy(reports, strategy=None, variant=None) -> float:
    vals = [r.target_accuracy for r in final_reports(reports)
            if (strategy is None or r.strategy == strategy)
            and (variant is None or r.variant == variant)]
    return float(np.mean(vals)) if vals else float("nan")


def alpha_sweep(spec: ExperimentSpec, alphas: Sequence[float], n_jobs=None):
    """``[(alpha, mean final target accuracy)]`` for GALA runs, sorted by alpha."""
    alphas = sorted(float(a) for a in alphas)
    for a in alphas:
        if not 0 < a <= 100:
            raise ConfigError(f"alpha {a} outside (0, 100]")
    cells = [("gala", seed, replace(spec.selection, alpha_percent=a), f"alpha={a:g}")
             for a in alphas for seed in spec.seeds]
    reports = [r for cell in run_cells(spec, cells, n_jobs) for r in cell]
    return [(a, mean_final_accuracy(reports, variant=f"alpha={a:g}")) for a in alphas], reports


def ablation_study(spec: ExperimentSpec, alphas=(20, 40, 60, 80, 100), n_jobs=None):
    """Alpha sweep, distance modes and aggregation modes in one pass.

    Returns ``(tables, flags, reports)``. ``flags`` says whether the expected
    orderings hold: alpha 60 best, standardized >= mean-only, minimum >= average.
    """
    base = spec.selection
    variants = [(f"alpha={float(a):g}", replace(base, alpha_percent=float(a))) for a in alphas]
    variants += [(f"distance={m}", replace(base, distance_mode=m))
                 for m in ("standardized", "mean_only", "wasserstein")]
    variants += [(f"aggregation={m}", replace(base, aggregation_mode=m))
                 for m in ("minimum", "average")]
    cells = [("gala", seed, cfg, name) for name, cfg in variants for seed in spec.seeds]
    reports = [r for cell in run_cells(spec, cells, n_jobs) for r in cell]
    acc = {name: mean_final_accuracy(reports, variant=name) for name, _ in variants}
    tables = {
        "alpha": [(float(a), acc[f"alpha={float(a):g}"]) for a in sorted(alphas)],
        "distance": [(m, acc[f"distance={m}"]) for m in ("standardized", "mean_only", "wasserstein")],
        "aggregation": [(m, acc[f"aggregation={m}"]) for m in ("minimum", "average")],
    }
    flags = {}
    if 60 in [float(a) for a in alphas]:
        best = max(v for _, v in tables["alpha"])
        flags["alpha_60_best"] = acc["alpha=60"] >= best
    flags["standardized_ge_mean_only"] = acc["distance=standardized"] >= acc["distance=mean_only"]
    flags["minimum_ge_average"] = acc["aggregation=minimum"] >= acc["aggregation=average"]
    return tables, flags, reports


def efficacy_summary(reports, strategy="gala", baseline="random"):
    """Mean accuracies, paired wins against ``baseline`` and the share of the
    none-to-full gap recovered (averaged over seeds)."""
    fin = {(r.strategy, r.seed): r.target_accuracy for r in final_reports(reports)}
    seeds = sorted({s for (_, s) in fin})
    out = {"seeds": len(seeds)}
    for name in (strategy, baseline, "none", "full"):
        vals = [fin[(name, s)] for s in seeds if (name, s) in fin]
        if vals:
            out[f"mean_{name}"] = float(np.mean(vals))
    paired = [s for s in seeds if (strategy, s) in fin and (baseline, s) in fin]
    out["wins"] = sum(fin[(strategy, s)] > fin[(baseline, s)] for s in paired)
    out["paired"] = len(paired)
    gaps = [(fin[(strategy, s)] - fin[("none", s)]) / (fin[("full", s)] - fin[("none", s)])
            for s in seeds
            if all((k, s) in fin for k in (strategy, "none", "full"))
            and fin[("full", s)] != fin[("none", s)]]
    if gaps:
        out["gap_recovered"] = float(np.mean(gaps))
    return out


def write_reports_jsonl(reports, path) -> None:
    atomic_write_text(path, "".join(r.to_json() + "\n" for r in reports))


def read_reports_jsonl(path) -> list:
    with open(path) as fh:
        return [RoundReport.from_json(line) for line in fh if line.strip()]


def summary_csv(reports) -> str:
    lines = ["strategy,seed,round,budget_fraction,target_accuracy"]
    for r in reports:
        rnd = "final" if r.kind == "final" else str(r.round)
        strategy = r.strategy if not r.variant else f"{r.strategy}[{r.variant}]"
        lines.append(f"{strategy},{r.seed},{rnd},{r.budget_fraction!r},{r.target_accuracy!r}")
    return "\n".join(lines) + "\n"


def write_summary_csv(reports, path) -> None:
    atomic_write_text(path, summary_csv(reports))


def acceptance_spec(seeds=range(20), **overrides) -> ExperimentSpec:
    """Desk-scale comparison setting: 3 sources, 5 classes, 16-d, 2000 samples per
    domain, moderate shift, 1% target budget over 5 rounds."""
    scenario = ScenarioConfig(n_source_domains=3, samples_per_domain=2000, n_classes=5,
                              feature_dim=16)
    kw = dict(scenario=scenario, selection=SelectionConfig(budget_per_round=4, rounds=5),
              training=TrainConfig(), strategies=("gala", "random", "none", "full"),
              seeds=tuple(seeds))
    kw.update(overrides)
    return ExperimentSpec(**kw)
