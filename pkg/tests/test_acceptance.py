"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary and also when this file is run as a script.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_dataset, random_model
from gala import Dataset, LabeledPool, ModelState, SelectionConfig, embed_all, forward, kmeans
from gala.datagen import ScenarioConfig
from gala.embedding import EmbeddingBatch
from gala.harness import (
    ExperimentRunner, ExperimentSpec, ablation_study, acceptance_spec, efficacy_summary,
    final_reports, run_experiment, summary_csv, write_reports_jsonl,
)
from gala.selection import combine_scores, global_step, select_round
from gala.trainer import TrainConfig
from oracles import select_round_oracle

RESULTS = []
_CACHE = {}


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    return ok


# 1. gradient embedding vs central finite differences

def _ce(model, x, c):
    return -math.log(forward(model, x)[1][c])


def test_criterion_1_gradient_embedding_matches_finite_differences():
    rng = np.random.default_rng(101)
    h, worst = 1e-4, 0.0
    start = time.perf_counter()
    for trial in range(200):
        d, C = int(rng.integers(2, 9)), int(rng.integers(2, 6))
        hidden = int(rng.choice([0, 0, 3, 6]))
        model = random_model(rng, d, C, hidden=hidden, scale=0.7)
        x = rng.normal(size=d)
        b = embed_all(model, _one_row(x), [0])[0]
        W = np.array(model.last_weights)
        fd = np.zeros(W.shape[0])
        for i in range(W.shape[0]):
            Wp, Wm = W.copy(), W.copy()
            Wp[i, b.pseudo_label] += h
            Wm[i, b.pseudo_label] -= h
            fd[i] = (_ce(_replace_last(model, Wp), x, b.pseudo_label)
                     - _ce(_replace_last(model, Wm), x, b.pseudo_label)) / (2 * h)
        # the embedding is the negated gradient of CE w.r.t. the pseudo-label column
        rel = np.abs(b.grad_embed + fd) / np.maximum(np.maximum(np.abs(b.grad_embed),
                                                                np.abs(fd)), 1e-8)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 1.0
    assert record(1, "gradient embedding vs finite differences", ok,
                  f"200 pairs, max rel err {worst:.2e} < 1e-5, {elapsed:.2f}s < 1s")


def _one_row(x):
    return Dataset(x[None, :], [-1], [1], 2, 1)


def _replace_last(model, W):
    return ModelState(W, model.last_bias, model.hidden_weights, model.hidden_bias)


# 2. k-means soundness

def _all_move_gains(X, labels, B):
    """Objective drop of every single-point move, by full recomputation.

    Uses J = sum |x|^2 - sum_b |S_b|^2 / n_b over the relabeled partition.
    """
    total_sq = float(np.sum(X * X))

    def J(lab):
        S = np.zeros((B, X.shape[1]))
        np.add.at(S, lab, X)
        n = np.bincount(lab, minlength=B).astype(float)
        nz = n > 0
        return total_sq - float(np.sum(np.sum(S[nz] ** 2, axis=1) / n[nz]))

    base = J(labels)
    counts = np.bincount(labels, minlength=B)
    best = 0.0
    for i in range(X.shape[0]):
        if counts[labels[i]] == 1:
            continue
        for b in range(B):
            if b != labels[i]:
                trial = labels.copy()
                trial[i] = b
                best = max(best, base - J(trial))
    return best, base


def test_criterion_2_kmeans_soundness():
    rng = np.random.default_rng(202)
    instances = []
    for _ in range(100):
        n = int(rng.integers(8, 201))
        B = int(rng.integers(1, 9))
        d = int(rng.integers(1, 6))
        centers = rng.normal(0, 3, size=(int(rng.integers(1, 6)), d))
        X = centers[rng.integers(len(centers), size=n)] + rng.normal(size=(n, d))
        instances.append((X, B, int(rng.integers(2**31))))
    start = time.perf_counter()
    fits = [kmeans(X, B, seed=s) for X, B, s in instances]
    elapsed = time.perf_counter() - start
    monotone = all(all(b <= a for a, b in zip(cm.objective_history, cm.objective_history[1:]))
                   for cm in fits)
    worst = 0.0
    for (X, B, _), cm in zip(instances, fits):
        gain, base = _all_move_gains(X, np.array(cm.assignments), B)
        worst = max(worst, gain / max(base, 1e-300))
    ok = monotone and worst <= 1e-9 and elapsed < 5.0
    assert record(2, "k-means soundness", ok,
                  f"100 instances, monotone={monotone}, best move gain / J = {worst:.1e}, "
                  f"fit time {elapsed:.2f}s < 5s")


# 3. end-to-end oracle equivalence

def test_criterion_3_select_round_matches_brute_force():
    rng = np.random.default_rng(303)
    mismatches = 0
    elapsed = 0.0
    for trial in range(50):
        K = int(rng.integers(1, 4))
        B = int(rng.integers(1, 6))
        n_t = int(rng.integers(B, 51))
        C, d = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        ds = random_dataset(rng, n_t, int(rng.integers(3, 15)), K, C, d)
        model = random_model(rng, d, C, hidden=int(rng.choice([0, 4])), scale=0.8)
        cfg = SelectionConfig(
            budget_per_round=B, alpha_percent=float(rng.choice([20, 37.5, 60, 100])),
            distance_mode=str(rng.choice(["standardized", "mean_only", "wasserstein"])),
            aggregation_mode=str(rng.choice(["minimum", "average"])),
            global_embedding=str(rng.choice(["gradient", "feature"])),
            local_embedding=str(rng.choice(["gradient", "feature"])),
            rng_seed=trial)
        pool = LabeledPool.from_dataset(ds)
        start = time.perf_counter()
        res = select_round(pool, model, ds, cfg, round=trial % 5)
        elapsed += time.perf_counter() - start
        # the partition is validated by criterion 2; the oracle recomputes everything else
        labels = dict(zip(pool.remaining_ids, res.clusters.assignments.tolist()))
        if list(res.selected_ids) != select_round_oracle(model, ds, pool.remaining_ids, cfg,
                                                         labels):
            mismatches += 1
    ok = mismatches == 0 and elapsed < 10.0
    assert record(3, "select_round equals brute-force oracle", ok,
                  f"{50 - mismatches}/50 identical, {elapsed:.2f}s < 10s")


# 4. invariances

def test_criterion_4_invariance_suite():
    rng = np.random.default_rng(404)
    start = time.perf_counter()
    fails = {"distance scale": 0, "uncertainty scale": 0, "alpha nesting": 0}
    for _ in range(100):
        n, B = int(rng.integers(5, 60)), int(rng.integers(1, 6))
        ids = rng.permutation(1000)[:n]
        cuts = np.sort(rng.choice(np.arange(1, n), size=min(B, n) - 1, replace=False))
        cands = np.split(ids, cuts)
        unc = {int(i): float(v) for i, v in zip(ids, rng.exponential(size=n))}
        dist = {int(i): float(v) for i, v in zip(ids, rng.exponential(size=n))}
        lam = float(10 ** rng.uniform(-3, 3))
        base = combine_scores(cands, unc, dist).selected_ids
        if combine_scores(cands, unc, {k: lam * v for k, v in dist.items()}).selected_ids != base:
            fails["distance scale"] += 1
        if combine_scores(cands, {k: lam * v for k, v in unc.items()}, dist).selected_ids != base:
            fails["uncertainty scale"] += 1
    for _ in range(100):
        n, B = int(rng.integers(5, 60)), int(rng.integers(1, 5))
        batch = EmbeddingBatch(rng.normal(size=(n, 3)), rng.dirichlet(np.ones(3), size=n),
                               rng.permutation(n))
        a1, a2 = np.sort(rng.uniform(0.5, 100, size=2))
        _, c1 = global_step(batch, SelectionConfig(budget_per_round=B, alpha_percent=a1))
        _, c2 = global_step(batch, SelectionConfig(budget_per_round=B, alpha_percent=a2))
        if not all(set(x.tolist()) <= set(y.tolist()) for x, y in zip(c1, c2)):
            fails["alpha nesting"] += 1
    elapsed = time.perf_counter() - start
    ok = not any(fails.values()) and elapsed < 5.0
    assert record(4, "invariance suite", ok,
                  ", ".join(f"{k}: {100 - v}/100" for k, v in fails.items())
                  + f", {elapsed:.2f}s < 5s")


# 5. budget and pool accounting

def test_criterion_5_budget_and_pool_accounting():
    spec = ExperimentSpec(
        scenario=ScenarioConfig(n_source_domains=3, samples_per_domain=2000),
        selection=SelectionConfig(budget_per_round=10, rounds=5),
        training=TrainConfig(), strategies=("gala",), seeds=(0,), diagnostics=False)
    runner = ExperimentRunner(spec)
    reports = runner.run_cell("gala", 0)
    ds, _ = runner.data(0)
    target = set(ds.target_ids.tolist())
    rounds = [r for r in reports if r.kind == "round"]
    seen, ok = [], True
    for r in rounds:
        ok &= len(r.selected_ids) == 10 and not set(seen) & set(r.selected_ids)
        seen += list(r.selected_ids)
        ok &= r.budget_fraction == len(seen) / 2000
    final = reports[-1]
    pool = LabeledPool(final.selected_ids, tuple(sorted(target - set(final.selected_ids))))
    ok &= len(final.selected_ids) == 50 == 5 * 10 and set(final.selected_ids) == set(seen)
    ok &= set(final.selected_ids) <= target and pool.covers(ds)
    ok &= len(pool.remaining_ids) == 1950
    assert record(5, "budget and pool accounting", bool(ok),
                  f"|D_st| = {len(final.selected_ids)} = R x B = 50, "
                  f"remaining {len(pool.remaining_ids)}, partition of {len(target)} targets")


# 6. desk-scale efficacy

def _efficacy_reports():
    if "efficacy" not in _CACHE:
        start = time.perf_counter()
        reports = run_experiment(acceptance_spec(range(20)), n_jobs=1)
        _CACHE["efficacy"] = (reports, time.perf_counter() - start)
    return _CACHE["efficacy"]


def test_criterion_6_desk_scale_efficacy():
    reports, elapsed = _efficacy_reports()
    s = efficacy_summary(reports)
    pad = {k: np.mean([r.proxy_a_distance for r in final_reports(reports) if r.strategy == k])
           for k in ("gala", "none")}
    ok_a = s["mean_gala"] >= s["mean_random"] and s["wins"] >= 13
    ok_b = s["gap_recovered"] >= 0.5
    ok = ok_a and ok_b and elapsed < 300
    assert record(6, "desk-scale efficacy", ok,
                  f"gala {s['mean_gala']:.4f} vs random {s['mean_random']:.4f}, "
                  f"wins {s['wins']}/20 (>= 13), gap recovered {s['gap_recovered']:.3f} "
                  f"(>= 0.5; none {s['mean_none']:.4f}, full {s['mean_full']:.4f}), "
                  f"{elapsed:.0f}s < 300s; proxy A-distance gala {pad['gala']:.3f} "
                  f"vs none {pad['none']:.3f} (diagnostic)")


# 7. ablation diagnostics (reported, not gating on the orderings)

def test_criterion_7_ablation_tables():
    spec = acceptance_spec(range(20), strategies=("gala",), diagnostics=False)
    tables, flags, _ = ablation_study(spec)
    complete = (len(tables["alpha"]) == 5 and len(tables["distance"]) == 3
                and len(tables["aggregation"]) == 2
                and all(np.isfinite(v) for rows in tables.values() for _, v in rows))
    rows = "; ".join(f"{name}: " + ", ".join(f"{k}={v:.4f}" for k, v in t)
                     for name, t in tables.items())
    flag_text = ", ".join(f"{k}={'holds' if v else 'does not hold'}" for k, v in flags.items())
    assert record(7, "ablation tables complete", complete, f"{rows}; {flag_text}")


# 8. determinism

def test_criterion_8_byte_identical_reports(tmp_path):
    first, _ = _efficacy_reports()
    second = run_experiment(acceptance_spec(range(20)), n_jobs=1)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_reports_jsonl(first, a)
    write_reports_jsonl(second, b)
    same = a.read_bytes() == b.read_bytes() and summary_csv(first) == summary_csv(second)
    assert record(8, "byte-identical reports", same,
                  f"{len(first)} report lines, {len(a.read_bytes())} bytes")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
