"""Evaluation of importance rankings and runtime accounting."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import kendalltau

from .data import SplitPair
from .game import Game
from .graph import FeatureGraph
from .io import rows_to_csv
from .models import Evaluator, metric_for, score
from .shapley import (
    DEFAULT_EXACT_CAP,
    ImportanceVector,
    approx_shapley,
    exact_shapley,
    neighborhood_exact,
)

METHODS = ("exact", "neighborhood-exact", "approx", "permutation-importance")


@dataclass
class PerturbationCurve:
    points: list[tuple[int, float]]
    method_tag: str = ""

    @property
    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.points])

    def area(self) -> float:
        """Trapezoidal area under score-vs-removed-count."""
        k = np.array([p[0] for p in self.points], dtype=float)
        s = self.scores
        if len(k) < 2:
            return 0.0
        return float(np.sum((k[1:] - k[:-1]) * (s[1:] + s[:-1]) / 2.0))

    def to_csv(self) -> str:
        return rows_to_csv(["k", "score"], self.points)


def _score_columns(ev: Evaluator, sp: SplitPair, cols: Sequence[int]) -> float:
    task = sp.train.task_kind
    cols = sorted(cols)
    labels = sorted(set(sp.train.classes) | set(sp.test.classes)) or None
    return ev.evaluate(
        sp.train.features[:, cols],
        sp.train.target,
        sp.test.features[:, cols],
        sp.test.target,
        task,
        feature_indices=cols,
        labels=labels,
    )


def perturbation_curve(
    ranking: Sequence[int],
    ev: Evaluator,
    sp: SplitPair,
    k_max: int,
    method_tag: str = "",
    jobs: int = 1,
) -> PerturbationCurve:
    """Retrain without the top-``k`` ranked features for ``k = 0..k_max``."""
    M = sp.train.n_features
    if sorted(ranking) != list(range(M)):
        raise ValueError(f"ranking must be a permutation of 0..{M - 1}")
    if not 0 <= k_max < M:
        raise ValueError(f"k_max must lie in [0, {M - 1}], got {k_max}")
    ev.check_task(sp.train.task_kind)

    def point(k):
        removed = set(ranking[:k])
        return _score_columns(ev, sp, [j for j in range(M) if j not in removed])

    ks = list(range(k_max + 1))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(point, ks))
    else:
        scores = [point(k) for k in ks]
    return PerturbationCurve([(k, float(s)) for k, s in zip(ks, scores)], method_tag)


def permutation_importance(
    ev: Evaluator,
    sp: SplitPair,
    repeats: int = 10,
    seed: int = 0,
) -> ImportanceVector:
    """Mean test-score drop when one feature's test column is shuffled.

    Built-in evaluators are fitted once. External evaluators are re-queried
    per shuffle, which is equivalent for deterministic training.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    task = sp.train.task_kind
    ev.check_task(task)
    t0 = time.perf_counter()
    M = sp.train.n_features
    trX, trY = sp.train.features, sp.train.target
    teX, teY = sp.test.features, sp.test.target
    labels = sorted(set(sp.train.classes) | set(sp.test.classes)) or None
    metric = metric_for(task)
    calls = 0

    if ev.kind == "external":
        def scorer(X):
            return ev.evaluate(trX, trY, X, teY, task, labels=labels)
    else:
        predict = ev.fit(trX, trY, task)

        def scorer(X):
            return score(predict(X), teY, metric, labels).value

    base = scorer(teX)
    calls += 1
    drops = np.zeros(M)
    for j in range(M):
        rng = np.random.default_rng([seed, j])
        total = 0.0
        for _ in range(repeats):
            X = np.array(teX, copy=True)
            X[:, j] = X[rng.permutation(X.shape[0]), j]
            total += base - scorer(X)
            calls += 1
        drops[j] = total / repeats
    return ImportanceVector(
        drops, "permutation-importance", time.perf_counter() - t0, calls, sp.train.feature_names
    )


def kendall_tau_brute(a: Sequence[int], b: Sequence[int]) -> float:
    pos_a = {f: r for r, f in enumerate(a)}
    pos_b = {f: r for r, f in enumerate(b)}
    items = list(pos_a)
    n = len(items)
    if n < 2:
        return 1.0
    conc = disc = 0
    for x in range(n):
        for y in range(x + 1, n):
            p, q = items[x], items[y]
            sign = (pos_a[p] - pos_a[q]) * (pos_b[p] - pos_b[q])
            if sign > 0:
                conc += 1
            elif sign < 0:
                disc += 1
    return (conc - disc) / (n * (n - 1) / 2)


def compare_rankings(a: Sequence[int], b: Sequence[int], top_k: int = 5) -> dict:
    """Top-``k`` overlap fraction and Kendall tau between two rankings."""
    a, b = list(a), list(b)
    if sorted(a) != sorted(b) or len(set(a)) != len(a):
        raise ValueError("rankings must order the same set of features")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    k = min(top_k, len(a))
    overlap = len(set(a[:k]) & set(b[:k])) / k
    if len(a) < 2:
        tau = 1.0
    else:
        pos_b = {f: r for r, f in enumerate(b)}
        tau = float(kendalltau(range(len(a)), [pos_b[f] for f in a]).statistic)
    return {"top_k": k, "overlap": overlap, "kendall_tau": tau}


@dataclass
class RunReport:
    method_tag: str
    elapsed: float
    evaluations: int
    importance: ImportanceVector | None = None
    status: str = "ok"
    message: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self, names=None, include_timing: bool = True) -> dict:
        out = {"method": self.method_tag, "status": self.status}
        if self.message:
            out["message"] = self.message
        out["evaluations"] = self.evaluations
        if include_timing:
            out["elapsed_ms"] = round(self.elapsed * 1000.0, 3)
        if self.importance is not None:
            out["importance"] = self.importance.to_dict(names, include_timing)
        return out


def timed_run(
    method: str,
    *,
    game: Game | None = None,
    graph: FeatureGraph | None = None,
    evaluator: Evaluator | None = None,
    split: SplitPair | None = None,
    d_max: int = 1,
    m: int = 12,
    seed: int = 0,
    repeats: int = 10,
    exact_cap: int = DEFAULT_EXACT_CAP,
    normalization: str = "scaled",
    jobs: int = 1,
) -> RunReport:
    """Run one importance method and record elapsed time and evaluation count.

    For the Shapley-type methods the count is the game's cache misses during
    the run; for permutation importance it is the number of scoring calls.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    t0 = time.perf_counter()
    if method == "permutation-importance":
        if evaluator is None or split is None:
            raise ValueError("permutation-importance needs an evaluator and a split")
        iv = permutation_importance(evaluator, split, repeats, seed)
        return RunReport(method, time.perf_counter() - t0, iv.evaluations, iv)

    if game is None:
        raise ValueError(f"{method} needs a game")
    before = game.evaluations
    if method == "exact":
        iv = exact_shapley(game, cap=exact_cap, jobs=jobs)
    else:
        if graph is None:
            raise ValueError(f"{method} needs a feature graph")
        if method == "neighborhood-exact":
            iv = neighborhood_exact(game, graph, d_max, jobs=jobs)
        else:
            iv = approx_shapley(game, graph, d_max, m, seed, normalization, jobs)
    return RunReport(method, time.perf_counter() - t0, game.evaluations - before, iv)
