"""Command-line entry point: ``shapg {graph,explain,evaluate,compare}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Sequence

from .data import CLASSIFICATION, REGRESSION, DataError, load_table, pearson_matrix, split
from .game import graph_game, model_game
from .graph import GraphError, build_feature_graph, export_dot, is_connected
from .harness import METHODS, compare_rankings, perturbation_curve, timed_run
from .io import atomic_write, dumps_json, rows_to_csv
from .models import Evaluator, EvaluatorError
from .shapley import NORMALIZATIONS, CapExceededError, ImportanceVector, neighborhood

log = logging.getLogger("shapg")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
EVALUATOR_CHOICES = ("ols", "knn", "knn_regress", "knn_classify", "external")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    target: str | None = None
    task: str = REGRESSION
    evaluator: str | None = None
    k: int = 5
    lam: float = 1e-8
    external_cmd: str | None = None
    timeout: float | None = None
    dmax: int = 1
    m: int = 12
    seed: int = 0
    split: float = 0.8
    method: str = "approx"
    kmax: int | None = None
    jobs: int = 0
    out: str = "shapg_out"
    game: str = "model"
    normalization: str = "scaled"
    repeats: int = 10
    top_k: int = 5
    exact_cap: int = 20
    score_on: str = "test"
    corr_on: str = "full"
    impute_mean: bool = False
    ranking: str | None = None

    def validate(self):
        if not self.input:
            raise UsageError("--input is required")
        if not self.target:
            raise UsageError("--target is required")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise UsageError(f"--task must be regression or classification, not {self.task!r}")
        if self.method not in METHODS:
            raise UsageError(f"--method must be one of {', '.join(METHODS)}")
        if self.evaluator is not None and self.evaluator not in EVALUATOR_CHOICES:
            raise UsageError(f"--evaluator must be one of {', '.join(EVALUATOR_CHOICES)}")
        if self.k < 1 or self.lam < 0 or self.dmax < 1 or self.m < 1 or self.repeats < 1:
            raise UsageError("k, dmax, m and repeats must be >= 1 and lambda >= 0")
        if not 0 < self.split < 1:
            raise UsageError("--split must lie in (0, 1)")
        if self.seed < 0:
            raise UsageError("--seed must be non-negative")
        if self.game not in ("model", "graph"):
            raise UsageError("--game must be model or graph")
        if self.normalization not in NORMALIZATIONS:
            raise UsageError(f"--normalization must be one of {NORMALIZATIONS}")
        if self.score_on not in ("test", "train") or self.corr_on not in ("full", "train"):
            raise UsageError("--score-on must be test|train and --corr-on full|train")

    def resolved(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("jobs")
        return d


def _evaluator(cfg: RunConfig) -> Evaluator:
    kind = cfg.evaluator
    if kind is None:
        kind = "ols" if cfg.task == REGRESSION else "knn_classify"
    elif kind == "knn":
        kind = "knn_regress" if cfg.task == REGRESSION else "knn_classify"
    if kind == "external" and not cfg.external_cmd:
        raise UsageError("--evaluator external requires --external-cmd")
    ev = Evaluator(
        kind, cfg.k, cfg.lam, cfg.external_cmd, cfg.seed, cfg.timeout, max(cfg.jobs, 1)
    )
    try:
        ev.check_task(cfg.task)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return ev


class _Problem:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.data = load_table(cfg.input, cfg.target, cfg.task, cfg.impute_mean)
        self.split = split(self.data, cfg.split, cfg.seed)
        self.corr = pearson_matrix(self.split.train if cfg.corr_on == "train" else self.data)
        self.graph = build_feature_graph(self.corr)
        self._ev = None

    @property
    def names(self):
        return self.data.feature_names

    @property
    def evaluator(self) -> Evaluator:
        if self._ev is None:
            self._ev = _evaluator(self.cfg)
        return self._ev

    def new_game(self):
        if self.cfg.game == "graph":
            return graph_game(self.corr, self.graph)
        return model_game(self.evaluator, self.split, self.cfg.score_on)

    def run(self, method: str):
        c = self.cfg
        return timed_run(
            method,
            game=None if method == "permutation-importance" else self.new_game(),
            graph=self.graph,
            evaluator=self.evaluator if method == "permutation-importance" else None,
            split=self.split,
            d_max=c.dmax,
            m=c.m,
            seed=c.seed,
            repeats=c.repeats,
            exact_cap=c.exact_cap,
            normalization=c.normalization,
            jobs=c.jobs,
        )

    def close(self):
        if self._ev is not None:
            self._ev.close()


def _ranking_csv(iv: ImportanceVector, names) -> str:
    rows = [(r + 1, j, names[j], v) for r, (j, v) in enumerate(zip(iv.ranking, iv.values[iv.ranking]))]
    return rows_to_csv(["rank", "index", "name", "value"], [(a, b, c, float(d)) for a, b, c, d in rows])


def cmd_graph(cfg: RunConfig) -> list[str]:
    p = _Problem(cfg)
    if p.data.n_features == 1:
        log.warning("single feature: the graph has no edges")
    paths = [os.path.join(cfg.out, f) for f in ("correlation.csv", "adjacency.csv", "graph.dot")]
    atomic_write(paths[0], p.corr.to_csv())
    atomic_write(paths[1], p.graph.to_csv(p.names))
    atomic_write(paths[2], export_dot(p.graph, p.names))
    log.info(
        "%d features, %d edges, connected=%s",
        p.data.n_features, len(p.graph.edges()), is_connected(p.graph),
    )
    return paths


def cmd_explain(cfg: RunConfig) -> list[str]:
    p = _Problem(cfg)
    try:
        report = p.run(cfg.method)
    finally:
        p.close()
    iv = report.importance
    doc = iv.to_dict(p.names)
    doc["config"] = cfg.resolved()
    paths = [os.path.join(cfg.out, "importance.json"), os.path.join(cfg.out, "ranking.csv")]
    atomic_write(paths[0], dumps_json(doc))
    atomic_write(paths[1], _ranking_csv(iv, p.names))
    print(f"{'rank':>4}  {'feature':<24} {'value':>14}")
    for r, j in enumerate(iv.ranking[:10]):
        print(f"{r + 1:>4}  {p.names[j]:<24} {iv.values[j]:>14.6g}")
    return paths


def read_ranking(path: str, names: Sequence[str]) -> list[int]:
    """Feature indices in rank order from an importance JSON or ranking CSV."""
    if not os.path.isfile(path):
        raise UsageError(f"ranking file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        ordered = [f["name"] for f in json.loads(text)["features"]]
    else:
        rows = list(csv.DictReader(text.splitlines()))
        rows.sort(key=lambda r: int(r["rank"]))
        ordered = [r["name"] for r in rows]
    if sorted(ordered) != sorted(names) or len(set(ordered)) != len(ordered):
        raise UsageError("ranking file features do not match the dataset's features")
    index = {n: k for k, n in enumerate(names)}
    return [index[n] for n in ordered]


def cmd_evaluate(cfg: RunConfig) -> list[str]:
    if not cfg.ranking:
        raise UsageError("evaluate needs --ranking")
    p = _Problem(cfg)
    M = p.data.n_features
    ranking = read_ranking(cfg.ranking, p.names)
    kmax = min(10, M - 1) if cfg.kmax is None else cfg.kmax
    if not 0 <= kmax < M:
        raise UsageError(f"--kmax must be below the feature count {M}, got {kmax}")
    try:
        curve = perturbation_curve(ranking, p.evaluator, p.split, kmax, cfg.method, max(cfg.jobs, 1))
    finally:
        p.close()
    path = os.path.join(cfg.out, "curve.csv")
    atomic_write(path, curve.to_csv())
    return [path]


def cmd_compare(cfg: RunConfig) -> list[str]:
    p = _Problem(cfg)
    M = p.data.n_features
    order = ["approx", "neighborhood-exact", "exact", "permutation-importance"]
    results = {}
    try:
        for method in order:
            if method == "exact" and M > cfg.exact_cap:
                results[method] = {"method": method, "status": "capped",
                                   "message": f"2^{M} coalitions exceeds the 2^{cfg.exact_cap} cap"}
                continue
            if method == "neighborhood-exact":
                largest = max(len(neighborhood(p.graph, i, cfg.dmax)) for i in range(M))
                if largest > 20:
                    results[method] = {"method": method, "status": "capped",
                                       "message": f"largest neighbourhood has {largest} members"}
                    continue
            try:
                results[method] = p.run(method).to_dict(p.names)
            except (EvaluatorError, CapExceededError, ValueError) as exc:
                results[method] = {"method": method, "status": "error", "message": str(exc)}
    finally:
        p.close()

    ok = [m for m in order if results[m]["status"] == "ok"]
    rankings = {m: [f["index"] for f in results[m]["importance"]["features"]] for m in ok}
    pairs = []
    for a_i, a in enumerate(ok):
        for b in ok[a_i + 1:]:
            cmp = compare_rankings(rankings[a], rankings[b], cfg.top_k)
            pairs.append({"a": a, "b": b, **cmp})
    report = {
        "config": cfg.resolved(),
        "features": list(p.names),
        "methods": [results[m] for m in order],
        "comparisons": pairs,
    }
    paths = [os.path.join(cfg.out, "compare.json"), os.path.join(cfg.out, "compare.csv")]
    atomic_write(paths[0], dumps_json(report))
    atomic_write(
        paths[1],
        rows_to_csv(
            ["a", "b", "top_k", "overlap", "kendall_tau"],
            [(c["a"], c["b"], c["top_k"], float(c["overlap"]), float(c["kendall_tau"])) for c in pairs],
        ),
    )
    for m in order:
        r = results[m]
        print(f"{m:<24} {r['status']:<8} evaluations={r.get('evaluations', '-')}")
    return paths


COMMANDS = {
    "graph": cmd_graph,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    a = common.add_argument
    a("--config", help="JSON file with run settings; flags override it")
    a("--input", default=S, help="CSV file with a header row")
    a("--target", default=S, help="name of the target column")
    a("--task", default=S, choices=(REGRESSION, CLASSIFICATION))
    a("--evaluator", default=S, choices=EVALUATOR_CHOICES)
    a("--k", type=int, default=S, help="neighbours for the knn evaluator (default 5)")
    a("--lambda", dest="lam", type=float, default=S, help="OLS ridge term (default 1e-8)")
    a("--external-cmd", dest="external_cmd", default=S, help="command line of an external evaluator")
    a("--timeout", type=float, default=S, help="seconds per external request (default 300)")
    a("--dmax", type=int, default=S, help="neighbourhood depth (default 1)")
    a("--m", type=int, default=S, help="neighbourhood sample size (default 12)")
    a("--seed", type=int, default=S)
    a("--split", type=float, default=S, help="train fraction (default 0.8)")
    a("--method", default=S, choices=METHODS)
    a("--kmax", type=int, default=S, help="features to remove in evaluate")
    a("--jobs", type=int, default=S, help="worker threads (default: logical cores)")
    a("--out", default=S, help="output directory")
    a("--game", default=S, choices=("model", "graph"))
    a("--normalization", default=S, choices=NORMALIZATIONS)
    a("--repeats", type=int, default=S, help="permutation-importance shuffles per feature")
    a("--top-k", dest="top_k", type=int, default=S)
    a("--exact-cap", dest="exact_cap", type=int, default=S)
    a("--score-on", dest="score_on", default=S, choices=("test", "train"))
    a("--corr-on", dest="corr_on", default=S, choices=("full", "train"))
    a("--impute-mean", dest="impute_mean", action="store_true", default=S)
    a("--ranking", default=S, help="importance JSON or ranking CSV for evaluate")
    a("-v", "--verbose", action="store_true", default=False)

    parser = argparse.ArgumentParser(prog="shapg", description="Graph-based Shapley feature importance")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("graph", parents=[common], help="write correlation, adjacency and DOT files")
    sub.add_parser("explain", parents=[common], help="compute feature importance")
    sub.add_parser("evaluate", parents=[common], help="perturbation curve for a ranking")
    sub.add_parser("compare", parents=[common], help="run every method and compare rankings")
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values = {}
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        for key, v in raw.items():
            key = key.replace("-", "_")
            key = "lam" if key == "lambda" else key
            if key not in fields:
                raise UsageError(f"unknown config key {key!r}")
            values[key] = v
    for key in fields:
        if hasattr(ns, key):
            values[key] = getattr(ns, key)
    cfg = RunConfig(**values)
    if cfg.jobs <= 0:
        cfg.jobs = os.cpu_count() or 1
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if ns.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(ns)
        COMMANDS[ns.command](cfg)
    except (UsageError, DataError, GraphError, CapExceededError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvaluatorError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
