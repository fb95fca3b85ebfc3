"""Characteristic functions over feature coalitions.

Coalitions are plain Python ints used as bitmasks: bit ``i`` set means
feature ``i`` belongs to the coalition. Python ints are unbounded, so no
special handling is needed beyond 64 players.
"""

from __future__ import annotations

import json
import os
import threading
from typing import Callable, Iterable

import numpy as np

from .data import CorrelationMatrix, SplitPair
from .graph import FeatureGraph
from .models import Evaluator, EvaluatorError, constant_predictions, metric_for, score


def mask_of(indices: Iterable[int]) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << int(i)
    return mask


def members(mask: int) -> list[int]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def subset_masks(indices: list[int]):
    """Yield the bitmask of every subset of ``indices`` (starting with the empty set)."""
    n = len(indices)
    bits = [1 << i for i in indices]
    for code in range(1 << n):
        mask = 0
        k = 0
        while code:
            if code & 1:
                mask |= bits[k]
            code >>= 1
            k += 1
        yield mask


class Game:
    """Memoised characteristic function ``v`` on ``n_players`` players.

    ``evaluations`` counts calls into ``value_fn`` (cache misses). Concurrent
    misses on the same coalition wait for the first computation instead of
    repeating it, which keeps the counter independent of scheduling.
    """

    def __init__(self, n_players: int, value_fn: Callable[[int], float], cache: bool = True):
        if n_players < 1:
            raise ValueError("a game needs at least one player")
        self.n_players = n_players
        self.value_fn = value_fn
        self.use_cache = cache
        self.evaluations = 0
        self._cache: dict[int, float] = {}
        self._pending: dict[int, threading.Event] = {}
        self._lock = threading.Lock()

    @property
    def grand_coalition(self) -> int:
        return (1 << self.n_players) - 1

    @property
    def empty_value(self) -> float:
        return self.value(0)

    def _check(self, s: int):
        if s < 0 or s >> self.n_players:
            raise ValueError(f"coalition {s} has players outside 0..{self.n_players - 1}")

    def _compute(self, s: int) -> float:
        with self._lock:
            self.evaluations += 1
        return float(self.value_fn(s))

    def value(self, s: int) -> float:
        self._check(s)
        if not self.use_cache:
            return self._compute(s)
        while True:
            with self._lock:
                if s in self._cache:
                    return self._cache[s]
                event = self._pending.get(s)
                if event is None:
                    event = self._pending[s] = threading.Event()
                    owner = True
                else:
                    owner = False
            if not owner:
                event.wait()
                continue
            try:
                v = self._compute(s)
                with self._lock:
                    self._cache[s] = v
                return v
            finally:
                with self._lock:
                    del self._pending[s]
                event.set()

    def __call__(self, s: int) -> float:
        return self.value(s)

    @property
    def cache_size(self) -> int:
        return len(self._cache)

    def dump_cache(self) -> str:
        with self._lock:
            items = sorted(self._cache.items())
        return json.dumps({str(k): v for k, v in items}, indent=1)

    def load_cache(self, text: str) -> int:
        """Merge a dumped cache; returns the number of entries loaded."""
        data = json.loads(text)
        entries = {int(k): float(v) for k, v in data.items()}
        for s in entries:
            self._check(s)
        with self._lock:
            self._cache.update(entries)
        return len(entries)

    def save_cache(self, path: str | os.PathLike):
        from .io import atomic_write

        atomic_write(path, self.dump_cache())

    def restore_cache(self, path: str | os.PathLike) -> int:
        with open(path, encoding="utf-8") as fh:
            return self.load_cache(fh.read())


def graph_game(w: CorrelationMatrix, g: FeatureGraph, cache: bool = True) -> Game:
    """Group-degree style game: summed correlation of edges inside the coalition."""
    if w.size != g.node_count:
        raise ValueError(f"correlation matrix is {w.size}x{w.size}, graph has {g.node_count} nodes")
    edges = [(1 << i) | (1 << j) for i, j in g.edges()]
    weights = [float(w.values[i, j]) for i, j in g.edges()]

    def v(s: int) -> float:
        total = 0.0
        for e, wt in zip(edges, weights):
            if s & e == e:
                total += wt
        return total

    return Game(g.node_count, v, cache)


def model_game(
    ev: Evaluator,
    sp: SplitPair,
    score_on: str = "test",
    cache: bool = True,
) -> Game:
    """Game whose value is the score of a model trained on the coalition's columns.

    The empty coalition scores a constant predictor (train mean or train
    majority class). ``score_on="train"`` scores on the training rows
    instead of the held-out rows.
    """
    task = sp.train.task_kind
    ev.check_task(task)
    if score_on not in ("test", "train"):
        raise ValueError(f"score_on must be 'test' or 'train', got {score_on!r}")
    train = sp.train
    evalset = sp.test if score_on == "test" else sp.train
    labels = None
    if task != "regression":
        labels = sorted(set(train.classes) | set(evalset.classes))
    metric = metric_for(task)
    M = train.n_features

    def v(s: int) -> float:
        cols = members(s)
        if not cols:
            pred = constant_predictions(train.target, evalset.n_rows, task)
            return score(pred, evalset.target, metric, labels).value
        try:
            return ev.evaluate(
                train.features[:, cols],
                train.target,
                evalset.features[:, cols],
                evalset.target,
                task,
                feature_indices=cols,
                labels=labels,
                coalition=s,
            )
        except EvaluatorError:
            raise
        except Exception as exc:
            raise EvaluatorError(f"evaluator failed: {exc}", s) from exc

    return Game(M, v, cache)


def brute_value_table(game: Game) -> np.ndarray:
    """All ``2**M`` values indexed by coalition mask."""
    return np.array([game.value(s) for s in range(1 << game.n_players)])
