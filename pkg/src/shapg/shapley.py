"""Exact and graph-restricted Shapley values.

Three estimators are provided:

* :func:`exact_shapley` enumerates all ``2**M`` coalitions.
* :func:`neighborhood_exact` averages a feature's marginal contribution
  over every subset of its graph neighbourhood.
* :func:`approx_shapley` (ShapG) does the same for small neighbourhoods and
  switches to repeated random sub-samples of ``m`` neighbours when the
  neighbourhood is large. The number of rounds is the coupon-collector
  expectation returned by :func:`sampling_count`.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .game import Game, subset_masks
from .graph import FeatureGraph, neighborhood

EULER_GAMMA = 0.5772156649
DEFAULT_EXACT_CAP = 20
MAX_SUBSET_BITS = 20
NORMALIZATIONS = ("scaled", "sample_mean")


class CapExceededError(ValueError):
    """The requested enumeration exceeds the configured evaluation budget."""


@dataclass
class ImportanceVector:
    values: np.ndarray
    method_tag: str
    elapsed: float = 0.0
    evaluations: int = 0
    feature_names: Sequence[str] | None = None
    plans: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def ranking(self) -> list[int]:
        return [i for i, _ in rank(self)]

    def to_dict(self, names: Sequence[str] | None = None, include_timing: bool = True) -> dict:
        names = names or self.feature_names or [str(i) for i in range(len(self.values))]
        out = {
            "method": self.method_tag,
            "features": [
                {"index": i, "name": names[i], "value": v} for i, v in rank(self)
            ],
        }
        if include_timing:
            out["elapsed_ms"] = round(self.elapsed * 1000.0, 3)
        out["evaluations"] = self.evaluations
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ImportanceVector":
        feats = sorted(obj["features"], key=lambda f: f["index"])
        return cls(
            [f["value"] for f in feats],
            obj.get("method", "unknown"),
            obj.get("elapsed_ms", 0.0) / 1000.0,
            obj.get("evaluations", 0),
            [f["name"] for f in feats],
        )


def rank(iv) -> list[tuple[int, float]]:
    """``(index, value)`` pairs by descending value, ties by ascending index."""
    values = iv.values if isinstance(iv, ImportanceVector) else np.asarray(iv, dtype=float)
    order = sorted(range(len(values)), key=lambda j: (-values[j], j))
    return [(j, float(values[j])) for j in order]


def _popcount(masks: np.ndarray, n_bits: int) -> np.ndarray:
    counts = np.zeros_like(masks)
    for b in range(n_bits):
        counts += (masks >> b) & 1
    return counts


def shapley_weights(M: int) -> np.ndarray:
    """``|S|! (M-|S|-1)! / M!`` for ``|S| = 0..M-1``, from exact rationals."""
    fm = math.factorial(M)
    return np.array(
        [float(Fraction(math.factorial(s) * math.factorial(M - s - 1), fm)) for s in range(M)]
    )


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=64))


def exact_shapley(game: Game, cap: int = DEFAULT_EXACT_CAP, jobs: int = 1) -> ImportanceVector:
    M = game.n_players
    if M > cap:
        raise CapExceededError(
            f"exact Shapley needs 2^{M} coalition evaluations; the cap is 2^{cap}. "
            "Use the approx method instead."
        )
    t0 = time.perf_counter()
    before = game.evaluations
    n = 1 << M
    vals = np.array(_map(game.value, range(n), jobs), dtype=float)
    masks = np.arange(n, dtype=np.int64)
    sizes = _popcount(masks, M)
    weights = shapley_weights(M)
    phi = np.empty(M)
    for i in range(M):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = np.sum(weights[sizes[without]] * (vals[without | bit] - vals[without]))
    return ImportanceVector(
        phi, "exact", time.perf_counter() - t0, game.evaluations - before
    )


def _marginal_sum(game: Game, i: int, players: Sequence[int]) -> float:
    bit = 1 << i
    total = 0.0
    for s in subset_masks(list(players)):
        total += game.value(s | bit) - game.value(s)
    return total


def _check_graph(game: Game, g: FeatureGraph):
    if g.node_count != game.n_players:
        raise ValueError(
            f"graph has {g.node_count} nodes but the game has {game.n_players} players"
        )


def neighborhood_exact(
    game: Game,
    g: FeatureGraph,
    d_max: int = 1,
    max_neighbors: int = MAX_SUBSET_BITS,
    jobs: int = 1,
) -> ImportanceVector:
    """Mean marginal contribution of each node over all subsets of its neighbourhood."""
    _check_graph(game, g)
    t0 = time.perf_counter()
    before = game.evaluations
    hoods = [neighborhood(g, i, d_max) for i in range(g.node_count)]
    too_big = [i for i, h in enumerate(hoods) if len(h) > max_neighbors]
    if too_big:
        i = too_big[0]
        raise CapExceededError(
            f"node {i} has {len(hoods[i])} neighbours within depth {d_max}; "
            f"the enumeration cap is {max_neighbors}"
        )

    def node_value(i):
        return _marginal_sum(game, i, hoods[i]) / 2.0 ** len(hoods[i])

    phi = np.array(_map(node_value, range(g.node_count), jobs))
    return ImportanceVector(
        phi, "neighborhood-exact", time.perf_counter() - t0, game.evaluations - before
    )


@dataclass(frozen=True)
class SamplingPlan:
    psi_size: int
    m: int
    h: int
    expected: float
    beta: float
    gamma: float = EULER_GAMMA


def expected_rounds(psi_size: int, m: int) -> float:
    """Approximate expected number of ``m``-sized draws to see all ``psi_size`` items."""
    return ((psi_size + 0.5) / m - 0.5) * (math.log(psi_size) + EULER_GAMMA) + 0.5


def sampling_count(psi_size: int, m: int) -> SamplingPlan:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if psi_size < m:
        raise ValueError(
            f"neighbourhood of size {psi_size} is below m={m}; use the exact branch"
        )
    raw = expected_rounds(psi_size, m)
    h = max(1, math.floor(raw + 0.5))
    return SamplingPlan(psi_size, m, h, raw, (psi_size + 1) / (m + 1))


def approx_shapley(
    game: Game,
    g: FeatureGraph,
    d_max: int = 1,
    m: int = 12,
    seed: int = 0,
    normalization: str = "scaled",
    jobs: int = 1,
) -> ImportanceVector:
    """ShapG importance of every node of ``g``.

    A node whose neighbourhood within ``d_max`` hops has fewer than ``m``
    members gets the exact neighbourhood average. Otherwise ``h`` rounds
    each draw ``m`` distinct neighbours and sum the node's marginal
    contributions over all subsets of the draw. With
    ``normalization="scaled"`` the total is multiplied by
    ``(|psi|+1)/(m+1) / (h * 2**|psi|)``; ``"sample_mean"`` instead divides
    by ``h * 2**m``, the plain mean over the enumerated subsets.

    Each node draws from its own generator seeded by ``(seed, node)``, so
    results do not depend on ``jobs``.
    """
    _check_graph(game, g)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m > MAX_SUBSET_BITS:
        raise CapExceededError(f"m={m} would enumerate 2^{m} subsets per round; cap is {MAX_SUBSET_BITS}")
    if d_max < 1:
        raise ValueError(f"d_max must be >= 1, got {d_max}")
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    t0 = time.perf_counter()
    before = game.evaluations
    hoods = [neighborhood(g, i, d_max) for i in range(g.node_count)]
    plans = {}
    for i, h in enumerate(hoods):
        if len(h) >= m:
            plans[i] = sampling_count(len(h), m)

    def node_value(i):
        psi = hoods[i]
        if i not in plans:
            return _marginal_sum(game, i, psi) / 2.0 ** len(psi)
        plan = plans[i]
        rng = np.random.default_rng([seed, i])
        pool = np.asarray(psi)
        total = 0.0
        for _round in range(plan.h):
            drawn = np.sort(rng.choice(pool, size=m, replace=False)).tolist()
            total += _marginal_sum(game, i, drawn)
        if normalization == "scaled":
            return total / 2.0 ** len(psi) / plan.h * plan.beta
        return total / (plan.h * 2.0 ** m)

    phi = np.array(_map(node_value, range(g.node_count), jobs))
    return ImportanceVector(
        phi, "approx", time.perf_counter() - t0, game.evaluations - before, plans=plans
    )
