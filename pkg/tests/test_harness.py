import numpy as np
import pytest

from conftest import planted_dataset, stub
from shapg.data import CorrelationMatrix, Dataset, split
from shapg.game import graph_game, model_game
from shapg.graph import FeatureGraph, build_feature_graph
from shapg.harness import (
    PerturbationCurve,
    compare_rankings,
    kendall_tau_brute,
    permutation_importance,
    perturbation_curve,
    timed_run,
)
from shapg.models import Evaluator


@pytest.fixture
def planted_split():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 5))
    y = 5 * X[:, 0] + rng.normal(size=300)
    return split(Dataset(X, y, [f"x{i + 1}" for i in range(5)]), 0.8, 0)


class TestPerturbation:
    def test_k0_is_grand_coalition(self, planted_split):
        ev = Evaluator("ols")
        curve = perturbation_curve([0, 1, 2, 3, 4], ev, planted_split, 2)
        game = model_game(ev, planted_split)
        assert curve.points[0] == (0, game.value(game.grand_coalition))
        assert [k for k, _ in curve.points] == [0, 1, 2]

    def test_correct_ranking_drops_more(self, planted_split):
        ev = Evaluator("ols")
        good = perturbation_curve([0, 1, 2, 3, 4], ev, planted_split, 1)
        bad = perturbation_curve([4, 3, 2, 1, 0], ev, planted_split, 1)
        assert good.points[0][1] == bad.points[0][1]
        assert good.points[0][1] - good.points[1][1] > bad.points[0][1] - bad.points[1][1]

    def test_last_point_is_single_feature(self, planted_split):
        ev = Evaluator("ols")
        ranking = [2, 0, 4, 1, 3]
        curve = perturbation_curve(ranking, ev, planted_split, 4)
        game = model_game(ev, planted_split)
        assert curve.points[-1][1] == pytest.approx(game.value(1 << 3), abs=1e-12)

    def test_kmax_guard(self, planted_split):
        with pytest.raises(ValueError):
            perturbation_curve([0, 1, 2, 3, 4], Evaluator("ols"), planted_split, 5)
        with pytest.raises(ValueError):
            perturbation_curve([0, 1, 2], Evaluator("ols"), planted_split, 1)

    def test_csv_and_area(self):
        c = PerturbationCurve([(0, 1.0), (1, 0.5), (2, 0.0)])
        assert c.to_csv() == "k,score\n0,1.0\n1,0.5\n2,0.0\n"
        assert c.area() == pytest.approx(1.0)

    def test_jobs(self, planted_split):
        ev = Evaluator("ols")
        a = perturbation_curve([0, 1, 2, 3, 4], ev, planted_split, 4)
        b = perturbation_curve([0, 1, 2, 3, 4], ev, planted_split, 4, jobs=3)
        assert a.points == b.points


class TestPermutationImportance:
    def test_planted_signal_largest(self, planted_split):
        iv = permutation_importance(Evaluator("ols"), planted_split, repeats=10, seed=1)
        assert iv.ranking[0] == 0
        assert iv.values[0] > 10 * np.max(np.abs(iv.values[1:]))

    def test_constant_column_zero(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(50, 3))
        X[:, 1] = 4.0
        d = Dataset(X, X[:, 0] + rng.normal(size=50), list("abc"))
        iv = permutation_importance(Evaluator("knn_regress"), split(d, 0.8, 0), repeats=5)
        assert iv.values[1] == 0.0

    def test_deterministic(self, planted_split):
        a = permutation_importance(Evaluator("ols"), planted_split, 4, seed=9)
        b = permutation_importance(Evaluator("ols"), planted_split, 4, seed=9)
        assert a.values.tobytes() == b.values.tobytes()

    def test_noise_feature_shrinks_with_repeats(self, planted_split):
        few = permutation_importance(Evaluator("ols"), planted_split, 2, seed=3).values[1:]
        many = permutation_importance(Evaluator("ols"), planted_split, 60, seed=3).values[1:]
        assert np.max(np.abs(many)) < 0.01
        assert np.mean(np.abs(many)) <= np.mean(np.abs(few)) + 1e-3

    def test_external_matches_builtin(self, planted_split):
        builtin = permutation_importance(Evaluator("ols", lam=0.0), planted_split, 2, seed=4)
        with Evaluator("external", command=stub("ols_server.py")) as ev:
            ext = permutation_importance(ev, planted_split, 2, seed=4)
        np.testing.assert_allclose(ext.values, builtin.values, atol=1e-9)


class TestCompare:
    def test_identical(self):
        r = compare_rankings([3, 1, 2, 0], [3, 1, 2, 0], 2)
        assert r["overlap"] == 1.0 and r["kendall_tau"] == pytest.approx(1.0)

    def test_reversed(self):
        r = compare_rankings(list(range(6)), list(range(6))[::-1], 3)
        assert r["kendall_tau"] == pytest.approx(-1.0)
        assert r["overlap"] == 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_tau_brute(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.permutation(10).tolist(), rng.permutation(10).tolist()
        assert compare_rankings(a, b, 5)["kendall_tau"] == pytest.approx(
            kendall_tau_brute(a, b), abs=1e-12
        )

    def test_universe_mismatch(self):
        with pytest.raises(ValueError):
            compare_rankings([0, 1, 2], [0, 1, 3])


class TestTimedRun:
    def _graph_game(self, M, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(60, M)) + rng.normal(size=(60, 1))
        from shapg.data import pearson_matrix

        w = pearson_matrix(Dataset(X, np.zeros(60), [f"f{i}" for i in range(M)]))
        g = build_feature_graph(w)
        return w, g

    def test_exact_count_bound(self):
        w, g = self._graph_game(10)
        rep = timed_run("exact", game=graph_game(w, g))
        assert rep.evaluations <= 2**10
        assert rep.importance.method_tag == "exact"

    def test_approx_sparse_35(self):
        w, g = self._graph_game(35)
        rep = timed_run("approx", game=graph_game(w, g), graph=g, d_max=1, m=12)
        assert rep.evaluations < 2**35 / 1e6

    def test_counts_reproducible(self):
        w, g = self._graph_game(14, seed=3)
        a = timed_run("approx", game=graph_game(w, g), graph=g, m=2, seed=5)
        b = timed_run("approx", game=graph_game(w, g), graph=g, m=2, seed=5, jobs=4)
        assert a.evaluations == b.evaluations
        assert np.array_equal(a.importance.values, b.importance.values)

    def test_report_dict(self):
        sp = split(planted_dataset(0, n=60, n_noise=2), 0.8, 0)
        rep = timed_run("permutation-importance", evaluator=Evaluator("ols"), split=sp, repeats=2)
        d = rep.to_dict(list(sp.train.feature_names), include_timing=False)
        assert d["status"] == "ok" and d["evaluations"] == 1 + 4 * 2
        assert "elapsed_ms" not in d

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            timed_run("lime")

    def test_needs_inputs(self):
        w = CorrelationMatrix(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            timed_run("approx", game=graph_game(w, FeatureGraph.from_edges(2, [])))
