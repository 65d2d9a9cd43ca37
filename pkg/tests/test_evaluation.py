"""
Tests for evaluation
"""

import math
import unittest
from pathlib import Path

import numpy as np
from scipy import stats

import sys
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))
sys.path.insert(0, str(Path(__file__).parent))

from cohortgen import Cohort
from errors import (
    ConfigError,
    DegenerateTargetError,
    EmptyMatrixError,
    UndefinedCorrelationError,
    ValidationError,
)
from evaluation import (
    Design,
    EvalReport,
    ExperimentConfig,
    PipelineSettings,
    Variant,
    aggregate_sessions,
    build_design,
    cohort_summary,
    correlation_p_value,
    derive_seed,
    filter_features,
    macro_f1,
    make_folds,
    median_split,
    pearson_r,
    rmse,
    run_experiment,
    run_grid,
    significance_stars,
    tune_hyperparams,
)
from features import FeatureMatrix, FeatureScope, whole_drive_columns
from helpers import east_points, make_session, make_table, make_traits, simple_route
from models import ModelKind
from signals import TraitTable

DRIVERS = [f"D{i:02d}" for i in range(1, 9)]
FAST = PipelineSettings(
    regularization_grid=(0.001, 0.01, 0.1),
    depth_grid=(2, 3),
    n_trees=15,
    regression_models=(ModelKind.RIDGE,),
)


def _design(columns, drivers=DRIVERS, sessions=None):
    """每名驾驶者一行（或按 sessions 给出的会话数重复）的整段设计矩阵"""
    sessions = sessions or [1] * len(drivers)
    session_ids, driver_ids, rows = [], [], []
    for d, count, row in zip(drivers, sessions, np.asarray(columns, dtype=float).T):
        for k in range(count):
            session_ids.append(f"{d}#{k + 1}")
            driver_ids.append(d)
            rows.append(row)
    names = whole_drive_columns()[:len(columns)]
    matrix = FeatureMatrix(session_ids, driver_ids, names, np.vstack(rows))
    return Design(Variant.III, FeatureScope.WHOLE, matrix, {}, len(columns))


def _cohort(traits: TraitTable) -> Cohort:
    return Cohort(sessions=(), traits=traits, route_map=simple_route())


class TestSettings(unittest.TestCase):
    """测试流水线参数"""

    def test_dict_round_trip(self):
        settings = PipelineSettings(cohort_mean_arterial="auto", depth_grid=(3, 5), seed=11)
        self.assertEqual(PipelineSettings.from_dict(settings.to_dict()), settings)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            PipelineSettings.from_dict({"n_tree": 5})

    def test_from_config_sections(self):
        settings = PipelineSettings.from_config({
            "segmentation": {"duration_targets": ["all", 60, 30], "cohort_mean_arterial": 300},
            "models": {"regularization_grid": [0.1, 1], "n_trees": 20},
            "evaluation": {"corr_threshold": 0.2, "regression_models": ["lasso"], "seed": 4},
        })
        self.assertEqual(settings.duration_targets, ("all", 60, 30))
        self.assertEqual(settings.regularization_grid, (0.1, 1.0))
        self.assertEqual(settings.regression_models, (ModelKind.LASSO,))
        self.assertEqual(settings.seed, 4)
        self.assertEqual(settings.grid_for(ModelKind.RANDOM_FOREST_CLF), (3, 5, 7, 9, 11))

    def test_invalid_values(self):
        for kwargs in (
            {"duration_targets": (30, 60)},
            {"cohort_mean_arterial": -1.0},
            {"cohort_mean_arterial": "median"},
            {"regularization_grid": (0.0, 1.0)},
            {"depth_grid": (2.5,)},
            {"corr_threshold": 1.0},
            {"regression_models": ("logistic_l2",)},
            {"classification_models": ("svm",)},
        ):
            with self.assertRaises(ConfigError):
                PipelineSettings(**kwargs)

    def test_experiment_config(self):
        config = ExperimentConfig("wsq_2", "ii", "intersection")
        self.assertEqual(config.task, "classification")
        self.assertEqual(config.models, PipelineSettings().classification_models)
        with self.assertRaises(ValidationError):
            ExperimentConfig("tmt_a", Variant.III, FeatureScope.ARTERIAL)
        with self.assertRaises(ValidationError):
            ExperimentConfig("tmt_a", Variant.I, FeatureScope.WHOLE)
        with self.assertRaises(ValidationError):
            ExperimentConfig("dsq_1", Variant.III, FeatureScope.WHOLE, models=(ModelKind.RIDGE,))


class TestFoldsAndLabels(unittest.TestCase):
    """测试折划分与中位数切分"""

    def test_one_fold_per_driver(self):
        plan = make_folds(["D03", "D01", "D02", "D01"])
        self.assertEqual(len(plan), 3)
        self.assertEqual(plan.drivers, ("D01", "D02", "D03"))
        fold = plan.folds[1]
        self.assertEqual(fold.test_driver, "D02")
        self.assertEqual(fold.train_drivers, ("D01", "D03"))

    def test_single_driver(self):
        with self.assertRaises(ValidationError):
            make_folds(["D01", "D01"])

    def test_median_split_strictly_greater(self):
        labels = median_split({"a": 1.0, "b": 2.0, "c": 2.0, "d": 3.0, "e": 4.0})
        self.assertEqual(labels, {"a": 0, "b": 0, "c": 0, "d": 1, "e": 1})

    def test_median_split_even_count(self):
        labels = median_split({"a": 1, "b": 1, "c": 2, "d": 2})
        self.assertEqual(labels, {"a": 0, "b": 0, "c": 1, "d": 1})

    def test_median_split_monotone_transform(self):
        rng = np.random.default_rng(5)
        transforms = (np.exp, lambda v: v ** 3, lambda v: 2.5 * v + 7.0)
        for k in range(60):
            n = int(rng.integers(2, 30))
            raw = rng.integers(0, 6, size=n) if k % 2 else rng.normal(size=n)
            scores = {f"D{i:02d}": float(v) for i, v in enumerate(raw)}
            try:
                expected = median_split(scores)
            except DegenerateTargetError:
                expected = None
            for f in transforms:
                moved = {d: float(f(v)) for d, v in scores.items()}
                if expected is None:
                    with self.assertRaises(DegenerateTargetError):
                        median_split(moved)
                else:
                    self.assertEqual(median_split(moved), expected)

    def test_median_split_single_class(self):
        with self.assertRaises(DegenerateTargetError):
            median_split({"a": 2, "b": 2, "c": 2})
        with self.assertRaises(DegenerateTargetError):
            median_split({"a": 1, "b": 3, "c": 3, "d": 3})


class TestFilterFeatures(unittest.TestCase):
    """测试相关性筛选"""

    def test_threshold_is_strict(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        X = np.column_stack([y, -y, np.ones(4), [1.0, 0.0, 0.0, 1.0]])
        self.assertEqual(filter_features(X, y, 0.1).tolist(), [0, 1])
        self.assertEqual(filter_features(X, y, 0.0).tolist(), [0, 1])

    def test_constant_target_keeps_nothing(self):
        X = np.random.default_rng(0).normal(size=(6, 3))
        self.assertEqual(filter_features(X, np.ones(6)).size, 0)


class TestMetrics(unittest.TestCase):
    """测试评估指标"""

    def test_macro_f1(self):
        self.assertAlmostEqual(macro_f1([0, 0, 1, 1], [0, 1, 1, 1]), (2 / 3 + 4 / 5) / 2)
        self.assertEqual(macro_f1([0, 1, 0, 1], [0, 1, 0, 1]), 1.0)
        # 从未预测为 0
        self.assertAlmostEqual(macro_f1([0, 1, 1, 1], [1, 1, 1, 1]), (0.0 + 6 / 7) / 2)
        self.assertAlmostEqual(macro_f1([1, 1], [1, 1]), 0.5)

    def test_pearson_and_p_value(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=23)
        y = 0.5 * x + rng.normal(size=23)
        expected_r, expected_p = stats.pearsonr(x, y)
        r = pearson_r(x, y)
        self.assertAlmostEqual(r, expected_r, places=12)
        self.assertAlmostEqual(correlation_p_value(r, 23), expected_p, places=10)

    def test_p_value_edges(self):
        self.assertEqual(correlation_p_value(1.0, 10), 0.0)
        self.assertTrue(math.isnan(correlation_p_value(0.5, 2)))
        self.assertTrue(math.isnan(correlation_p_value(math.nan, 10)))

    def test_undefined_correlation(self):
        with self.assertRaises(UndefinedCorrelationError):
            pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with self.assertRaises(UndefinedCorrelationError):
            pearson_r([1.0], [2.0])

    def test_stars(self):
        self.assertEqual(significance_stars(0.004), "**")
        self.assertEqual(significance_stars(0.01), "*")
        self.assertEqual(significance_stars(0.049), "*")
        self.assertEqual(significance_stars(0.05), "")
        self.assertEqual(significance_stars(math.nan), "")

    def test_rmse_and_aggregation(self):
        self.assertAlmostEqual(rmse([1, 2, 3], [1, 2, 5]), math.sqrt(4 / 3))
        self.assertEqual(aggregate_sessions(["a", "a", "b"], [1.0, 3.0, 5.0]), {"a": 2.0, "b": 5.0})

    def test_derive_seed(self):
        self.assertEqual(derive_seed(0, 1, 2), derive_seed(0, 1, 2))
        self.assertNotEqual(derive_seed(0, 1, 2), derive_seed(0, 2, 1))


class TestTuning(unittest.TestCase):
    """测试内层超参数选择"""

    def test_ties_pick_smallest_value(self):
        X = np.ones((6, 2))
        y = np.arange(6, dtype=float)
        drivers = [f"D{i}" for i in range(6)]
        result = tune_hyperparams(X, y, drivers, ModelKind.RIDGE, (10.0, 0.1, 1.0), FAST)
        self.assertEqual(result.value, 0.1)
        self.assertEqual(len(set(result.scores.values())), 1)

    def test_all_inner_folds_single_class(self):
        X = np.array([[0.0], [1.0]])
        result = tune_hyperparams(X, np.array([0.0, 1.0]), ["D1", "D2"], ModelKind.LOGISTIC_L2,
                                  (0.001, 0.01, 0.1, 1.0, 10.0, 100.0), FAST)
        self.assertEqual(result.value, 1.0)
        self.assertEqual(result.skipped_folds, 2)
        self.assertIn("midpoint", result.note)

    def test_single_candidate(self):
        result = tune_hyperparams(np.ones((3, 1)), np.arange(3.0), ["a", "b", "c"], ModelKind.LASSO, (0.5,))
        self.assertEqual(result.value, 0.5)

    def test_empty_grid(self):
        with self.assertRaises(ValidationError):
            tune_hyperparams(np.ones((3, 1)), np.arange(3.0), ["a", "b", "c"], ModelKind.RIDGE, ())


class TestRunExperiment(unittest.TestCase):
    """测试留一驾驶者交叉验证"""

    def setUp(self):
        self.traits = make_table(DRIVERS)
        self.y = np.array([self.traits.get(d).value("tmt_a") for d in DRIVERS])
        self.cohort = _cohort(self.traits)

    def _run(self, design, target="tmt_a", models=(ModelKind.RIDGE,), settings=FAST, jobs=1):
        config = ExperimentConfig(target, Variant.III, FeatureScope.WHOLE, models=models, settings=settings)
        return run_experiment(config, self.cohort, design, jobs=jobs)

    def test_informative_feature(self):
        design = _design([self.y, np.full(8, 2.0)], sessions=[2, 1, 1, 2, 1, 1, 1, 1])
        report = self._run(design, models=(ModelKind.RIDGE, ModelKind.LASSO))
        self.assertEqual(len(report.entries), 2)
        for entry in report.entries:
            self.assertEqual(entry.truth, {d: v for d, v in zip(DRIVERS, self.y)})
            self.assertEqual(sorted(entry.predictions), DRIVERS)
            self.assertEqual([f.test_driver for f in entry.folds], DRIVERS)
            self.assertTrue(all(f.n_features == 1 for f in entry.folds))
            self.assertGreater(entry.metrics["pearson_r"], 0.99)
            self.assertEqual(entry.metrics["stars"], "**")
            self.assertTrue(entry.metrics["rmse_below_sd"])
            self.assertAlmostEqual(entry.metrics["truth_sd"], float(np.std(self.y, ddof=1)))

    def test_held_out_driver_never_drives_selection(self):
        """只在 D08 上非零的列：D08 作为测试者时不能被选中"""
        noise = np.random.default_rng(5).normal(size=8)
        poison = np.zeros(8)
        poison[7] = 1.0
        design = _design([noise, poison])
        report = self._run(design)
        folds = {f.test_driver: f for f in report.entries[0].folds}
        X = design.matrix.values
        for i, d in enumerate(DRIVERS):
            train = np.arange(8) != i
            expected = filter_features(X[train], self.y[train], FAST.corr_threshold)
            self.assertEqual(folds[d].n_features, expected.size)
            if d == "D08":
                self.assertNotIn(1, expected.tolist())
            else:
                self.assertIn(1, expected.tolist())

    def test_fallback_predicts_training_mean(self):
        design = _design([np.ones(8), np.full(8, 3.0)])
        entry = self._run(design).entries[0]
        total = self.y.sum()
        for d, value in zip(DRIVERS, self.y):
            self.assertAlmostEqual(entry.predictions[d], (total - value) / 7)
        self.assertTrue(all(f.fallback and f.chosen_param is None for f in entry.folds))
        self.assertAlmostEqual(entry.metrics["pearson_r"], -1.0)
        self.assertTrue(entry.notes)

    def test_parallel_matches_serial(self):
        rng = np.random.default_rng(9)
        design = _design([self.y + rng.normal(scale=5, size=8), rng.normal(size=8)])
        serial = self._run(design, models=(ModelKind.RIDGE, ModelKind.RANDOM_FOREST_REG))
        parallel = self._run(design, models=(ModelKind.RIDGE, ModelKind.RANDOM_FOREST_REG), jobs=4)
        self.assertEqual(serial.to_dict(), parallel.to_dict())

    def test_classification_target(self):
        items = [1, 1, 2, 2, 3, 3, 4, 4]
        traits = TraitTable.from_traits(make_traits(d, item=k) for d, k in zip(DRIVERS, items))
        self.cohort = _cohort(traits)
        design = _design([np.asarray(items, dtype=float) + 0.1 * np.arange(8)])
        report = self._run(design, target="dsq_1", models=(ModelKind.LOGISTIC_L2, ModelKind.RANDOM_FOREST_CLF))
        for entry in report.entries:
            self.assertEqual(entry.task, "classification")
            self.assertEqual(list(entry.truth.values()), [0, 0, 0, 0, 1, 1, 1, 1])
            self.assertTrue(set(entry.predictions.values()) <= {0.0, 1.0})
            truth = np.array(list(entry.truth.values()))
            predicted = np.array([entry.predictions[d] for d in entry.truth])
            self.assertAlmostEqual(entry.metrics["accuracy"], float(np.mean(truth == predicted)))
            self.assertTrue(all(f.score is not None for f in entry.folds if not f.fallback))

    def test_degenerate_classification_target(self):
        self.cohort = _cohort(TraitTable.from_traits(make_traits(d, item=2) for d in DRIVERS))
        with self.assertRaises(DegenerateTargetError):
            self._run(_design([self.y]), target="dsq_1", models=(ModelKind.LOGISTIC_L2,))

    def test_report_round_trip_and_table(self):
        report = self._run(_design([self.y]))
        restored = EvalReport.from_dict(report.to_dict())
        self.assertEqual(restored.to_dict(), report.to_dict())
        header, rows = report.table()
        self.assertEqual(header, ["variant", "road_scope", "model", "tmt_a:r", "tmt_a:stars", "tmt_a:rmse"])
        self.assertEqual(rows[0][:3], ["iii", "whole", "ridge"])
        self.assertEqual(len(report.long_rows()), 6)


class TestRunGrid(unittest.TestCase):
    """测试整体评估网格"""

    def test_degenerate_target_is_noted(self):
        traits = TraitTable.from_traits(make_traits(d, base=40 + 3 * i, item=2) for i, d in enumerate(DRIVERS))
        y = [traits.get(d).value("tmt_a") for d in DRIVERS]
        designs = {(Variant.III, FeatureScope.WHOLE): _design([y])}
        report = run_grid(_cohort(traits), variants=["iii"], targets=["dsq_1", "tmt_a"], settings=FAST,
                          designs=designs)
        self.assertEqual([e.target for e in report.entries], ["tmt_a"])
        self.assertTrue(any("dsq_1" in note for note in report.notes))

    def test_unknown_target(self):
        with self.assertRaises(ValidationError):
            run_grid(_cohort(make_table(DRIVERS)), variants=["iii"], targets=["speed"])


class TestBuildDesign(unittest.TestCase):
    """测试设计矩阵构建"""

    def _cohort(self, position=None):
        sessions = [
            make_session(d, k, n=100, seed=i, position=position)
            for i, (d, k) in enumerate([("D01", 1), ("D01", 2), ("D02", 1), ("D03", 1)])
        ]
        return Cohort(sessions=sessions, traits=make_table(["D01", "D02", "D03"]), route_map=simple_route())

    def test_whole_scope(self):
        design = build_design(self._cohort(), Variant.III, FeatureScope.WHOLE)
        self.assertEqual(design.matrix.shape, (4, 78))
        self.assertEqual(design.matrix.driver_ids, ("D01", "D01", "D02", "D03"))
        self.assertIsNone(design.cohort_mean_arterial)

    def test_all_window_variant_with_auto_mean(self):
        cohort = self._cohort(position=east_points(np.linspace(100.0, 900.0, 100)))
        settings = PipelineSettings(cohort_mean_arterial="auto")
        design = build_design(cohort, "ii", "arterial", settings)
        self.assertAlmostEqual(design.cohort_mean_arterial, 10.0)
        self.assertEqual(dict(design.window_counts), {"all": 1})
        self.assertEqual(design.matrix.shape, (4, 78))
        self.assertTrue(all(name.startswith("art.all.") for name in design.matrix.column_names))

    def test_all_window_columns_are_a_subset(self):
        route = simple_route()
        center = np.array([route.intersections[0].center])
        position = np.vstack([east_points(np.linspace(100.0, 900.0, 80)), np.repeat(center, 20, axis=0)])
        brake = np.zeros(100)
        brake[84:90] = 0.5
        sessions = [
            make_session(d, k, n=100, seed=i, position=position, brake=brake)
            for i, (d, k) in enumerate([("D01", 1), ("D01", 2), ("D02", 1), ("D03", 1)])
        ]
        cohort = Cohort(sessions=sessions, traits=make_table(["D01", "D02", "D03"]), route_map=route)
        settings = PipelineSettings(duration_targets=("all", 2, 1), cohort_mean_arterial="auto")
        for scope in (FeatureScope.ARTERIAL, FeatureScope.INTERSECTION):
            full = build_design(cohort, Variant.I, scope, settings)
            reduced = build_design(cohort, Variant.II, scope, settings)
            self.assertLessEqual(set(reduced.matrix.column_names), set(full.matrix.column_names))
            if scope is FeatureScope.ARTERIAL:
                self.assertLess(len(reduced.matrix.column_names), len(full.matrix.column_names))

    def test_intersections_never_passed(self):
        cohort = self._cohort(position=east_points(np.linspace(100.0, 900.0, 100)))
        with self.assertRaises(EmptyMatrixError):
            build_design(cohort, Variant.I, FeatureScope.INTERSECTION)

    def test_scope_mismatch(self):
        with self.assertRaises(ValidationError):
            build_design(self._cohort(), Variant.II, FeatureScope.WHOLE)


class TestCohortSummary(unittest.TestCase):
    """测试队列描述统计"""

    def test_summary(self):
        summary = cohort_summary(make_table(["D01", "D02", "D03"], [40.0, 45.0, 50.0]))
        self.assertEqual(summary["n_drivers"], 3)
        self.assertAlmostEqual(summary["cognitive"]["tmt_a"]["mean"], 45.0)
        self.assertAlmostEqual(summary["cognitive"]["tmt_a"]["sd"], 5.0)
        self.assertAlmostEqual(summary["correlations"]["tmt_a~tmt_b"], 1.0)
        self.assertEqual(summary["questionnaire"]["dsq_1"], {"2": 3})


if __name__ == '__main__':
    unittest.main()
