"""
Tests for cli
"""

import json
import shutil
import tempfile
import unittest
from pathlib import Path

import yaml

import sys
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from cli import load_config, main, parse_args, setup_logging
from errors import ConfigError

TINY_CONFIG = {
    "cohort": {
        "seed": 0,
        "n_drivers": 4,
        "n_two_session_drivers": 2,
        "sample_rate": 5.0,
        "arterial_mean_s": 40.0,
        "arterial_sd_s": 2.0,
        "n_intersections": 2,
        "connector_s": [5.0, 8.0],
        "lead_in_s": 5.0,
        "tail_s": 5.0,
    },
    "segmentation": {"duration_targets": ["all", 10, 5], "cohort_mean_arterial": "auto"},
    "models": {"regularization_grid": [0.1, 1.0], "depth_grid": [2, 3], "n_trees": 5},
    "evaluation": {
        "seed": 0,
        "regression_models": ["ridge"],
        "classification_models": ["logistic_l2"],
    },
    "importance": {"models": ["ridge"], "variant": "i", "road_scope": "arterial", "top_k": 3},
    "logging": {"level": "WARNING"},
}


class TestConfigAndArgs(unittest.TestCase):
    """测试配置与参数解析"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_load_config(self):
        path = Path(self.temp_dir) / "config.yaml"
        path.write_text(yaml.safe_dump(TINY_CONFIG), encoding="utf-8")
        self.assertEqual(load_config(str(path))["cohort"]["n_drivers"], 4)

    def test_missing_config(self):
        with self.assertRaises(FileNotFoundError) as ctx:
            load_config(str(Path(self.temp_dir) / "nope.yaml"))
        self.assertTrue(ctx.exception.filename.endswith("nope.yaml"))

    def test_invalid_config(self):
        path = Path(self.temp_dir) / "bad.yaml"
        path.write_text("cohort: [1, 2\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_config(str(path))
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_config(str(path))

    def test_empty_config(self):
        path = Path(self.temp_dir) / "empty.yaml"
        path.write_text("", encoding="utf-8")
        self.assertEqual(load_config(str(path)), {})

    def test_parse_args(self):
        args = parse_args(["eval", "--data", "d", "--variant", "ii", "--targets", "tmt_a,ufov", "--out", "o"])
        self.assertEqual((args.command, args.data, args.variant, args.targets), ("eval", "d", "ii", "tmt_a,ufov"))
        self.assertIsNone(args.seed)
        self.assertEqual(parse_args(["featurize", "--out", "o"]).variant, "i")
        with self.assertRaises(SystemExit):
            parse_args(["importance", "--out", "o"])
        with self.assertRaises(SystemExit):
            parse_args(["eval", "--variant", "iv", "--out", "o"])

    def test_log_file(self):
        log_file = Path(self.temp_dir) / "logs" / "run.log"
        log = setup_logging({"logging": {"level": "INFO", "file": str(log_file)}})
        log.info("hello")
        for handler in log.root.handlers:
            handler.flush()
        self.assertIn("hello", log_file.read_text(encoding="utf-8"))
        setup_logging({"logging": {"level": "WARNING"}})


class TestCommands(unittest.TestCase):
    """测试子命令（小队列）"""

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = tempfile.mkdtemp()
        cls.root = Path(cls.temp_dir)
        cls.config = cls.root / "config.yaml"
        cls.config.write_text(yaml.safe_dump(TINY_CONFIG), encoding="utf-8")
        cls.cohort = cls.root / "cohort"
        assert main(["gen", "-c", str(cls.config), "--seed", "3", "--jobs", "2", "--out", str(cls.cohort)]) == 0

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)

    def _run(self, *argv):
        return main([argv[0], "-c", str(self.config), "--jobs", "1", *argv[1:]])

    def _json(self, path):
        return json.loads(Path(path).read_text(encoding="utf-8"))

    def test_gen_outputs(self):
        for name in ("sessions.csv", "traits.csv", "route_map.json", "couplings.json", "truth.json"):
            self.assertTrue((self.cohort / name).exists(), name)
        manifest = self._json(self.cohort / "manifest.json")
        self.assertEqual(manifest["subcommand"], "gen")
        self.assertEqual(manifest["seed"], 3)
        self.assertIn("traits.csv", manifest["outputs"])
        self.assertEqual(len(list((self.cohort / "telemetry").glob("*.csv"))), 6)

    def test_gen_is_repeatable(self):
        again = self.root / "cohort_again"
        self.assertEqual(self._run("gen", "--seed", "3", "--out", str(again)), 0)
        for name in ("traits.csv", "manifest.json", "telemetry/D02_s1.csv"):
            self.assertEqual((self.cohort / name).read_bytes(), (again / name).read_bytes())

    def test_featurize(self):
        out = self.root / "features"
        code = self._run("featurize", "--data", str(self.cohort), "--variant", "i", "--road", "arterial",
                         "--out", str(out))
        self.assertEqual(code, 0)
        self.assertTrue((out / "features_i_arterial.csv").exists())
        design = self._json(out / "design.json")["arterial"]
        self.assertEqual(design["n_sessions"], 6)
        self.assertEqual(set(design["window_counts"]), {"all", "10", "5"})
        self.assertGreater(design["n_columns"], 0)
        self.assertLessEqual(design["n_columns"], design["n_raw_columns"])
        self.assertIsNotNone(design["cohort_mean_arterial"])

    def test_eval_then_importance(self):
        eval_dir = self.root / "eval"
        code = self._run("eval", "--data", str(self.cohort), "--variant", "i", "--road", "arterial",
                         "--targets", "tmt_a", "--out", str(eval_dir))
        self.assertEqual(code, 0)
        report = self._json(eval_dir / "eval_report.json")
        self.assertEqual([(e["target"], e["model"]) for e in report["entries"]], [("tmt_a", "ridge")])
        self.assertEqual(len(report["entries"][0]["folds"]), 4)
        self.assertEqual(report["inputs"]["targets"], ["tmt_a"])
        self.assertTrue((eval_dir / "eval_table.csv").exists())
        self.assertTrue((eval_dir / "plots" / "i_arterial_ridge_tmt_a.svg").exists())

        imp_dir = self.root / "importance"
        code = self._run("importance", "--eval-dir", str(eval_dir), "--out", str(imp_dir))
        self.assertEqual(code, 0)
        result = self._json(imp_dir / "importance_report.json")
        self.assertEqual(len(result["entries"]) + len(result["notes"]), 1)
        self.assertTrue((imp_dir / "importance_durations.csv").exists())
        self.assertEqual(self._json(imp_dir / "manifest.json")["subcommand"], "importance")

    def test_missing_route_map(self):
        out = self.root / "failed"
        missing = self.root / "missing_route.json"
        code = self._run("featurize", "--data", str(self.cohort), "--route-map", str(missing), "--out", str(out))
        self.assertEqual(code, 1)
        error = self._json(out / "error.json")
        self.assertEqual(error["error"], "FileNotFoundError")
        self.assertEqual(error["path"], str(missing))
        self.assertFalse((out / "manifest.json").exists())

    def test_missing_data(self):
        out = self.root / "no_data"
        self.assertEqual(self._run("eval", "--out", str(out)), 1)
        self.assertEqual(self._json(out / "error.json")["error"], "ConfigError")

    def test_invalid_road_for_variant(self):
        out = self.root / "bad_road"
        code = self._run("featurize", "--data", str(self.cohort), "--variant", "iii", "--road", "arterial",
                         "--out", str(out))
        self.assertEqual(code, 1)

    def test_unknown_target(self):
        out = self.root / "bad_target"
        code = self._run("eval", "--data", str(self.cohort), "--targets", "tmt_c", "--out", str(out))
        self.assertEqual(code, 1)
        self.assertIn("tmt_c", self._json(out / "error.json")["message"])


if __name__ == '__main__':
    unittest.main()
