"""
Tests for reporting
"""

import errno
import json
import math
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from errors import FoldError, ParseError
from models import ModelKind
from reporting import (
    ERROR_FILE,
    MANIFEST_FILE,
    TOOL_VERSION,
    ArtifactStore,
    RunManifest,
    format_float,
    json_ready,
    scatter_svg,
    write_error,
    write_manifest,
)


class TestJsonReady(unittest.TestCase):
    """测试 JSON 转换"""

    def test_numpy_enum_and_nan(self):
        data = {
            "a": np.float64(1.5),
            "b": np.int64(3),
            "c": np.array([1.0, np.nan]),
            "d": ModelKind.RIDGE,
            "e": (np.bool_(True), math.inf),
            60: "x",
        }
        self.assertEqual(json_ready(data), {
            "a": 1.5, "b": 3, "c": [1.0, None], "d": "ridge", "e": [True, None], "60": "x",
        })

    def test_format_float(self):
        self.assertEqual(format_float(0.1), "0.1")
        self.assertEqual(format_float(None), "")
        self.assertEqual(format_float(math.nan), "")
        self.assertEqual(float(format_float(1 / 3)), 1 / 3)


class TestArtifactStore(unittest.TestCase):
    """测试输出目录"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.out = Path(self.temp_dir) / "out"

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_write_json_is_sorted_and_atomic(self):
        store = ArtifactStore(self.out)
        store.write_json("nested/result.json", {"b": 1, "a": [np.float32(0.5)]})
        text = (self.out / "nested" / "result.json").read_text(encoding="utf-8")
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertEqual(store.read_json("nested/result.json"), {"a": [0.5], "b": 1})
        self.assertEqual(list(self.out.rglob("*.tmp")), [])
        self.assertEqual(store.written, ["nested/result.json"])

    def test_write_csv(self):
        store = ArtifactStore(self.out)
        store.write_csv("table.csv", ["name", "value"], [["x", 0.25], ["y", None], ["z", math.nan]])
        lines = (self.out / "table.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines, ["name,value", "x,0.25", "y,", "z,"])

    def test_rewrite_same_content(self):
        store = ArtifactStore(self.out)
        store.write_json("a.json", {"k": 1})
        first = (self.out / "a.json").read_bytes()
        store.write_json("a.json", {"k": 1})
        self.assertEqual((self.out / "a.json").read_bytes(), first)
        self.assertEqual(store.written, ["a.json"])

    def test_manifest_lists_outputs(self):
        store = ArtifactStore(self.out)
        store.write_json("z.json", {})
        store.write_csv("a.csv", ["h"], [])
        write_manifest(store, RunManifest("eval", "config/config.yaml", 7, {"variants": ["i"]}))
        manifest = store.read_json(MANIFEST_FILE)
        self.assertEqual(manifest["outputs"], ["a.csv", "z.json"])
        self.assertEqual(manifest["seed"], 7)
        self.assertEqual(manifest["subcommand"], "eval")
        self.assertEqual(manifest["tool_version"], TOOL_VERSION)
        self.assertNotIn("timestamp", json.dumps(manifest))

    def test_error_file(self):
        missing = FileNotFoundError(errno.ENOENT, "Route map not found", "/data/route_map.json")
        write_error(self.out, missing, "featurize")
        payload = json.loads((self.out / ERROR_FILE).read_text(encoding="utf-8"))
        self.assertEqual(payload["error"], "FileNotFoundError")
        self.assertEqual(payload["path"], "/data/route_map.json")
        self.assertEqual(payload["subcommand"], "featurize")

        write_error(self.out, ParseError("bad value", line=4, path="D01_s1.csv"), "eval")
        payload = json.loads((self.out / ERROR_FILE).read_text(encoding="utf-8"))
        self.assertEqual(payload["line"], 4)
        self.assertEqual(payload["path"], "D01_s1.csv")

        write_error(self.out, FoldError("singular", 3, "D04"), "eval")
        payload = json.loads((self.out / ERROR_FILE).read_text(encoding="utf-8"))
        self.assertEqual((payload["fold_index"], payload["test_driver"]), (3, "D04"))

    def test_scatter_svg(self):
        store = ArtifactStore(self.out)
        path = scatter_svg(store, "plots/tmt_a.svg", [1.0, 2.0, 3.0], [1.2, 1.9, 3.4], "tmt_a / ridge")
        self.assertTrue(path.exists())
        self.assertIn("<svg", path.read_text(encoding="utf-8"))
        self.assertIn("plots/tmt_a.svg", store.written)


if __name__ == '__main__':
    unittest.main()
