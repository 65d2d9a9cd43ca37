"""
Tests for segmentation
"""

import json
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))
sys.path.insert(0, str(Path(__file__).parent))

from errors import InsufficientDataError, ValidationError
from helpers import DEG_PER_M, LAT0, LON0, east_points, make_session, simple_route
from segmentation import (
    ARTERIAL,
    OTHER,
    ArterialZone,
    DurationGrid,
    IntersectionZone,
    RoadLabels,
    RouteMap,
    classify_frames,
    cohort_mean_arterial,
    duration_key,
    load_route_map,
    plan_arterial_windows,
    segment_arterial,
    segment_session,
    split_intersection,
)


def _layout(route: RouteMap, brake_in_pass=None):
    """
    0-9 other，10-59 干道，60-69 other，70-79 路口 int1，80-89 other
    """
    far = np.array([[LAT0 + 1.0, LON0 + 1.0]])
    arterial = east_points(np.linspace(100.0, 900.0, 50))
    center = np.array([route.intersections[0].center])
    position = np.vstack([
        np.repeat(far, 10, axis=0),
        arterial,
        np.repeat(far, 10, axis=0),
        np.repeat(center, 10, axis=0),
        np.repeat(far, 10, axis=0),
    ])
    brake = np.zeros(90)
    if brake_in_pass is not None:
        brake[70:80] = brake_in_pass
    return make_session(n=90, position=position, brake=brake)


class TestRouteMap(unittest.TestCase):
    """测试路线校验"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def _zone(self, zone_id, meters_east=0.0, radius=30.0):
        center = tuple(east_points([meters_east], lat=LAT0 - 500 * DEG_PER_M)[0])
        return IntersectionZone(zone_id, center, radius)

    def test_overlapping_intersections(self):
        arterial = simple_route().arterial
        with self.assertRaises(ValidationError):
            RouteMap(arterial, (self._zone("a"), self._zone("b", meters_east=40.0)))

    def test_reserved_and_dotted_ids(self):
        arterial = simple_route().arterial
        for bad in ("arterial", "other", "int.1", ""):
            with self.assertRaises(ValidationError):
                RouteMap(arterial, (self._zone(bad),))

    def test_intersection_on_arterial(self):
        arterial = ArterialZone(((LAT0 - 500 * DEG_PER_M, LON0),), 20.0)
        route = RouteMap(arterial, (self._zone("int1"),))
        self.assertEqual(route.intersection_ids, ("int1",))

    def test_json_round_trip(self):
        route = simple_route(intersections=3)
        path = Path(self.temp_dir) / "route_map.json"
        path.write_text(json.dumps(route.to_dict()), encoding="utf-8")
        self.assertEqual(load_route_map(path), route)

    def test_missing_route_map(self):
        with self.assertRaises(FileNotFoundError) as ctx:
            load_route_map(Path(self.temp_dir) / "missing.json")
        self.assertIn("missing.json", ctx.exception.filename)


class TestClassifyFrames(unittest.TestCase):
    """测试逐帧分区"""

    def test_labels(self):
        route = simple_route()
        labels = classify_frames(_layout(route), route)
        self.assertEqual(len(labels), 90)
        self.assertTrue(np.all(labels.labels[10:60] == ARTERIAL))
        self.assertTrue(np.all(labels.labels[70:80] == "int1"))
        self.assertTrue(np.all(labels.labels[:10] == OTHER))
        self.assertEqual(labels.runs("int1"), [range(70, 80)])
        self.assertEqual(labels.arterial_frames().tolist(), list(range(10, 60)))
        self.assertEqual(labels.warnings, ())

    def test_intersection_wins_over_arterial(self):
        simple = simple_route()
        center = tuple(east_points([500.0])[0])
        route = RouteMap(simple.arterial, (IntersectionZone("int1", center, 30.0),))
        # 每 10 m 一帧，离路口中心 <= 25 m 的是 475..525
        session = make_session(n=80, position=east_points(np.linspace(105.0, 895.0, 80)))
        labels = classify_frames(session, route)
        self.assertEqual(labels.runs("int1"), [range(37, 43)])
        self.assertEqual(labels.runs(ARTERIAL), [range(0, 37), range(43, 80)])
        self.assertEqual(labels.arterial_frames().size, 74)
        windows = segment_arterial(labels, 2)
        np.testing.assert_array_equal(np.concatenate(windows), labels.arterial_frames())

    def test_empty_route_warns(self):
        route = simple_route()
        labels = classify_frames(make_session(n=20), route)
        self.assertTrue(np.all(labels.labels == OTHER))
        self.assertEqual(len(labels.warnings), 1)


class TestDurationGrid(unittest.TestCase):
    """测试时长网格与窗口数"""

    def test_window_counts_for_mean_355(self):
        counts = plan_arterial_windows(DurationGrid())
        self.assertEqual(counts["all"], 1)
        self.assertEqual(counts[60], 6)
        self.assertEqual(counts[30], 12)
        self.assertEqual(counts[3], 118)

    def test_round_half_up(self):
        counts = plan_arterial_windows(DurationGrid(("all", 60), cohort_mean_arterial=90.0))
        self.assertEqual(counts[60], 2)

    def test_at_least_one_window(self):
        counts = plan_arterial_windows(DurationGrid((60,), cohort_mean_arterial=10.0))
        self.assertEqual(counts[60], 1)

    def test_invalid_grids(self):
        for targets in (("all", 30, 60), (60, "all"), ("all", 0), ()):
            with self.assertRaises(ValidationError):
                DurationGrid(targets)

    def test_keys(self):
        self.assertEqual(DurationGrid().keys, ("all", "d60", "d30", "d15", "d10", "d5", "d3"))
        self.assertEqual(duration_key(2.5), "d2.5")
        self.assertEqual(DurationGrid().only_all().targets, ("all",))


class TestSegmentArterial(unittest.TestCase):
    """测试干道切窗"""

    def _labels(self, n_arterial, offset=5):
        labels = np.full(n_arterial + 2 * offset, OTHER, dtype=object)
        labels[offset:offset + n_arterial] = ARTERIAL
        return RoadLabels(labels)

    def test_partition(self):
        labels = self._labels(103)
        for k in (1, 2, 6, 10, 103):
            windows = segment_arterial(labels, k)
            self.assertEqual(len(windows), k)
            np.testing.assert_array_equal(np.concatenate(windows), labels.arterial_frames())
            sizes = [w.size for w in windows]
            self.assertLessEqual(max(sizes) - min(sizes), 1)
            self.assertEqual(sizes, sorted(sizes, reverse=True))

    def test_non_contiguous_arterial_frames(self):
        labels = RoadLabels(np.array([ARTERIAL, OTHER, ARTERIAL, ARTERIAL, OTHER, ARTERIAL]))
        windows = segment_arterial(labels, 2)
        self.assertEqual([w.tolist() for w in windows], [[0, 2], [3, 5]])

    def test_too_few_frames(self):
        with self.assertRaises(InsufficientDataError):
            segment_arterial(self._labels(5), 6)

    def test_cohort_mean(self):
        mean = cohort_mean_arterial([self._labels(50), self._labels(100)], [10.0, 10.0])
        self.assertAlmostEqual(mean, 7.5)


class TestSplitIntersection(unittest.TestCase):
    """测试按松开刹车切分路口"""

    def setUp(self):
        self.route = simple_route()

    def _split(self, brake):
        session = _layout(self.route, brake)
        return split_intersection(session, classify_frames(session, self.route), "int1")

    def test_release_after_last_braking_frame(self):
        split = self._split([0, 0, 0.5, 0.6, 0, 0.4, 0, 0, 0, 0])
        self.assertTrue(split.braked)
        self.assertTrue(split.released)
        self.assertEqual(split.before, range(70, 76))
        self.assertEqual(split.after, range(76, 80))
        self.assertEqual(split.whole, range(70, 80))

    def test_no_braking(self):
        split = self._split(np.zeros(10))
        self.assertFalse(split.braked)
        self.assertEqual(len(split.before), 0)
        self.assertEqual(split.after, range(70, 80))

    def test_below_epsilon_is_not_braking(self):
        split = self._split(np.full(10, 0.01))
        self.assertFalse(split.braked)

    def test_braking_until_exit(self):
        split = self._split(np.full(10, 0.3))
        self.assertFalse(split.released)
        self.assertEqual(split.before, range(70, 80))
        self.assertEqual(len(split.after), 0)

    def test_never_passed(self):
        route = simple_route(intersections=2)
        session = _layout(route)
        with self.assertRaises(InsufficientDataError):
            split_intersection(session, classify_frames(session, route), "int2")


class TestSegmentSession(unittest.TestCase):
    """测试整段分段"""

    def test_segment_set(self):
        route = simple_route(intersections=2)
        session = _layout(route, [0, 0.5, 0, 0, 0, 0, 0, 0, 0, 0])
        grid = DurationGrid(("all", 2, 1), cohort_mean_arterial=5.0)
        segments = segment_session(session, route, grid)

        self.assertEqual(segments.session_id, "D01#1")
        self.assertEqual(len(segments.arterial["all"]), 1)
        self.assertEqual(segments.arterial["all"][0].size, 50)
        self.assertEqual(len(segments.arterial[2]), 3)
        self.assertEqual(len(segments.arterial[1]), 5)
        self.assertEqual(segments.intersections["int1"].before, range(70, 72))
        self.assertIsNone(segments.intersections["int2"])
        self.assertTrue(any("int2" in note for note in segments.notes))
        self.assertEqual(segments.no_brake, ())

    def test_random_sessions(self):
        rng = np.random.default_rng(21)
        route = simple_route()
        far = np.array([[LAT0 + 1.0, LON0 + 1.0]])
        center = np.array([route.intersections[0].center])
        for seed in range(100):
            n_art = int(rng.integers(20, 200))
            cut = int(rng.integers(1, n_art))
            n_pass = int(rng.integers(3, 30))
            gaps = rng.integers(1, 15, size=4)
            arterial = east_points(np.sort(rng.uniform(100.0, 900.0, n_art)))
            position = np.vstack([
                np.repeat(far, gaps[0], axis=0),
                arterial[:cut],
                np.repeat(far, gaps[1], axis=0),
                arterial[cut:],
                np.repeat(far, gaps[2], axis=0),
                np.repeat(center, n_pass, axis=0),
                np.repeat(far, gaps[3], axis=0),
            ])
            n = position.shape[0]
            pass_start = n - gaps[3] - n_pass
            brake = np.zeros(n)
            brake[pass_start:pass_start + n_pass] = (
                rng.uniform(0.0, 1.0, n_pass) * (rng.uniform(size=n_pass) < rng.uniform())
            )
            session = make_session(n=n, seed=seed, position=position, brake=brake)
            grid = DurationGrid(("all", 3, 1), cohort_mean_arterial=rng.uniform(0.5, 2.0) * n_art / 10.0)
            segments = segment_session(session, route, grid)

            labels = classify_frames(session, route)
            self.assertEqual(labels.arterial_frames().size, n_art)
            for target, k in plan_arterial_windows(grid).items():
                windows = segments.arterial[target]
                self.assertEqual(len(windows), k)
                np.testing.assert_array_equal(np.concatenate(windows), labels.arterial_frames())
                sizes = [w.size for w in windows]
                self.assertLessEqual(max(sizes) - min(sizes), 1)

            split = segments.intersections["int1"]
            self.assertEqual(split.whole, range(pass_start, pass_start + n_pass))
            self.assertEqual(split.before.stop, split.after.start)
            after = brake[split.after.start:split.after.stop]
            self.assertTrue(np.all(after <= 0.02))
            if split.braked:
                self.assertGreater(brake[split.before.stop - 1], 0.02)
            else:
                self.assertEqual(len(split.before), 0)

    def test_insufficient_arterial_frames_is_none(self):
        route = simple_route()
        session = _layout(route)
        grid = DurationGrid(("all", 1), cohort_mean_arterial=100.0)
        segments = segment_session(session, route, grid)
        self.assertIsNotNone(segments.arterial["all"])
        self.assertIsNone(segments.arterial[1])
        self.assertEqual(segments.no_brake, ("int1",))


if __name__ == '__main__':
    unittest.main()
