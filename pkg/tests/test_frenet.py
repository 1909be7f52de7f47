import json
import math

import numpy as np
import pytest

from ctsdg import frenet
from ctsdg.errors import DataError, GeometryError
from ctsdg.frenet import (FrenetState, Polyline, SequenceSample, build_sequence,
                          load_jsonl, path_conflict_point, project_to_frenet,
                          save_jsonl)


def straight_x(length=10.0, n=5):
    xs = np.linspace(-length, length, n)
    return Polyline(tuple((float(x), 0.0) for x in xs))


class TestConflictPoint:
    def test_perpendicular_cross_at_origin(self):
        a = Polyline(((-1.0, 0.0), (1.0, 0.0)))
        b = Polyline(((0.0, -1.0), (0.0, 1.0)))
        x, y = path_conflict_point(a, b)
        assert (x, y) == pytest.approx((0.0, 0.0))

    def test_hand_geometry(self):
        a = Polyline(((0.0, 0.0), (2.0, 0.0)))
        b = Polyline(((1.0, -1.0), (1.0, 1.0)))
        assert path_conflict_point(a, b) == pytest.approx((1.0, 0.0))

    def test_no_intersection_raises(self):
        a = Polyline(((0.0, 0.0), (1.0, 0.0)))
        b = Polyline(((0.0, 1.0), (1.0, 1.0)))
        with pytest.raises(GeometryError):
            path_conflict_point(a, b)

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(30):
            # random polyline crossing the x-axis, against the x-axis itself
            ys = np.concatenate([rng.uniform(0.5, 2.0, 3), rng.uniform(-2.0, -0.5, 3)])
            xs = np.sort(rng.uniform(-5.0, 5.0, 6))
            b = Polyline(tuple(zip(xs, ys)))
            a = Polyline(((-10.0, 0.0), (10.0, 0.0)))
            hits = []
            for (p0, p1) in zip(a.points, a.points[1:]):
                for (q0, q1) in zip(b.points, b.points[1:]):
                    hit = frenet._segment_intersection(p0, p1, q0, q1)
                    if hit is not None:
                        hits.append(hit[1])
            assert hits, "construction guarantees a crossing"
            expected = min(hits, key=lambda p: p[0])  # a runs along +x
            got = path_conflict_point(a, b)
            assert got == pytest.approx(tuple(expected), abs=1e-9)


class TestProjection:
    def test_point_on_path_has_zero_d(self):
        path = straight_x()
        st = project_to_frenet((3.0, 0.0), path, origin_s=0.0)
        assert st.d == pytest.approx(0.0, abs=1e-12)

    def test_conflict_point_is_origin(self):
        path = straight_x(length=10.0)
        origin = project_to_frenet((2.0, 0.0), path, 0.0).s
        st = project_to_frenet((2.0, 0.0), path, origin)
        assert (st.s, st.d) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_straight_line_analytic(self):
        # path along +x starting at x=0; origin at arclength 5 (x=5)
        path = Polyline(((0.0, 0.0), (10.0, 0.0)))
        st = project_to_frenet((3.0, 2.0), path, origin_s=5.0)
        assert (st.s, st.d) == pytest.approx((-2.0, 2.0))

    def test_projection_beyond_ends_extends(self):
        path = Polyline(((0.0, 0.0), (1.0, 0.0)))
        st = project_to_frenet((5.0, -1.0), path, 0.0)
        assert (st.s, st.d) == pytest.approx((5.0, -1.0))

    def test_reflection_flips_d_only(self, rng):
        path = Polyline(((0.0, 0.0), (20.0, 0.0)))
        for _ in range(20):
            p = (rng.uniform(0, 20), rng.uniform(-3, 3))
            st = project_to_frenet(p, path, 4.0)
            mirrored = project_to_frenet((p[0], -p[1]), path, 4.0)
            assert mirrored.s == pytest.approx(st.s, abs=1e-9)
            assert mirrored.d == pytest.approx(-st.d, abs=1e-9)

    def test_forward_motion_increases_s(self):
        path = Polyline(((0.0, 0.0), (5.0, 5.0), (10.0, 5.0)))
        arcs = np.linspace(0.5, 11.0, 15)
        ss = []
        for t in np.linspace(0.1, 0.9, 12):
            p = (10.0 * t, 5.0 * min(2 * t, 1.0))
            ss.append(project_to_frenet(p, path, 0.0).s)
        assert all(b > a for a, b in zip(ss, ss[1:]))

    def test_rigid_transform_invariance(self, rng):
        pts = ((0.0, 0.0), (4.0, 1.0), (8.0, -1.0), (12.0, 0.5))
        path = Polyline(pts)
        theta, tx, ty = 0.7, 3.0, -2.0
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])

        def xf(p):
            q = rot @ np.asarray(p) + [tx, ty]
            return (float(q[0]), float(q[1]))

        path2 = Polyline(tuple(xf(p) for p in pts))
        for _ in range(20):
            p = (rng.uniform(0, 12), rng.uniform(-2, 2))
            st1 = project_to_frenet(p, path, 2.0)
            st2 = project_to_frenet(xf(p), path2, 2.0)
            assert st2.s == pytest.approx(st1.s, abs=1e-9)
            assert st2.d == pytest.approx(st1.d, abs=1e-9)


class TestBuildSequence:
    def setup_method(self):
        self.path_a = Polyline(((-20.0, 0.0), (20.0, 0.0)))
        self.path_b = Polyline(((0.0, -20.0), (0.0, 20.0)))

    def test_window_shape(self):
        track_a = [(-10.0 + i, 0.0) for i in range(10)]
        track_b = [(0.0, -10.0 + i) for i in range(10)]
        x = build_sequence(track_a, track_b, self.path_a, self.path_b, 10)
        assert x.shape == (10, 4)

    def test_stationary_vehicle(self):
        track_a = [(-5.0, 0.0)] * 10
        track_b = [(0.0, -10.0 + i) for i in range(10)]
        x = build_sequence(track_a, track_b, self.path_a, self.path_b, 10)
        assert np.allclose(x[:, 0], -5.0)
        assert np.allclose(x[:, 1], 0.0)

    def test_matches_pointwise_projection(self, rng):
        track_a = [(float(-10 + 2 * i), float(rng.uniform(-1, 1))) for i in range(12)]
        track_b = [(float(rng.uniform(-1, 1)), float(-12 + 2 * i)) for i in range(12)]
        x = build_sequence(track_a, track_b, self.path_a, self.path_b, 10)
        origin_a = frenet.arclength_of_point(self.path_a, (0.0, 0.0))
        origin_b = frenet.arclength_of_point(self.path_b, (0.0, 0.0))
        for row, (pa, pb) in enumerate(zip(track_a[-10:], track_b[-10:])):
            fa = project_to_frenet(pa, self.path_a, origin_a)
            fb = project_to_frenet(pb, self.path_b, origin_b)
            np.testing.assert_allclose(x[row], [fa.s, fa.d, fb.s, fb.d], atol=1e-12)

    def test_short_track_rejected(self):
        with pytest.raises(DataError):
            build_sequence([(0.0, 1.0)] * 5, [(1.0, 0.0)] * 5,
                           self.path_a, self.path_b, 10)


class TestJsonl:
    def test_round_trip(self, tmp_path, rng):
        samples = [SequenceSample(f"s{i:02d}", "ft1", i % 2, rng.normal(size=(10, 4)))
                   for i in range(5)]
        p = tmp_path / "data.jsonl"
        save_jsonl(samples, p)
        loaded = load_jsonl(p, expect_window=10)
        assert [s.sample_id for s in loaded] == [s.sample_id for s in samples]
        for a, b in zip(samples, loaded):
            np.testing.assert_array_equal(a.x, b.x)
            assert a.y == b.y and a.domain_id == b.domain_id

    def test_loader_validates_window(self, tmp_path, rng):
        p = tmp_path / "bad.jsonl"
        save_jsonl([SequenceSample("a", "d", 0, rng.normal(size=(7, 4)))], p)
        with pytest.raises(DataError):
            load_jsonl(p, expect_window=10)

    def test_loader_rejects_nonfinite(self, tmp_path):
        p = tmp_path / "nan.jsonl"
        row = {"sample_id": "a", "domain_id": "d", "y": 0,
               "x": [[float("nan"), 0, 0, 0]] * 10}
        p.write_text(json.dumps(row).replace("NaN", "NaN") + "\n")
        with pytest.raises(DataError):
            load_jsonl(p)
