import dataclasses
import json

import numpy as np
import pytest

from ctsdg import synth
from ctsdg.errors import ConfigError
from ctsdg.frenet import PASS, YIELD
from ctsdg.synth import (CausalRecord, DomainSpec, DriverLatent, EventLatent,
                         SPEC_LIBRARY, causal_features, first_crossing_label,
                         gen_domain_dataset, label_from_causal, label_intention,
                         sample_domain, sample_drivers, sample_event,
                         simulate_interaction)


class TestSampleDomain:
    def test_ft2_values(self):
        spec = SPEC_LIBRARY["ft2"]
        assert spec.intersect_angle == pytest.approx(90.0)
        assert spec.speed_limit == pytest.approx(11.176)  # 25 mph
        assert spec.rule == "stop_sign"

    def test_no_jitter_returns_exact_entry(self, rng):
        spec = sample_domain({"ft1": SPEC_LIBRARY["ft1"]}, rng, jitter=False)
        assert spec == SPEC_LIBRARY["ft1"]

    def test_uniform_over_library(self, rng):
        n = 10_000
        counts = {}
        for _ in range(n):
            spec = sample_domain(SPEC_LIBRARY, rng)
            counts[spec.domain_id] = counts.get(spec.domain_id, 0) + 1
        p = 1 / len(SPEC_LIBRARY)
        sigma = np.sqrt(n * p * (1 - p))
        for c in counts.values():
            assert abs(c - n * p) < 3 * sigma

    def test_angle_bounds_enforced(self):
        with pytest.raises(ConfigError):
            DomainSpec("bad", 0.0, 10.0, 10.0, "stop_sign")


class TestSampleDrivers:
    def test_symmetric_mean(self, rng):
        draws = [sample_drivers(SPEC_LIBRARY["ft1"], rng)[0].aggressiveness
                 for _ in range(10_000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.02)

    def test_degenerate_concentration_is_tight(self, rng):
        draws = [sample_drivers(SPEC_LIBRARY["ft1"], rng,
                                concentration=1e6)[0].aggressiveness
                 for _ in range(100)]
        assert np.std(draws) < 1e-2

    def test_offset_detectable(self, rng):
        base = np.array([sample_drivers(SPEC_LIBRARY["ft1"], rng)[0].aggressiveness
                         for _ in range(10_000)])
        shifted = np.array([sample_drivers(SPEC_LIBRARY["zs"], rng, 0.1)[0].aggressiveness
                            for _ in range(10_000)])
        # two-sample t statistic
        se = np.sqrt(base.var() / base.size + shifted.var() / shifted.size)
        t = (shifted.mean() - base.mean()) / se
        assert t > 5.0


class TestLabel:
    def event(self, gap_a=30.0, gap_b=30.0, v_a=8.0, v_b=8.0):
        return EventLatent(gap_a, gap_b, v_a, v_b, horizon=200)

    def test_symmetric_tie_yields(self):
        o = DriverLatent(0.5, 0.5)
        assert label_intention(self.event(), o, o) == YIELD

    def test_dominant_aggressiveness_passes(self):
        assert label_intention(self.event(), DriverLatent(1.0, 0.5),
                               DriverLatent(0.0, 0.5)) == PASS

    def test_agrees_with_duplicate_formula(self, rng):
        for _ in range(500):
            e = self.event(*rng.uniform(10, 60, 2), *rng.uniform(2, 15, 2))
            o_a = DriverLatent(*rng.uniform(0, 1, 2))
            o_b = DriverLatent(*rng.uniform(0, 1, 2))
            # independent re-implementation of the scoring rule
            score = (1.0 * (o_a.aggressiveness - o_b.aggressiveness)
                     + 1.0 * (e.init_gap_b - e.init_gap_a) / synth.MAX_GAP
                     + 0.5 * (e.init_speed_a - e.init_speed_b) / synth.V_REF)
            expected = PASS if score > 0 else YIELD
            assert label_intention(e, o_a, o_b) == expected


class TestSimulate:
    def test_aggressive_driver_passes(self, rng):
        d = SPEC_LIBRARY["ft2"]
        e = EventLatent(30.0, 30.0, 8.0, 8.0, 200)
        o_a, o_b = DriverLatent(0.95, 0.5), DriverLatent(0.05, 0.5)
        sample, record = simulate_interaction(d, e, o_a, o_b, rng, noise=0.0)
        assert sample.y == PASS
        # the window ends before the crossing: both vehicles still short of it
        assert np.all(sample.x[:, 0] < 0.0)
        assert np.all(sample.x[:, 2] < 0.0)
        # the passer closes in on the conflict point over the window
        assert sample.x[-1, 0] > sample.x[0, 0]

    def test_window_ends_one_lead_before_crossing(self, rng):
        """With zero lead the passer's s reaches 0 at the last step."""
        d = SPEC_LIBRARY["ft2"]
        e = EventLatent(30.0, 30.0, 8.0, 8.0, 200)
        o_a, o_b = DriverLatent(0.95, 0.5), DriverLatent(0.05, 0.5)
        sample, _ = simulate_interaction(d, e, o_a, o_b, rng, noise=0.0, lead=0)
        assert first_crossing_label(sample.x) == PASS
        assert np.argmax(sample.x[:, 0] >= 0.0) == sample.x.shape[0] - 1

    def test_window_shape(self, rng):
        d = SPEC_LIBRARY["ft1"]
        e = sample_event(d, rng)
        o_a, o_b = sample_drivers(d, rng)
        sample, _ = simulate_interaction(d, e, o_a, o_b, rng)
        assert sample.x.shape == (10, 4)

    def test_emitted_label_matches_first_crossing(self, rng):
        d = SPEC_LIBRARY["ft3"]
        checked = 0
        while checked < 200:
            e = sample_event(d, rng)
            o_a, o_b = sample_drivers(d, rng)
            try:
                sample, _ = simulate_interaction(d, e, o_a, o_b, rng)
            except synth.GenerationError:
                continue
            assert first_crossing_label(sample.x) in (None, sample.y)
            checked += 1


class TestGenDataset:
    def test_exact_class_balance(self):
        rng = np.random.default_rng(3)
        ds, records = gen_domain_dataset(SPEC_LIBRARY["ft1"], 50, rng)
        labels = [s.y for s in ds.samples]
        assert len(ds) == 100
        assert sum(labels) == 50
        assert set(records) == {s.sample_id for s in ds.samples}

    def test_same_seed_identical(self):
        a, _ = gen_domain_dataset(SPEC_LIBRARY["ft2"], 10, np.random.default_rng(9))
        b, _ = gen_domain_dataset(SPEC_LIBRARY["ft2"], 10, np.random.default_rng(9))
        assert all(x.sample_id == y.sample_id and x.y == y.y
                   and np.array_equal(x.x, y.x)
                   for x, y in zip(a.samples, b.samples))

    def test_domains_are_shifted(self):
        """A linear probe on raw features separates the two domains."""
        rng = np.random.default_rng(5)
        a, _ = gen_domain_dataset(SPEC_LIBRARY["ft1"], 50, rng)
        b, _ = gen_domain_dataset(SPEC_LIBRARY["zs"], 50, rng)
        x = np.array([s.x.ravel() for s in a.samples + b.samples])
        y = np.array([0] * len(a) + [1] * len(b))
        # logistic regression via plain gradient descent
        x = (x - x.mean(0)) / (x.std(0) + 1e-9)
        w = np.zeros(x.shape[1])
        bias = 0.0
        for _ in range(500):
            p = 1 / (1 + np.exp(-(x @ w + bias)))
            w -= 0.5 * x.T @ (p - y) / len(y)
            bias -= 0.5 * float(np.mean(p - y))
        acc = np.mean((x @ w + bias > 0) == (y == 1))
        assert acc > 0.70


class TestLaneOffset:
    def test_sign_follows_gap_difference_and_domain(self):
        e_pass = EventLatent(20.0, 40.0, 8.0, 8.0, 200)  # A well ahead
        assert synth._lane_offset(SPEC_LIBRARY["ft1"], e_pass) > 0
        assert synth._lane_offset(SPEC_LIBRARY["ft2"], e_pass) < 0

    def test_mean_lateral_separates_classes_per_domain(self):
        """The styled lane position is label-predictive with a
        domain-dependent sign: a shortcut that does not transfer."""
        rng = np.random.default_rng(21)
        for name, sign in (("ft1", 1.0), ("ft2", -1.0)):
            ds, _ = gen_domain_dataset(SPEC_LIBRARY[name], 40, rng)
            mean_d = {y: np.mean([s.x[:, [1, 3]].mean() for s in ds.samples
                                  if s.y == y]) for y in (PASS, YIELD)}
            assert sign * (mean_d[PASS] - mean_d[YIELD]) > 0


class TestCausalInvariance:
    def test_label_depends_only_on_xc(self, rng):
        for _ in range(300):
            d = sample_domain(SPEC_LIBRARY, rng)
            e = sample_event(d, rng)
            o_a, o_b = sample_drivers(d, rng)
            x_c = causal_features(e, o_a, o_b)
            assert label_intention(e, o_a, o_b) == label_from_causal(x_c)

    def test_xc_bit_identical_across_domains(self, rng):
        for _ in range(100):
            e = sample_event(SPEC_LIBRARY["ft1"], rng)
            o_a, o_b = sample_drivers(SPEC_LIBRARY["ft1"], rng)
            baseline = causal_features(e, o_a, o_b)
            for name in SPEC_LIBRARY:
                assert causal_features(e, o_a, o_b) == baseline

    def test_xnc_depends_on_domain(self, rng):
        e = sample_event(SPEC_LIBRARY["ft1"], rng)
        nc = {name: synth._nuisance(SPEC_LIBRARY[name], e) for name in SPEC_LIBRARY}
        assert len(set(nc.values())) == len(nc)


class TestSidecar:
    def test_round_trip(self, tmp_path):
        records = {"a-0": CausalRecord((0.1, -0.2, 0.3), (45.0, 0.6, 0.25))}
        p = tmp_path / "sidecar.jsonl"
        synth.save_sidecar(records, p)
        loaded = synth.load_sidecar(p)
        assert loaded["a-0"].x_c == pytest.approx(records["a-0"].x_c)
        assert loaded["a-0"].x_nc == pytest.approx(records["a-0"].x_nc)
