import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointaoa.array_signal import ArrayGeometry, SourceScene, fit_feature_stats, synthesize_snapshots
from jointaoa.classifier import NetworkSpec, init_network
from jointaoa.estimator import (
    Ensemble,
    JointEstimate,
    assemble_spectrum,
    count_peaks,
    default_thresholds,
    detect_peaks,
    estimate,
    estimate_record,
    find_peaks,
    optimize_threshold,
)
from jointaoa.framework import Framework, active_labels, build_grid, generate_framework, target_vector

G6 = build_grid(-6, 6, 6)
G60 = build_grid(-60, 60, 60)


def ideal_predictions(fw, aoas):
    act = active_labels(fw.grid, aoas)
    return [target_vector(ls, act) for ls in fw.labelsets]


def random_softmax(rng, size):
    z = rng.normal(scale=3.0, size=size)
    e = np.exp(z - z.max())
    return e / e.sum()


class TestAssemble:
    def test_all_empty_predictions(self):
        fw = generate_framework(G60, 3, 5, seed=0)
        preds = [np.eye(s)[0] for s in fw.output_sizes()]
        assert not assemble_spectrum(fw, preds).any()

    def test_small_table_topology(self):
        grid = build_grid(0, 4, 4)
        fw = Framework(grid, 2, (((1, 2), (3, 4)), ((1, 3), (2, 4))))
        # subsets: (), (a,), (b,), (a, b)
        preds = [np.eye(4)[1], np.eye(4)[0], np.eye(4)[3], np.eye(4)[0]]
        P = assemble_spectrum(fw, preds)
        np.testing.assert_allclose(P, [1.0, 0.0, 0.5, 0.0])

    def test_single_layer_masses(self):
        grid = build_grid(0, 2, 2)
        fw = Framework(grid, 2, (((1, 2),),))
        P = assemble_spectrum(fw, [np.array([0.0, 0.6, 0.0, 0.4])])
        np.testing.assert_allclose(P, [1.0, 0.4])

    def test_wrong_count(self):
        fw = generate_framework(G60, 3, 1, seed=0)
        with pytest.raises(ValueError):
            assemble_spectrum(fw, [np.ones(8) / 8])

    def test_ideal_predictions_give_indicator(self):
        fw = generate_framework(G60, 3, 5, seed=3)
        aoas = [-33.3, 0.1, 0.9, 47.0]
        P = assemble_spectrum(fw, ideal_predictions(fw, aoas))
        expected = np.zeros(60)
        expected[[l - 1 for l in active_labels(G60, aoas)]] = 1.0
        np.testing.assert_array_equal(P, expected)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 40), st.integers(1, 5), st.integers(1, 5))
    def test_bounded(self, seed, M, k, L):
        k = min(k, M - 1)
        rng = np.random.default_rng(seed)
        fw = generate_framework(build_grid(0, M, M), k, L, seed=seed)
        P = assemble_spectrum(fw, [random_softmax(rng, s) for s in fw.output_sizes()])
        assert np.all(P >= 0) and np.all(P <= 1 + 1e-12)


class TestPeaks:
    def test_two_peaks(self):
        est = detect_peaks([0, 0.9, 0, 0, 0.8, 0], 0.5, G6)
        assert est.q_hat == 2 and est.aoas_deg == [-3.0, 3.0]

    def test_zero_spectrum(self):
        assert detect_peaks(np.zeros(6), 0.1, G6).q_hat == 0

    def test_plateau_midpoint(self):
        est = detect_peaks([0, 0.9, 0.9, 0, 0, 0], 0.5, G6)
        assert est.q_hat == 1 and est.aoas_deg == [-2.0]

    def test_edge_peaks_one_sided(self):
        est = detect_peaks([0.9, 0, 0, 0, 0.2, 0.7], 0.5, G6)
        assert est.aoas_deg == [-5.0, 5.0]

    def test_unequal_neighbours_single_peak(self):
        est = detect_peaks([0, 0.9, 0.8, 0, 0, 0], 0.5, G6)
        assert est.aoas_deg == [-3.0]

    def test_strict_threshold(self):
        assert detect_peaks([0, 0.5, 0, 0, 0, 0], 0.5, G6).q_hat == 0
        assert detect_peaks([0, 1.0, 0, 0, 0, 0], 1.0, G6).q_hat == 0

    def test_contract(self):
        with pytest.raises(ValueError):
            detect_peaks(np.zeros(6), 1.5, G6)
        with pytest.raises(ValueError):
            detect_peaks(np.zeros(5), 0.5, G6)

    def test_flat_spectrum_is_one_peak(self):
        assert [(p.start, p.stop) for p in find_peaks(np.full(6, 0.7))] == [(0, 6)]

    @settings(max_examples=200)
    @given(st.lists(st.sampled_from([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]), min_size=6, max_size=6), st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_threshold(self, values, t1, t2):
        lo, hi = sorted((t1, t2))
        a, b = detect_peaks(values, lo, G6), detect_peaks(values, hi, G6)
        assert b.q_hat <= a.q_hat

    @settings(max_examples=200)
    @given(st.lists(st.floats(0, 1), min_size=60, max_size=60), st.floats(0, 1))
    def test_estimates_on_centres_or_midpoints(self, values, t):
        est = detect_peaks(values, t, G60)
        for a in est.aoas_deg:
            assert -60 <= a < 60
            doubled = 2 * (a + 59)  # 0, 2, 4, ... on centres; odd on midpoints of runs of two
            assert abs(doubled - round(doubled)) < 1e-9
        assert est.aoas_deg == sorted(est.aoas_deg)

    def test_count_peaks_matches_detect(self):
        rng = np.random.default_rng(0)
        spectra = rng.choice([0, 0.3, 0.6, 0.9], size=(50, 60))
        levels = [0.1, 0.5, 0.8]
        counts = count_peaks(spectra, levels)
        for b in range(50):
            for c, t in enumerate(levels):
                assert counts[b, c] == detect_peaks(spectra[b], t, G60).q_hat


class TestThreshold:
    def test_default_candidates(self):
        levels = default_thresholds()
        assert len(levels) == 100 and levels[0] == 0.01 and levels[-1] == 1.0
        assert default_thresholds(include_zero=True)[0] == 0.0

    def test_single_spectrum(self):
        res = optimize_threshold([[0, 0.3, 0]], [1])
        assert res.level == 0.01
        assert res.correct_counts[:29] == [1] * 29 and res.correct_counts[29:] == [0] * 71

    def test_ties_pick_lowest(self):
        spectra = np.tile([0, 1.0, 0, 0, 0.95, 0], (3, 1))
        res = optimize_threshold(spectra, [2, 2, 2], [0.1, 0.2, 0.3])
        assert res.level == 0.1 and res.correct_counts == [3, 3, 3]

    def test_picks_separating_level(self):
        spectra = np.array([[0, 0.6, 0, 0.3, 0, 0], [0, 0.7, 0, 0.2, 0, 0.8]])
        res = optimize_threshold(spectra, [1, 2])
        assert 0.3 <= res.level < 0.6
        assert res.correct_count == 2

    def test_degenerate_warns(self):
        with pytest.warns(RuntimeWarning):
            res = optimize_threshold(np.zeros((4, 6)), [1, 1, 0, 2])
        assert res.level == 0.01

    def test_errors(self):
        with pytest.raises(ValueError):
            optimize_threshold([[0, 1, 0]], [1], [])
        with pytest.raises(ValueError):
            optimize_threshold([[0, 1, 0]], [1], [0.5, 0.2])
        with pytest.raises(ValueError):
            optimize_threshold([[0, 1, 0]], [1, 2])

    @settings(max_examples=50)
    @given(st.integers(0, 2**31))
    def test_reported_count_reproduces(self, seed):
        rng = np.random.default_rng(seed)
        spectra = rng.uniform(size=(20, 6))
        q = rng.integers(0, 4, size=20)
        res = optimize_threshold(spectra, q)
        again = sum(detect_peaks(s, res.level, G6).q_hat == qq for s, qq in zip(spectra, q))
        assert again == res.correct_count == max(res.correct_counts)


class TestIdealClassifierDecoding:
    @settings(max_examples=100)
    @given(st.lists(st.floats(-60, 60, exclude_max=True), min_size=1, max_size=6))
    def test_well_separated_sources_recovered(self, aoas):
        aoas = sorted(aoas)
        fw = generate_framework(G60, 3, 3, seed=1)
        P = assemble_spectrum(fw, ideal_predictions(fw, aoas))
        est = detect_peaks(P, 0.5, G60)
        if all(b - a >= 4.0 for a, b in zip(aoas, aoas[1:])):
            assert est.q_hat == len(aoas)
            assert np.max(np.abs(np.array(est.aoas_deg) - aoas)) <= 1.0 + 1e-12
        assert est.q_hat <= len(aoas)

    def test_shared_segment_loses_a_source(self):
        fw = generate_framework(G60, 3, 3, seed=1)
        P = assemble_spectrum(fw, ideal_predictions(fw, [10.2, 11.5]))
        assert detect_peaks(P, 0.5, G60).q_hat == 1


class TestEnsemble:
    def make(self, tmp_path=None):
        grid = build_grid(-60, 60, 12)
        fw = generate_framework(grid, 3, 2, seed=4)
        nets = [init_network(NetworkSpec(16, (5,), s), j) for j, s in enumerate(fw.output_sizes())]
        stats = fit_feature_stats(np.random.default_rng(0).normal(size=(10, 16)))
        return fw, Ensemble(fw, nets, stats)

    def test_save_load(self, tmp_path):
        fw, ens = self.make()
        ens.save(tmp_path / "ens")
        back = Ensemble.load(tmp_path / "ens")
        assert back.framework.digest() == fw.digest()
        X = np.random.default_rng(1).normal(size=(3, 16))
        for a, b in zip(ens.predict(X), back.predict(X)):
            np.testing.assert_array_equal(a, b)

    def test_load_rejects_foreign_framework(self, tmp_path):
        fw, ens = self.make()
        ens.save(tmp_path / "ens")
        other = generate_framework(fw.grid, 3, 2, seed=5)
        (tmp_path / "ens" / "framework.json").write_text(json.dumps(other.to_dict()))
        with pytest.raises(ValueError):
            Ensemble.load(tmp_path / "ens")

    def test_estimate_chain_matches_batch(self):
        fw, ens = self.make()
        geom = ArrayGeometry(4, 0.5)
        batch = synthesize_snapshots(geom, SourceScene.from_snr([-20.0, 30.0], 10.0), 50, seed=2)
        est = estimate(ens, fw, ens.stats, batch, 0.3)
        spectrum = ens.spectra(batch.snapshots[None])[0]
        assert est == detect_peaks(spectrum, 0.3, fw.grid)
        other = generate_framework(fw.grid, 3, 2, seed=9)
        with pytest.raises(ValueError):
            estimate(ens, other, ens.stats, batch, 0.3)

    def test_mismatched_networks(self):
        fw, ens = self.make()
        with pytest.raises(ValueError):
            Ensemble(fw, ens.networks[:-1], ens.stats)


def test_estimate_record():
    line = estimate_record(3, 2, [5.0, -1.0], JointEstimate(1, [0.0]), threshold=0.2, method="mlf")
    rec = json.loads(line)
    assert rec == {
        "method": "mlf",
        "instance_id": 3,
        "q_true": 2,
        "aoas_true": [-1.0, 5.0],
        "q_hat": 1,
        "aoas_hat": [0.0],
        "threshold": 0.2,
    }
    assert "spectrum" in json.loads(estimate_record(0, 0, [], JointEstimate(0), spectrum=[0.1]))


def test_joint_estimate_invariant():
    with pytest.raises(ValueError):
        JointEstimate(2, [1.0])
    assert JointEstimate(2, [3.0, -1.0]).aoas_deg == [-1.0, 3.0]
