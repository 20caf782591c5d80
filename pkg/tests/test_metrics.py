import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from globalseg.metrics import (
    EvalSettings,
    MetricReport,
    apply_mapping,
    cooccurrence,
    evaluate,
    f1,
    hungarian_match,
    mof,
    precision_recall,
)


def brute_force_assignment(M):
    """Best total over injective maps from the smaller side into the larger."""
    r, c = M.shape
    if r <= c:
        return max(sum(M[i, p[i]] for i in range(r)) for p in itertools.permutations(range(c), r))
    return brute_force_assignment(M.T)


def labels_from_counts(M):
    """Prediction / ground-truth sequences whose non-background co-occurrence equals M."""
    pred, gt = [], []
    for (i, j), n in np.ndenumerate(M):
        pred += [i + 1] * int(n)
        gt += [j + 1] * int(n)
    return [np.array(pred, dtype=np.int64)], [np.array(gt, dtype=np.int64)]


class TestHungarian:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.data())
    def test_matches_brute_force(self, r, c, data):
        M = data.draw(arrays(np.int64, (r, c), elements=st.integers(0, 9)))
        pred, gt = labels_from_counts(M)
        match = hungarian_match(pred, gt, r, c)
        assert match.matched_frames == brute_force_assignment(M)

    def test_mapping_is_injective(self):
        rng = np.random.default_rng(0)
        pred, gt = [rng.integers(0, 8, 200)], [rng.integers(0, 6, 200)]
        match = hungarian_match(pred, gt, 7, 5)
        matched = [v for v in match.mapping.values() if v]
        assert len(matched) == len(set(matched)) == 5
        assert match.n_unmatched() == 2

    def test_more_classes_than_clusters(self):
        rng = np.random.default_rng(1)
        match = hungarian_match([rng.integers(1, 4, 50)], [rng.integers(1, 6, 50)], 3, 5)
        assert match.n_unmatched() == 0
        assert len(match.unmatched_classes(5)) == 2

    def test_background_excluded_from_assignment(self):
        # cluster 1 overlaps background heavily but must match class 1
        pred = [np.array([1] * 10 + [1, 2, 2])]
        gt = [np.array([0] * 10 + [1, 2, 2])]
        match = hungarian_match(pred, gt, 2, 2)
        assert match.mapping == {1: 1, 2: 2}

    def test_cooccurrence_counts(self):
        C = cooccurrence([np.array([0, 1, 1, 2])], [np.array([0, 1, 2, 2])], 2, 2)
        assert C.tolist() == [[1, 0, 0], [0, 1, 1], [0, 0, 1]]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            cooccurrence([np.array([3])], [np.array([1])], 2, 2)

    def test_length_mismatch_names_video(self):
        with pytest.raises(ValueError, match="vid7"):
            hungarian_match([np.array([1, 2])], [np.array([1])], 2, 2, video_ids=["vid7"])


class TestMoF:
    def test_hand_count(self):
        assert mof([np.array([1, 2, 2, 0])], [np.array([1, 2, 1, 1])], include_background=True) == 0.5

    def test_tau_removal_counts(self):
        gt = [np.array([0] * 8 + [1, 1])]
        pred = [np.array([1] * 8 + [1, 1])]
        # 6 of 8 background frames removed, the other 2 are wrong
        assert mof(pred, gt, tau=0.75) == pytest.approx(2 / 4)
        assert mof(pred, gt, tau=1.0) == 1.0
        assert mof(pred, gt, tau=0.0) == pytest.approx(0.2)

    def test_tau_removal_seeded(self):
        gt = [np.array([0, 0, 0, 0, 1])]
        pred = [np.array([0, 1, 0, 1, 1])]
        assert mof(pred, gt, seed=3) == mof(pred, gt, seed=3)

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            mof([np.array([1])], [np.array([0])], tau=1.5)

    def test_shuffled_prediction_floor(self):
        """Uniform random clusters score about 1/K_total after matching."""
        rng = np.random.default_rng(0)
        K, n = 12, 60000
        gt = [rng.integers(1, K + 1, n)]
        pred = [rng.integers(1, K + 1, n)]
        mapped = apply_mapping(pred, hungarian_match(pred, gt, K, K))
        assert mof(mapped, gt) == pytest.approx(1 / K, abs=0.01)


class TestF1:
    def test_micro_hand_count(self):
        pred, gt = [np.array([1, 1, 2, 0, 2])], [np.array([1, 2, 2, 2, 0])]
        P, R = precision_recall(pred, gt, "micro")
        assert (P, R) == (0.5, 0.5)
        assert f1(pred, gt) == 0.5

    def test_macro_hand_count(self):
        pred, gt = [np.array([1, 1, 2, 2])], [np.array([1, 2, 2, 2])]
        P, R = precision_recall(pred, gt, "macro")
        assert P == pytest.approx((0.5 + 1.0) / 2)
        assert R == pytest.approx((1.0 + 2 / 3) / 2)

    def test_perfect(self):
        x = [np.array([1, 2, 3])]
        assert f1(x, x) == 1.0 and f1(x, x, "macro") == 1.0

    def test_bad_average(self):
        with pytest.raises(ValueError):
            f1([np.array([1])], [np.array([1])], "weighted")


class TestEvaluate:
    def test_permuted_perfect_prediction(self):
        gt = [np.array([1, 1, 2, 3, 3, 0])]
        pred = [np.array([3, 3, 1, 2, 2, 0])]
        report = evaluate(gt, pred, 3, 3)
        assert report.mof == 1.0 and report.f1 == 1.0 and report.mof_bg == 1.0
        assert report.mapping == {3: 1, 1: 2, 2: 3}

    def test_fifty_clusters_forty_eight_classes(self):
        rng = np.random.default_rng(0)
        gt = [rng.integers(0, 49, 3000)]
        pred = [rng.integers(1, 51, 3000)]
        report = evaluate(gt, pred, 50, 48)
        assert sum(v == 0 for v in report.mapping.values()) == 2

    def test_report_round_trip(self, tmp_path):
        gt = [np.array([1, 2, 0])]
        report = evaluate(gt, gt, 2, 2, EvalSettings(tau=0.5, f1_average="macro"), header={"seed": 1})
        path = report.write(tmp_path / "r.json")
        data = json.loads(path.read_text())
        assert data["tau"] == 0.5 and data["settings"]["f1_average"] == "macro"
        assert "reference" in data
        back = MetricReport.read(path)
        assert back.mapping == report.mapping and back.mof == report.mof

    def test_requires_ground_truth(self):
        with pytest.raises(ValueError):
            evaluate([None], [np.array([1])], 1, 1)


def test_shuffled_floor_near_chance():
    from globalseg.dataio import SynthConfig, generate_synthetic
    from globalseg.decode import Segmentation
    from globalseg.metrics import shuffled_floor

    m = generate_synthetic(SynthConfig(videos_per_activity=4))
    seg = Segmentation([r.video_id for r in m.records], [np.ones(r.n_frames, int) for r in m.records], np.zeros(len(m.records), int), 12)
    assert 0.5 / 12 < shuffled_floor(m, seg) < 2.5 / 12
