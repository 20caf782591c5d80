import itertools

import numpy as np
import pytest

from globalseg.decode import (
    GlobalActionSegmenter,
    Segmentation,
    build_bow,
    cluster_actions,
    cluster_pseudo_activities,
    ordered_viterbi,
    read_segmentation_csv,
    read_segmentation_dir,
    viterbi_decode,
    write_barcode_svg,
    write_segmentation_csv,
    write_segmentation_dir,
)


def monotone_paths(T, K):
    """Every path that starts in state 0, ends in K-1 and steps by at most one."""
    for cuts in itertools.combinations(range(1, T), K - 1):
        bounds = (0, *cuts, T)
        yield np.repeat(np.arange(K), np.diff(bounds))


def brute_force_viterbi(scores):
    T, K = scores.shape
    return max(scores[np.arange(T), p].sum() for p in monotone_paths(T, K))


class TestOrderedViterbi:
    @pytest.mark.parametrize("seed", range(30))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(1, 4))
        T = int(rng.integers(K, 11))
        scores = rng.integers(-20, 21, size=(T, K)).astype(float)
        path, value = ordered_viterbi(scores)
        assert value == brute_force_viterbi(scores)
        assert scores[np.arange(T), path].sum() == value

    def test_path_is_monotone_and_complete(self):
        scores = np.random.default_rng(0).normal(size=(40, 5))
        path, _ = ordered_viterbi(scores)
        assert path[0] == 0 and path[-1] == 4
        assert set(np.diff(path)) <= {0, 1}

    def test_T_equals_K_is_diagonal(self):
        path, _ = ordered_viterbi(np.zeros((4, 4)))
        assert path.tolist() == [0, 1, 2, 3]

    def test_ties_transition_early(self):
        path, _ = ordered_viterbi(np.zeros((5, 2)))
        assert path.tolist() == [0, 1, 1, 1, 1]

    def test_too_few_frames(self):
        with pytest.raises(ValueError):
            ordered_viterbi(np.zeros((2, 3)))

    def test_background_threshold(self):
        C = np.array([[0.0, 0.0], [10.0, 0.0]])
        E = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 30.0], [10.0, 0.0]])
        labels = viterbi_decode(E, C, bg_threshold=-50.0)
        assert labels.tolist() == [1, 1, 0, 2]


def three_blob_videos(n_videos=6, T=30, seed=0):
    """Videos walking through three well-separated blobs in order."""
    rng = np.random.default_rng(seed)
    centres = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    videos, truth = [], []
    for _ in range(n_videos):
        cuts = np.sort(rng.choice(np.arange(5, T - 5), size=2, replace=False))
        lab = np.repeat([0, 1, 2], np.diff([0, *cuts, T]))
        videos.append(centres[lab] + 0.1 * rng.normal(size=(T, 2)))
        truth.append(lab)
    return videos, truth, centres


class TestClustering:
    def test_action_clusters_ordered_by_time(self):
        videos, _, centres = three_blob_videos()
        ordered, order = cluster_actions(videos, 3, seed=0)
        np.testing.assert_allclose(ordered, centres, atol=0.1)
        assert sorted(order.tolist()) == [0, 1, 2]

    def test_bow_histograms_normalised(self):
        videos, _, _ = three_blob_videos()
        bow, H = build_bow(videos, vocab_size=6, seed=0)
        assert H.shape == (6, 6)
        np.testing.assert_allclose(H.sum(1), 1.0)
        assert bow.size == 6

    def test_bow_needs_enough_frames(self):
        with pytest.raises(ValueError):
            build_bow([np.zeros((3, 2))], vocab_size=5)

    def test_pseudo_activities_separate_distinct_videos(self):
        H = np.array([[1, 0, 0], [0.9, 0.1, 0], [0, 0, 1], [0, 0.1, 0.9]], dtype=float)
        groups, _ = cluster_pseudo_activities(H, 2, seed=0)
        assert groups[0] == groups[1] != groups[2] == groups[3]

    def test_single_group(self):
        groups, cent = cluster_pseudo_activities(np.eye(3), 1)
        assert groups.tolist() == [0, 0, 0]
        assert cent.shape == (1, 3)


class TestGlobalActionSegmenter:
    def test_recovers_ordered_blobs(self):
        videos, truth, _ = three_blob_videos()
        seg = GlobalActionSegmenter(n_pseudo_activities=1, n_actions=3, vocab_size=6)
        pred = seg.fit_predict(videos)
        for p, t in zip(pred, truth):
            assert np.array_equal(p, t + 1)

    def test_global_ids_offset_by_group(self):
        a, _, _ = three_blob_videos(seed=1)
        b = [v + 100 for v in three_blob_videos(seed=2)[0]]
        seg = GlobalActionSegmenter(n_pseudo_activities=2, n_actions=3, vocab_size=6)
        pred = seg.fit_predict(a + b)
        assert seg.n_clusters == 6
        ids_a = set(np.concatenate(pred[:6]).tolist())
        ids_b = set(np.concatenate(pred[6:]).tolist())
        assert len(ids_a) == len(ids_b) == 3 and not ids_a & ids_b
        assert ids_a | ids_b == set(range(1, 7))

    def test_predict_matches_fit_predict(self):
        videos, _, _ = three_blob_videos()
        seg = GlobalActionSegmenter(n_pseudo_activities=2, n_actions=3, vocab_size=6)
        fitted = seg.fit_predict(videos)
        again = seg.predict(videos)
        for a, b in zip(fitted, again):
            assert np.array_equal(a, b)

    def test_background_share(self):
        videos, _, _ = three_blob_videos(T=60)
        seg = GlobalActionSegmenter(n_pseudo_activities=1, n_actions=3, vocab_size=6, background_fraction=0.2)
        pred = np.concatenate(seg.fit_predict(videos))
        assert abs(np.mean(pred == 0) - 0.2) < 0.02

    def test_deterministic(self):
        videos, _, _ = three_blob_videos()
        p1 = GlobalActionSegmenter(2, 3, vocab_size=6, random_state=5).fit_predict(videos)
        p2 = GlobalActionSegmenter(2, 3, vocab_size=6, random_state=5).fit_predict(videos)
        assert all(np.array_equal(a, b) for a, b in zip(p1, p2))

    @pytest.mark.parametrize(
        "kw", [dict(n_actions=0), dict(vocab_size=1, n_pseudo_activities=2), dict(background_fraction=1.0)]
    )
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            GlobalActionSegmenter(**kw).fit(three_blob_videos()[0])

    def test_get_params_round_trip(self):
        seg = GlobalActionSegmenter(n_pseudo_activities=4, n_actions=2)
        assert GlobalActionSegmenter(**seg.get_params()).get_params() == seg.get_params()


class TestExport:
    def test_csv_round_trip(self, tmp_path):
        labels = np.array([0, 3, 3, 1])
        path = write_segmentation_csv(tmp_path / "v.csv", labels)
        assert path.read_text().splitlines()[0] == "frame_index,global_cluster_id"
        assert np.array_equal(read_segmentation_csv(path), labels)

    def test_csv_bad_header(self, tmp_path):
        (tmp_path / "v.csv").write_text("a,b\n0,1\n")
        with pytest.raises(ValueError):
            read_segmentation_csv(tmp_path / "v.csv")

    def test_dir_round_trip(self, tmp_path):
        seg = Segmentation(["x", "y"], [np.array([1, 1, 2]), np.array([0, 4])], np.array([0, 1]), 4)
        write_segmentation_dir(seg, tmp_path, svg=True, header="seed=3\nk=2")
        back = read_segmentation_dir(tmp_path)
        assert back.video_ids == ["x", "y"] and back.n_clusters == 4
        assert back.groups.tolist() == [0, 1]
        assert all(np.array_equal(a, b) for a, b in zip(back.labels, seg.labels))
        assert (tmp_path / "x.svg").is_file()
        assert "# seed=3" in (tmp_path / "segmentation_index.csv").read_text()

    def test_svg_has_one_rect_per_segment(self, tmp_path):
        text = write_barcode_svg(tmp_path / "b.svg", [1, 1, 0, 0, 2], 2).read_text()
        assert text.count("<rect") == 3
        assert "#d9d9d9" in text


class TestSpecExamples:
    def test_single_frame_video_histogram_is_one_hot(self):
        videos, _, _ = three_blob_videos()
        bow, _ = build_bow(videos, vocab_size=6)
        h = bow.histogram(videos[0][:1])
        assert sorted(h.tolist()) == [0.0] * 5 + [1.0]

    def test_two_blob_histograms(self):
        rng = np.random.default_rng(0)
        a = [rng.normal(size=(10, 2)) * 0.01 for _ in range(3)]
        b = [rng.normal(size=(10, 2)) * 0.01 + 5 for _ in range(3)]
        _, H = build_bow(a + b, vocab_size=2)
        assert {tuple(h) for h in H[:3]} | {tuple(h) for h in H[3:]} == {(1.0, 0.0), (0.0, 1.0)}
        assert len({tuple(h) for h in H[:3]}) == 1

    def test_groups_recover_activities(self):
        rng = np.random.default_rng(1)
        centres = rng.normal(size=(3, 4)) * 10
        videos = [centres[a] + rng.normal(size=(20, 4)) for a in range(3) for _ in range(5)]
        activity = np.repeat(np.arange(3), 5)
        _, H = build_bow(videos, vocab_size=9, seed=0)
        groups, _ = cluster_pseudo_activities(H, 3, seed=0)
        # a perfect grouping is a bijection between groups and activities
        assert len(set(zip(groups.tolist(), activity.tolist()))) == 3

    def test_single_cluster_labels_everything(self):
        assert viterbi_decode(np.random.default_rng(0).normal(size=(7, 2)), np.zeros((1, 2))).tolist() == [1] * 7

    def test_no_background_without_threshold(self):
        videos, _, _ = three_blob_videos()
        pred = GlobalActionSegmenter(2, 3, vocab_size=6).fit_predict(videos)
        assert all((p > 0).all() for p in pred)

    @pytest.mark.parametrize("seed", range(5))
    def test_beats_random_monotone_paths(self, seed):
        rng = np.random.default_rng(seed)
        T, K = 30, 4
        scores = rng.normal(size=(T, K))
        _, best = ordered_viterbi(scores)
        for _ in range(1000):
            cuts = np.sort(rng.choice(np.arange(1, T), K - 1, replace=False))
            path = np.repeat(np.arange(K), np.diff([0, *cuts, T]))
            assert scores[np.arange(T), path].sum() <= best + 1e-12

    def test_cluster_ids_belong_to_group(self):
        a, _, _ = three_blob_videos(seed=1)
        b = [v + 100 for v in three_blob_videos(seed=2)[0]]
        seg = GlobalActionSegmenter(n_pseudo_activities=2, n_actions=3, vocab_size=6)
        pred = seg.fit_predict(a + b)
        for labels, g in zip(pred, seg.groups_):
            ids = set(labels.tolist()) - {0}
            assert ids <= set(range(g * 3 + 1, g * 3 + 4))
