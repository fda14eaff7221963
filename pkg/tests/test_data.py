import numpy as np
import pytest

from flowvad.data import Clip, DatasetManifest, build_manifest, load_pairs
from flowvad.errors import DataError
from flowvad.flow import save_flo
from conftest import make_ped2_miniature, random_frames, write_clip


def make_tree(root, lengths, split="train", size=8):
    for i, n in enumerate(lengths):
        write_clip(root / split / f"clip{i:02d}", random_frames(n, size, seed=i))


class TestManifest:
    def test_two_clips_of_ten(self, tmp_path):
        make_tree(tmp_path, [10, 10])
        m = build_manifest(tmp_path, "train")
        assert [c.video_id for c in m.clips] == ["clip00", "clip01"]
        assert [c.frame_count for c in m.clips] == [10, 10]
        assert all(c.labels is None for c in m.clips)

    def test_missing_frame_named(self, tmp_path):
        make_tree(tmp_path, [10])
        (tmp_path / "train" / "clip00" / "0005.png").unlink()
        with pytest.raises(DataError, match="0005"):
            build_manifest(tmp_path, "train")

    def test_unreadable_frame_named(self, tmp_path):
        make_tree(tmp_path, [3])
        (tmp_path / "train" / "clip00" / "0001.png").write_bytes(b"garbage")
        m = build_manifest(tmp_path, "train")
        with pytest.raises(DataError, match="0001.png"):
            load_pairs(m, "frame_pairs", 8)

    def test_sorted_lexicographically(self, tmp_path):
        for name in ("b", "a", "c"):
            write_clip(tmp_path / "train" / name, random_frames(2))
        assert [c.video_id for c in build_manifest(tmp_path).clips] == ["a", "b", "c"]

    def test_test_split_needs_labels(self, tmp_path):
        make_tree(tmp_path, [4], split="test")
        with pytest.raises(DataError, match="labels"):
            build_manifest(tmp_path, "test")
        (tmp_path / "labels").mkdir()
        (tmp_path / "labels" / "clip00.txt").write_text("0\n1\n1\n")
        with pytest.raises(DataError, match="3 labels for 4 frames"):
            build_manifest(tmp_path, "test")
        np.save(tmp_path / "labels" / "clip00.npy", np.array([0, 1, 1, 0]))
        (tmp_path / "labels" / "clip00.txt").unlink()
        assert build_manifest(tmp_path, "test").clips[0].labels.tolist() == [0, 1, 1, 0]

    def test_train_split_rejects_labels(self, tmp_path):
        clip = Clip("v", [tmp_path / "0.png"], labels=np.zeros(1, dtype=np.int64))
        with pytest.raises(DataError):
            DatasetManifest("d", "train", tmp_path, [clip])

    def test_train_split_ignores_label_files(self, tmp_path):
        make_tree(tmp_path, [3])
        (tmp_path / "labels").mkdir()
        (tmp_path / "labels" / "clip00.txt").write_text("1\n1\n1\n")
        assert build_manifest(tmp_path, "train").clips[0].labels is None

    def test_frames_plus_flow_requires_flow(self, tmp_path):
        make_tree(tmp_path, [3])
        with pytest.raises(DataError, match="precompute-flow"):
            build_manifest(tmp_path, "train", "frames_plus_flow")

    def test_ped2_layout(self, tmp_path):
        make_ped2_miniature(tmp_path)
        train = build_manifest(tmp_path, "train")
        test = build_manifest(tmp_path, "test")
        assert len(train.clips) == 16 and len(test.clips) == 12
        assert test.clips[0].video_id == "Test001"
        assert test.clips[0].labels.tolist() == [0, 0, 1]

    def test_manifest_json(self, tmp_path):
        make_tree(tmp_path, [3, 4])
        m = build_manifest(tmp_path, "train")
        d = m.to_dict()
        assert d["split"] == "train" and [c["frame_count"] for c in d["clips"]] == [3, 4]
        assert m.save(tmp_path / "m.json").exists()


class TestPairs:
    def test_counts_and_boundaries(self, tmp_path):
        make_tree(tmp_path, [5, 7])
        m = build_manifest(tmp_path, "train")
        p = load_pairs(m, "frame_pairs", 8)
        assert len(p) == 10
        ids = p.pair_ids
        assert ids[:4] == [("clip00", t) for t in range(4)]
        assert ids[4:] == [("clip01", t) for t in range(6)]
        x, y = p.batch([3, 4])
        # pair 3 is (frame 3, frame 4) of clip00; pair 4 starts clip01 at frame 0
        frames0 = random_frames(5, seed=0)
        frames1 = random_frames(7, seed=1)
        np.testing.assert_allclose(x[0], frames0[3], atol=1 / 255)
        np.testing.assert_allclose(y[0], frames0[4], atol=1 / 255)
        np.testing.assert_allclose(x[1], frames1[0], atol=1 / 255)

    def test_lazy_matches_in_memory(self, tmp_path):
        make_tree(tmp_path, [4])
        m = build_manifest(tmp_path, "train")
        a = load_pairs(m, "frame_pairs", 8)
        b = load_pairs(m, "frame_pairs", 8, in_memory=False)
        for i in range(len(a)):
            np.testing.assert_array_equal(a.batch([i])[0], b.batch([i])[0])

    def test_flow_pairs_need_flow_tree(self, tmp_path):
        make_tree(tmp_path, [3])
        with pytest.raises(DataError, match="precompute-flow"):
            load_pairs(build_manifest(tmp_path, "train"), "flow_pairs", 8)

    def test_flow_pairs_missing_file_named(self, tmp_path):
        make_tree(tmp_path, [3])
        (tmp_path / "flow" / "clip00").mkdir(parents=True)
        save_flo(tmp_path / "flow" / "clip00" / "0000.flo", np.zeros((8, 8, 2), np.float32))
        with pytest.raises(DataError, match="0001.flo"):
            load_pairs(build_manifest(tmp_path, "train"), "flow_pairs", 8)

    def test_flow_pairs_encode_flow(self, tmp_path):
        make_tree(tmp_path, [2])
        (tmp_path / "flow" / "clip00").mkdir(parents=True)
        save_flo(tmp_path / "flow" / "clip00" / "0000.flo", np.zeros((8, 8, 2), np.float32))
        p = load_pairs(build_manifest(tmp_path, "train"), "flow_pairs", 8)
        assert np.all(p.batch([0])[1] == 1.0)
