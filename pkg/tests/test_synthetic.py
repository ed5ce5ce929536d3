from pathlib import Path

import numpy as np
import pytest

from valdnet.data import Manifest, VideoSample, load_manifest, read_ppm
from valdnet.errors import ContractError, DataError
from valdnet.synthetic import generate_synthetic, render_clip, split_dataset


def balanced(per_class: int) -> Manifest:
    samples = [
        VideoSample(id=f"c{label}_{index:04d}", label=label, frames=[Path(f"{label}_{index}.ppm")])
        for index in range(per_class) for label in (0, 1)
    ]
    return Manifest(name="balanced", frame_size=16, samples=samples)


def split_counts(manifest: Manifest) -> dict[tuple[str, int], int]:
    counts: dict[tuple[str, int], int] = {}
    for sample in manifest.samples:
        counts[(sample.split, sample.label)] = counts.get((sample.split, sample.label), 0) + 1
    return counts


class TestGenerateSynthetic:
    def test_counts_and_layout(self, tmp_path):
        manifest = generate_synthetic(tmp_path, seed=0, per_class=50, frames=2, size=8)
        assert len(manifest.samples) == 100
        assert manifest.labels().count(0) == manifest.labels().count(1) == 50
        assert [s.id for s in manifest.samples[:3]] == ["c0_0000", "c1_0000", "c0_0001"]
        assert manifest.samples[0].frames[1] == tmp_path / "frames" / "c0_0000" / "001.ppm"
        assert all(s.split is None for s in manifest.samples)
        assert load_manifest(tmp_path / "manifest.json") == manifest

    def test_frames_decode_at_the_requested_size(self, tmp_path):
        manifest = generate_synthetic(tmp_path, seed=0, per_class=1, frames=3, size=12)
        assert read_ppm(manifest.samples[1].frames[2]).shape == (3, 12, 12)

    def test_same_seed_same_bytes(self, tmp_path):
        first = generate_synthetic(tmp_path / "a", seed=5, per_class=3, frames=4, size=16)
        second = generate_synthetic(tmp_path / "b", seed=5, per_class=3, frames=4, size=16)
        for x, y in zip(first.samples, second.samples):
            for frame_x, frame_y in zip(x.frames, y.frames):
                assert frame_x.read_bytes() == frame_y.read_bytes()

    def test_seed_changes_the_clips(self):
        first = render_clip(seed=1, label=0, index=0, frames=2, size=16)
        second = render_clip(seed=2, label=0, index=0, frames=2, size=16)
        assert not np.array_equal(first[0].data, second[0].data)

    def test_needs_a_clip_per_class(self, tmp_path):
        with pytest.raises(ContractError):
            generate_synthetic(tmp_path, seed=0, per_class=0)


class TestRenderClip:
    def test_frames_are_quantized(self):
        for frame in render_clip(seed=0, label=1, index=3, frames=3, size=16):
            assert frame.shape == (3, 16, 16)
            np.testing.assert_array_equal(np.rint(frame.data * 255) / 255, frame.data)

    def test_classes_share_per_frame_statistics(self):
        means = {}
        for label in (0, 1):
            clips = [render_clip(seed=9, label=label, index=i, frames=4, size=32) for i in range(200)]
            means[label] = np.mean([frame.data.mean() for clip in clips for frame in clip])
        assert abs(means[0] - means[1]) / means[0] < 0.02

    def test_violent_clips_move_more(self):
        def mean_step(label: int) -> float:
            steps = []
            for index in range(20):
                clip = render_clip(seed=4, label=label, index=index, frames=8, size=32)
                steps += [np.abs(b.data - a.data).mean() for a, b in zip(clip, clip[1:])]
            return float(np.mean(steps))

        assert mean_step(1) > 2 * mean_step(0)

    def test_invalid_label(self):
        with pytest.raises(ContractError):
            render_clip(seed=0, label=2, index=0)


class TestSplitDataset:
    def test_eighty_twenty_per_class(self):
        counts = split_counts(split_dataset(balanced(50), seed=0))
        assert counts == {('train', 0): 40, ('train', 1): 40, ('eval', 0): 10, ('eval', 1): 10}

    def test_five_per_class(self):
        counts = split_counts(split_dataset(balanced(5), seed=0))
        assert counts == {('train', 0): 4, ('train', 1): 4, ('eval', 0): 1, ('eval', 1): 1}

    def test_deterministic(self):
        first = split_dataset(balanced(20), seed=8)
        second = split_dataset(balanced(20), seed=8)
        assert [s.split for s in first.samples] == [s.split for s in second.samples]

    def test_seed_changes_assignment(self):
        first = split_dataset(balanced(50), seed=1)
        second = split_dataset(balanced(50), seed=2)
        assert [s.split for s in first.samples] != [s.split for s in second.samples]

    def test_sample_order_is_kept(self):
        manifest = balanced(6)
        assert [s.id for s in split_dataset(manifest, seed=0).samples] == [s.id for s in manifest.samples]

    def test_class_too_small(self):
        with pytest.raises(DataError):
            split_dataset(balanced(4), seed=0)
