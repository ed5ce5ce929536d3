import logging
from dataclasses import replace

import numpy as np
import pytest

from valdnet.errors import DataError
from valdnet.loader import (EstimatedFlowSource, FileFlowSource, FrameCache, flow_source_for, load_sample,
                            load_samples, ordered_map, precompute_flows)
from valdnet.utility import THREADS_VARIABLE, data_workers


class TestLoadSample:
    def test_shapes(self, synthetic_dataset, micro_config):
        manifest, _ = synthetic_dataset
        tensors = load_sample(manifest.samples[0], micro_config, EstimatedFlowSource())
        assert tensors.id == manifest.samples[0].id
        assert len(tensors.frames) == len(tensors.flows) == micro_config.frames
        assert tensors.frames[0].shape == (3, 16, 16)
        assert tensors.flows[0].shape == (2, 16, 16)
        assert all(np.max(np.abs(flow.data)) <= 1.0 for flow in tensors.flows)

    def test_last_sampled_frame_has_zero_flow(self, synthetic_dataset, micro_config):
        manifest, _ = synthetic_dataset
        tensors = load_sample(manifest.samples[1], micro_config, EstimatedFlowSource())
        assert not np.any(tensors.flows[-1].data)

    def test_frames_are_resized(self, synthetic_dataset, micro_config):
        manifest, _ = synthetic_dataset
        config = replace(micro_config, input_size=8)
        tensors = load_sample(manifest.samples[0], config, EstimatedFlowSource())
        assert tensors.frames[0].shape == (3, 8, 8)
        assert tensors.flows[0].shape == (2, 8, 8)

    def test_single_stream_skips_the_other(self, synthetic_dataset, micro_config):
        manifest, _ = synthetic_dataset
        rgb = load_sample(manifest.samples[0], replace(micro_config, streams=['rgb']), EstimatedFlowSource())
        flow = load_sample(manifest.samples[0], replace(micro_config, streams=['flow']), EstimatedFlowSource())
        assert rgb.flows == [] and len(rgb.frames) == 4
        assert flow.frames == [] and len(flow.flows) == 4

    def test_workers_keep_manifest_order(self, synthetic_dataset, micro_config):
        manifest, _ = synthetic_dataset
        tensors = load_samples(manifest.samples, micro_config, EstimatedFlowSource(), workers=3)
        assert [t.id for t in tensors] == [s.id for s in manifest.samples]


class TestFlowSources:
    def test_precomputed_flow_matches_estimate(self, synthetic_dataset, micro_config):
        manifest, root = synthetic_dataset
        with_files = precompute_flows(manifest, root, offset=1, size=16)
        assert with_files.flow_offset == 1
        assert with_files.samples[0].flows[2] == root / "flows" / with_files.samples[0].id / "002.flo"
        assert isinstance(flow_source_for(with_files, 1), FileFlowSource)

        from_files = load_sample(with_files.samples[0], micro_config, FileFlowSource())
        estimated = load_sample(manifest.samples[0], micro_config, EstimatedFlowSource())
        for a, b in zip(from_files.flows, estimated.flows):
            np.testing.assert_allclose(a.data, b.data, rtol=0, atol=1e-6)

    def test_other_offset_falls_back_to_estimation(self, synthetic_dataset, caplog):
        manifest, root = synthetic_dataset
        with_files = precompute_flows(manifest, root, offset=2, size=16)
        with caplog.at_level(logging.WARNING):
            source = flow_source_for(with_files, 1)
        assert isinstance(source, EstimatedFlowSource)
        assert "offset" in caplog.text

    def test_no_files_means_estimation(self, synthetic_dataset):
        manifest, _ = synthetic_dataset
        assert isinstance(flow_source_for(manifest, 1), EstimatedFlowSource)

    def test_file_source_needs_files(self, synthetic_dataset):
        manifest, _ = synthetic_dataset
        with pytest.raises(DataError):
            FileFlowSource().get_flow(FrameCache(manifest.samples[0], 16), 0, 1)

    def test_file_source_checks_size(self, synthetic_dataset):
        manifest, root = synthetic_dataset
        with_files = precompute_flows(manifest, root, offset=1, size=16)
        with pytest.raises(DataError):
            FileFlowSource().get_flow(FrameCache(with_files.samples[0], 8), 0, 1)


class TestWorkers:
    def test_ordered_map_keeps_order(self):
        assert ordered_map(lambda x: x * x, range(20), workers=4) == [x * x for x in range(20)]

    def test_thread_count_from_environment(self, monkeypatch):
        monkeypatch.setenv(THREADS_VARIABLE, "3")
        assert data_workers() == 3
        monkeypatch.setenv(THREADS_VARIABLE, "0")
        assert data_workers() == 1

    def test_invalid_thread_count_is_ignored(self, monkeypatch, caplog):
        monkeypatch.setenv(THREADS_VARIABLE, "many")
        with caplog.at_level(logging.WARNING):
            assert data_workers() >= 1
        assert THREADS_VARIABLE in caplog.text
