"""Data pipeline tests: ingestion, windowing, scaling, sample assembly."""

import numpy as np
import pytest

from trajformer import data, graph
from trajformer.config import ConfigError
from trajformer.data import (
    Scaler,
    SchemaError,
    TrajectoryRecord,
    Window,
    build_dataset,
    build_sample,
    fit_scaler,
    index_frames,
    load_records,
    save_samples,
    load_samples,
    segment_and_downsample,
    stack_batch,
)

HEADER = "vehicle_id,frame_id,local_x,local_y,lane_id\n"


def write_csv(path, rows):
    with open(path, "w") as fh:
        fh.write(HEADER)
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def single_vehicle_rows(vid=1, n=80, start=0):
    return [(vid, start + t, 1.85, 0.5 * t, 1) for t in range(n)]


class TestLoadRecords:
    def test_single_vehicle_file_count(self, tmp_path):
        path = tmp_path / "a.csv"
        write_csv(path, single_vehicle_rows(n=80))
        records, rejects = load_records(path)
        assert len(records) == 80
        assert rejects == 0

    def test_non_numeric_row_rejected(self, tmp_path):
        path = tmp_path / "a.csv"
        rows = single_vehicle_rows(n=80)
        rows[13] = (1, 13, "oops", 6.5, 1)
        write_csv(path, rows)
        records, rejects = load_records(path)
        assert len(records) == 79
        assert rejects == 1

    def test_empty_file(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("")
        records, rejects = load_records(path)
        assert records == []
        assert rejects == 0

    def test_missing_column_raises(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("vehicle_id,frame_id,local_x\n1,0,0.0\n")
        with pytest.raises(SchemaError, match="local_y"):
            load_records(path)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "a.csv"
        rows = single_vehicle_rows(n=5) + [(1, 2, 9.9, 9.9, 2)]
        write_csv(path, rows)
        records, rejects = load_records(path)
        assert len(records) == 5
        assert rejects == 1

    def test_sorted_by_vehicle_then_frame(self, tmp_path):
        path = tmp_path / "a.csv"
        write_csv(path, [(2, 1, 0, 0, 1), (1, 1, 0, 0, 1), (1, 0, 0, 0, 1)])
        records, _ = load_records(path)
        keys = [(r.vehicle_id, r.frame_id) for r in records]
        assert keys == sorted(keys)


class TestSegmentation:
    def make_records(self, frames, vid=1):
        return [TrajectoryRecord(vid, f, 0.0, float(f), 1) for f in frames]

    def test_80_ticks_one_window_40_frames(self):
        windows, _ = segment_and_downsample(self.make_records(range(80)))
        assert len(windows) == 1
        assert len(windows[0].ticks) == 40

    def test_79_ticks_no_window(self):
        windows, stats = segment_and_downsample(self.make_records(range(79)))
        assert windows == []
        assert stats.short_tracks == 1

    def test_160_ticks_two_windows(self):
        windows, _ = segment_and_downsample(self.make_records(range(160)))
        assert len(windows) == 2
        assert windows[0].ticks[0] == 0
        assert windows[1].ticks[0] == 80

    def test_gap_splits_runs(self):
        # two 60-tick runs separated by a gap: neither long enough
        frames = list(range(60)) + list(range(100, 160))
        windows, stats = segment_and_downsample(self.make_records(frames))
        assert windows == []
        assert stats.short_tracks == 2

    def test_downsample_keeps_every_second_tick(self):
        windows, _ = segment_and_downsample(self.make_records(range(100, 180)))
        ticks = windows[0].ticks
        for k in range(40):
            assert ticks[k] == 100 + 2 * k


class TestScaler:
    def test_margin_rule(self):
        coords = np.array([[0.0, 0.0], [100.0, 10.0]])
        s = fit_scaler(coords)
        assert s.x_min == pytest.approx(-1.0)
        assert s.x_max == pytest.approx(101.0)
        assert s.y_min == pytest.approx(-0.1)
        assert s.y_max == pytest.approx(10.1)

    def test_midpoint_maps_to_zero(self):
        s = fit_scaler(np.array([[0.0, 0.0], [100.0, 100.0]]))
        out = s.normalize([50.0, 50.0])
        assert np.allclose(out, 0.0)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(3)
        coords = rng.uniform(-50, 400, size=(200, 2))
        s = fit_scaler(coords)
        back = s.denormalize(s.normalize(coords))
        assert np.max(np.abs(back - coords)) < 1e-9

    def test_degenerate_axis_rejected(self):
        coords = np.array([[1.0, 0.0], [1.0, 5.0]])
        with pytest.raises(ConfigError, match="degenerate"):
            fit_scaler(coords)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            fit_scaler(np.zeros((0, 2)))

    def test_save_load_round_trip(self, tmp_path):
        s = fit_scaler(np.array([[0.0, -3.0], [10.0, 7.0]]))
        path = tmp_path / "scaler.txt"
        s.save(path)
        loaded = Scaler.load(path)
        assert loaded == s


def scene_records(vehicles, n_ticks=80):
    """vehicles: {vid: (x0, y0, lane, vy)}; straight constant-speed tracks."""
    records = []
    for vid, (x0, y0, lane, vy) in vehicles.items():
        for t in range(n_ticks):
            records.append(TrajectoryRecord(vid, t, x0, y0 + vy * 0.1 * t, lane))
    return records


SCENE_SCALER = Scaler(x_min=-5.0, x_max=15.0, y_min=-60.0, y_max=150.0)


def scene_sample(vehicles, max_agents=4, **kwargs):
    records = scene_records(vehicles)
    window = Window(ego_id=1, ticks=np.arange(0, 80, 2))
    return build_sample(window, index_frames(records), SCENE_SCALER,
                        max_agents, **kwargs)


class TestBuildSample:
    def test_ego_alone(self):
        sample = scene_sample({1: (0.0, 0.0, 2, 10.0)}, max_agents=1)
        assert sample.mask.tolist() == [1.0]
        assert np.allclose(sample.adjacency, 1.0)
        sample.validate()

    def test_neighbor_at_10_7m_adjacent_lane_included(self):
        sample = scene_sample({1: (0.0, 0.0, 2, 10.0),
                               2: (3.7, 10.04, 3, 10.0)})
        assert sample.agent_ids[:2].tolist() == [1, 2]
        assert sample.mask.sum() == 2

    def test_neighbor_at_50m_same_lane_excluded(self):
        sample = scene_sample({1: (0.0, 0.0, 2, 10.0),
                               2: (0.0, 50.0, 2, 10.0)})
        assert sample.mask.sum() == 1

    def test_two_lanes_apart_excluded(self):
        sample = scene_sample({1: (0.0, 0.0, 2, 10.0),
                               2: (7.4, 5.0, 4, 10.0)})
        assert sample.mask.sum() == 1

    def test_neighbors_ordered_nearest_first(self):
        sample = scene_sample({1: (0.0, 0.0, 2, 10.0),
                               2: (0.0, 20.0, 2, 10.0),
                               3: (0.0, 5.0, 2, 10.0)})
        assert sample.agent_ids[:3].tolist() == [1, 3, 2]

    def test_truncated_to_max_agents(self):
        vehicles = {1: (0.0, 0.0, 2, 10.0)}
        for i in range(5):
            vehicles[2 + i] = (0.0, 2.0 + i, 2, 10.0)
        sample = scene_sample(vehicles, max_agents=3)
        assert sample.mask.sum() == 3
        assert sample.history.shape == (15, 3, 2)

    def test_neighbor_missing_mid_window_dropped(self):
        records = scene_records({1: (0.0, 0.0, 2, 10.0)})
        # neighbor only exists for the first 50 ticks
        records += scene_records({2: (0.0, 5.0, 2, 10.0)}, n_ticks=50)
        window = Window(ego_id=1, ticks=np.arange(0, 80, 2))
        stats = data.PipelineStats()
        sample = build_sample(window, index_frames(records), SCENE_SCALER, 4,
                              stats=stats)
        assert sample.mask.sum() == 1
        assert stats.dropped_neighbors == 1

    def test_ego_absent_rejects_window(self):
        records = scene_records({1: (0.0, 0.0, 2, 10.0)}, n_ticks=70)
        records += scene_records({2: (0.0, 5.0, 2, 10.0)})
        window = Window(ego_id=1, ticks=np.arange(0, 80, 2))
        stats = data.PipelineStats()
        sample = build_sample(window, index_frames(records), SCENE_SCALER, 4,
                              stats=stats)
        assert sample is None
        assert stats.rejected_windows == 1

    def test_membership_fixed_but_adjacency_per_frame(self):
        # neighbor starts 10 m behind and recedes at 7.5 m/s relative speed:
        # at the last history frame (t=2.8 s) the gap is 31 m > 30 m
        sample = scene_sample({1: (0.0, 0.0, 2, 10.0),
                               2: (0.0, -10.0, 2, 2.5)})
        assert sample.mask.sum() == 2          # membership from frame 0
        assert sample.adjacency[0, 0, 1] > 0   # connected at the anchor
        assert sample.adjacency[14, 0, 1] == 0.0  # edge gone at 31 m

    def test_adjacency_matches_neighbor_rule_everywhere(self):
        rng = np.random.default_rng(7)
        vehicles = {1: (0.0, 0.0, 2, 10.0)}
        for i in range(4):
            vehicles[2 + i] = (float(rng.uniform(0, 7.4)),
                               float(rng.uniform(-25, 25)),
                               int(rng.integers(1, 4)),
                               float(rng.uniform(8, 12)))
        records = scene_records(vehicles)
        window = Window(ego_id=1, ticks=np.arange(0, 80, 2))
        frame_index = index_frames(records)
        sample = build_sample(window, frame_index, SCENE_SCALER, 8)
        ids = [int(v) for v in sample.agent_ids if v >= 0]
        for f in range(15):
            tick = 2 * f
            frame = frame_index[tick]
            for a, va in enumerate(ids):
                for b, vb in enumerate(ids):
                    if a == b:
                        continue
                    xa, ya, la = frame[va]
                    xb, yb, lb = frame[vb]
                    expected = graph.neighbor_rule((xa, ya), (xb, yb), la, lb)
                    assert (sample.adjacency[f, a, b] > 0) == expected

    def test_normalized_range_and_split(self):
        sample = scene_sample({1: (0.0, 0.0, 2, 10.0)}, max_agents=1)
        assert sample.history.shape == (15, 1, 2)
        assert sample.future.shape == (25, 1, 2)
        assert np.all(np.abs(sample.history) <= 1.0)
        assert np.all(np.abs(sample.future) <= 1.0)
        # frame k of the window is tick 2k: normalized y must be increasing
        y = sample.history[:, 0, 1]
        assert np.all(np.diff(y) > 0)


class TestShards:
    def test_save_load_round_trip(self, tmp_path):
        records = scene_records({1: (0.0, 0.0, 2, 10.0),
                                 2: (3.7, 8.0, 3, 9.0)}, n_ticks=160)
        samples, _ = build_dataset(records, SCENE_SCALER, max_agents=4)
        assert len(samples) == 4  # two windows per vehicle
        path = tmp_path / "shard.bin"
        save_samples(path, samples)
        loaded = load_samples(path)
        assert len(loaded) == len(samples)
        for a, b in zip(samples, loaded):
            assert np.array_equal(a.history, b.history)
            assert np.array_equal(a.future, b.future)
            assert np.array_equal(a.adjacency, b.adjacency)
            assert np.array_equal(a.mask, b.mask)
            assert a.domain == b.domain
            b.validate()

    def test_empty_shard_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            save_samples(tmp_path / "s.bin", [])

    def test_stack_batch_shapes(self):
        sample = scene_sample({1: (0.0, 0.0, 2, 10.0)}, max_agents=2,
                              domain=data.DOMAIN_TARGET)
        batch = stack_batch([sample, sample])
        assert batch["history"].shape == (2, 15, 2, 2)
        assert batch["future"].shape == (2, 25, 2, 2)
        assert batch["adjacency"].shape == (2, 15, 2, 2)
        assert batch["mask"].shape == (2, 2)
        assert batch["domain"].tolist() == [1.0, 1.0]
