"""Trajectory ingestion and sample assembly.

10 Hz vehicle records are segmented into non-overlapping 8 s windows,
downsampled by 2 to 40 frames, split 15 history / 25 future, normalized
to [-1, 1], and packed with per-frame scene graphs and a domain label.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import container, graph
from .config import ConfigError, read_kv, write_kv

log = logging.getLogger(__name__)

COLUMNS = ("vehicle_id", "frame_id", "local_x", "local_y", "lane_id")
FRAME_HZ = 10
WINDOW_TICKS = 80          # 8 s at 10 Hz
DOWNSAMPLE = 2
WINDOW_FRAMES = WINDOW_TICKS // DOWNSAMPLE
HISTORY_LEN = 15
FUTURE_LEN = 25
DOMAIN_SOURCE = 0
DOMAIN_TARGET = 1


class SchemaError(ValueError):
    """Raised when an input file does not match the expected schema."""


@dataclass
class TrajectoryRecord:
    vehicle_id: int
    frame_id: int
    local_x: float
    local_y: float
    lane_id: int


@dataclass
class Scaler:
    """Per-axis min/max map between meters and [-1, 1]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigError(
                f"degenerate scaler range: x [{self.x_min}, {self.x_max}], "
                f"y [{self.y_min}, {self.y_max}]")

    def _bounds(self):
        lo = np.array([self.x_min, self.y_min])
        hi = np.array([self.x_max, self.y_max])
        return lo, hi

    def normalize(self, coords):
        lo, hi = self._bounds()
        return 2.0 * (np.asarray(coords, dtype=np.float64) - lo) / (hi - lo) - 1.0

    def denormalize(self, coords):
        lo, hi = self._bounds()
        return (np.asarray(coords, dtype=np.float64) + 1.0) / 2.0 * (hi - lo) + lo

    def save(self, path):
        write_kv(path, {k: repr(float(getattr(self, k)))
                        for k in ("x_min", "x_max", "y_min", "y_max")})

    @classmethod
    def load(cls, path):
        kv = read_kv(path)
        return cls(**{k: float(kv[k]) for k in ("x_min", "x_max", "y_min", "y_max")})


def fit_scaler(coords, margin=0.01):
    """Min/max over [..., 2] meter coordinates, padded by `margin` of the span."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if coords.size == 0:
        raise ConfigError("fit_scaler needs a non-empty coordinate set")
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    if np.any(hi <= lo):
        raise ConfigError(f"degenerate coordinate axis: min {lo}, max {hi}")
    pad = margin * (hi - lo)
    return Scaler(x_min=lo[0] - pad[0], x_max=hi[0] + pad[0],
                  y_min=lo[1] - pad[1], y_max=hi[1] + pad[1])


@dataclass
class TrajectorySample:
    """One training example: 15 observed + 25 future frames for n agents."""

    history: np.ndarray    # [15, n, 2] normalized
    future: np.ndarray     # [25, n, 2] normalized
    agent_ids: np.ndarray  # [n] int64, -1 for padding
    lane_ids: np.ndarray   # [15, n] int64
    adjacency: np.ndarray  # [15, n, n] degree-normalized
    mask: np.ndarray       # [n] 1.0 valid / 0.0 padding
    domain: int

    def validate(self):
        n = self.mask.shape[0]
        assert self.history.shape == (HISTORY_LEN, n, 2), self.history.shape
        assert self.future.shape == (FUTURE_LEN, n, 2), self.future.shape
        assert self.adjacency.shape == (HISTORY_LEN, n, n)
        assert np.all(np.abs(self.history) <= 1.0 + 1e-12)
        assert np.all(np.abs(self.future) <= 1.0 + 1e-12)
        pad = self.mask == 0
        assert np.all(self.history[:, pad, :] == 0.0)
        assert np.all(self.future[:, pad, :] == 0.0)
        assert np.all(self.adjacency[:, pad, :] == 0.0)
        assert np.all(self.adjacency[:, :, pad] == 0.0)
        assert self.domain in (DOMAIN_SOURCE, DOMAIN_TARGET)


@dataclass
class Window:
    """One ego vehicle's 40-frame (5 Hz) slice of a 10 Hz track."""

    ego_id: int
    ticks: np.ndarray  # [40] original 10 Hz frame ids

    @property
    def anchor(self):
        return int(self.ticks[0])


@dataclass
class PipelineStats:
    rejected_rows: int = 0
    short_tracks: int = 0
    rejected_windows: int = 0
    clipped_points: int = 0
    dropped_neighbors: int = 0
    extra: dict = field(default_factory=dict)


# ----------------------------------------------------------------------
# ingestion


def load_records(path):
    """Parse a 5-column trajectory CSV; returns (sorted records, reject count)."""
    records = []
    rejects = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in COLUMNS if c not in header]
        if missing and header:
            raise SchemaError(f"{path}: missing columns {missing} in header {header}")
        if not header:
            log.warning("%s: empty file", path)
            return [], 0
        seen = set()
        for row in reader:
            try:
                rec = TrajectoryRecord(
                    vehicle_id=int(row["vehicle_id"]),
                    frame_id=int(row["frame_id"]),
                    local_x=float(row["local_x"]),
                    local_y=float(row["local_y"]),
                    lane_id=int(row["lane_id"]),
                )
            except (TypeError, ValueError):
                rejects += 1
                continue
            key = (rec.vehicle_id, rec.frame_id)
            if key in seen:
                rejects += 1
                continue
            seen.add(key)
            records.append(rec)
    if rejects:
        log.warning("%s: rejected %d malformed rows", path, rejects)
    records.sort(key=lambda r: (r.vehicle_id, r.frame_id))
    return records, rejects


def segment_and_downsample(records, stats=None):
    """Cut each vehicle's contiguous runs into 80-tick windows, keep every
    2nd tick. Runs shorter than 80 ticks (and trailing remainders) are dropped."""
    stats = stats or PipelineStats()
    windows = []
    by_vehicle = {}
    for rec in records:
        by_vehicle.setdefault(rec.vehicle_id, []).append(rec)
    for vid, recs in by_vehicle.items():
        frames = np.array([r.frame_id for r in recs])
        # split on frame gaps into contiguous runs
        breaks = np.where(np.diff(frames) != 1)[0] + 1
        for run in np.split(frames, breaks):
            n_windows = len(run) // WINDOW_TICKS
            if n_windows == 0:
                stats.short_tracks += 1
                continue
            for w in range(n_windows):
                ticks = run[w * WINDOW_TICKS:(w + 1) * WINDOW_TICKS:DOWNSAMPLE]
                windows.append(Window(ego_id=vid, ticks=ticks))
    return windows, stats


def index_frames(records):
    """frame_id -> {vehicle_id: (x, y, lane)} lookup."""
    index = {}
    for rec in records:
        index.setdefault(rec.frame_id, {})[rec.vehicle_id] = (
            rec.local_x, rec.local_y, rec.lane_id)
    return index


# ----------------------------------------------------------------------
# sample assembly


def build_sample(window, frame_index, scaler, max_agents, domain=DOMAIN_SOURCE,
                 stats=None):
    """Assemble one TrajectorySample, or None when the window is unusable.

    Scene membership is fixed at the first history frame (ego plus
    neighbors within 30 m and one lane, nearest first); neighbors missing
    from any of the 40 frames are dropped. Adjacency is recomputed per
    history frame over the included agents.
    """
    stats = stats or PipelineStats()
    ticks = window.ticks
    anchor = frame_index.get(window.anchor, {})
    if window.ego_id not in anchor:
        stats.rejected_windows += 1
        return None
    ego_x, ego_y, ego_lane = anchor[window.ego_id]

    candidates = []
    for vid, (x, y, lane) in anchor.items():
        if vid == window.ego_id:
            continue
        if not graph.neighbor_rule((ego_x, ego_y), (x, y), ego_lane, lane):
            continue
        if any(vid not in frame_index.get(int(t), {}) for t in ticks):
            stats.dropped_neighbors += 1
            continue
        candidates.append((float(np.hypot(x - ego_x, y - ego_y)), vid))
    candidates.sort()
    agents = [window.ego_id] + [vid for _, vid in candidates[:max_agents - 1]]

    n_real = len(agents)
    if any(window.ego_id not in frame_index.get(int(t), {}) for t in ticks):
        stats.rejected_windows += 1
        return None

    coords = np.zeros((WINDOW_FRAMES, max_agents, 2))
    lanes = np.zeros((WINDOW_FRAMES, max_agents), dtype=np.int64)
    for f, t in enumerate(ticks):
        frame = frame_index[int(t)]
        for a, vid in enumerate(agents):
            x, y, lane = frame[vid]
            coords[f, a] = (x, y)
            lanes[f, a] = lane

    mask = np.zeros(max_agents)
    mask[:n_real] = 1.0
    adjacency = np.zeros((HISTORY_LEN, max_agents, max_agents))
    for f in range(HISTORY_LEN):
        sg = graph.build_scene_graph(coords[f], lanes[f], mask)
        adjacency[f] = sg.norm_adjacency

    norm = scaler.normalize(coords.reshape(-1, 2)).reshape(coords.shape)
    clipped = int(np.sum(np.abs(norm) > 1.0))
    if clipped:
        stats.clipped_points += clipped
        norm = np.clip(norm, -1.0, 1.0)
    norm[:, mask == 0, :] = 0.0

    agent_ids = np.full(max_agents, -1, dtype=np.int64)
    agent_ids[:n_real] = agents
    sample = TrajectorySample(
        history=norm[:HISTORY_LEN],
        future=norm[HISTORY_LEN:],
        agent_ids=agent_ids,
        lane_ids=lanes[:HISTORY_LEN],
        adjacency=adjacency,
        mask=mask,
        domain=domain,
    )
    sample.validate()
    return sample


def build_dataset(records, scaler, max_agents=8, domain=DOMAIN_SOURCE):
    """Full pipeline from records to validated samples."""
    stats = PipelineStats()
    windows, stats = segment_and_downsample(records, stats)
    frame_index = index_frames(records)
    samples = []
    for window in windows:
        sample = build_sample(window, frame_index, scaler, max_agents,
                              domain=domain, stats=stats)
        if sample is not None:
            samples.append(sample)
    return samples, stats


def all_coordinates(records):
    return np.array([(r.local_x, r.local_y) for r in records])


# ----------------------------------------------------------------------
# shard serialization


def save_samples(path, samples):
    """Pack samples (uniform agent count) into one shard container."""
    if not samples:
        raise ConfigError("refusing to write an empty shard")
    blocks = {
        "history": np.stack([s.history for s in samples]),
        "future": np.stack([s.future for s in samples]),
        "agent_ids": np.stack([s.agent_ids for s in samples]),
        "lane_ids": np.stack([s.lane_ids for s in samples]),
        "adjacency": np.stack([s.adjacency for s in samples]),
        "mask": np.stack([s.mask for s in samples]),
        "domain": np.array([s.domain for s in samples], dtype=np.int64),
    }
    meta = {"count": len(samples), "max_agents": int(samples[0].mask.shape[0]),
            "format": "trajectory-samples"}
    container.write_container(path, container.SHARD_MAGIC, meta, blocks)


def load_samples(path):
    meta, blocks = container.read_container(path, container.SHARD_MAGIC)
    samples = []
    for i in range(meta["count"]):
        sample = TrajectorySample(
            history=blocks["history"][i],
            future=blocks["future"][i],
            agent_ids=blocks["agent_ids"][i],
            lane_ids=blocks["lane_ids"][i],
            adjacency=blocks["adjacency"][i],
            mask=blocks["mask"][i],
            domain=int(blocks["domain"][i]),
        )
        samples.append(sample)
    return samples


def stack_batch(samples):
    """Batch dict of arrays for the model: history, future, adjacency, mask, domain."""
    return {
        "history": np.stack([s.history for s in samples]),
        "future": np.stack([s.future for s in samples]),
        "adjacency": np.stack([s.adjacency for s in samples]),
        "mask": np.stack([s.mask for s in samples]),
        "domain": np.array([s.domain for s in samples], dtype=np.float64),
    }
