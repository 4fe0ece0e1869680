"""Synthetic multi-lane traffic for desk-scale experiments.

A ring road of fixed length is simulated at 10 Hz with car-following and
occasional lane changes; a vehicle that passes the end of the stretch
re-enters at the start under a fresh id, so longitudinal coordinates stay
bounded for every domain. The target domain differs from the source by a
mean-speed offset and a lane-change-rate multiplier.
"""

from dataclasses import dataclass, replace

import numpy as np

from .config import ConfigError, coerce, read_kv
from .data import DOMAIN_SOURCE, DOMAIN_TARGET, FRAME_HZ, TrajectoryRecord
from .seeding import stream

LANE_WIDTH_M = 3.7
LANE_CHANGE_TICKS = 30  # 3 s lateral transition
FOLLOW_GAP_M = 15.0


@dataclass
class SynthSpec:
    lanes: int = 3
    vehicles: int = 12
    duration_s: float = 120.0
    mean_speed: float = 12.0
    speed_offset: float = 0.0
    lanechange_rate: float = 0.02
    lanechange_mult: float = 1.0
    noise_std: float = 0.3
    road_len: float = 400.0
    seed: int = 0

    def __post_init__(self):
        if self.lanes < 1 or self.vehicles < 1:
            raise ConfigError("lanes and vehicles must be >= 1")
        if self.duration_s <= 0 or self.mean_speed <= 0 or self.road_len <= 0:
            raise ConfigError("duration_s, mean_speed and road_len must be positive")
        if self.noise_std < 0 or self.lanechange_rate < 0 or self.lanechange_mult < 0:
            raise ConfigError("noise_std, lanechange_rate and lanechange_mult must be >= 0")

    @classmethod
    def from_kv(cls, values):
        return cls(
            lanes=coerce(values, "lanes", int, cls.lanes),
            vehicles=coerce(values, "vehicles", int, cls.vehicles),
            duration_s=coerce(values, "duration_s", float, cls.duration_s),
            mean_speed=coerce(values, "mean_speed", float, cls.mean_speed),
            speed_offset=coerce(values, "speed_offset", float, cls.speed_offset),
            lanechange_rate=coerce(values, "lanechange_rate", float, cls.lanechange_rate),
            lanechange_mult=coerce(values, "lanechange_mult", float, cls.lanechange_mult),
            noise_std=coerce(values, "noise_std", float, cls.noise_std),
            road_len=coerce(values, "road_len", float, cls.road_len),
            seed=coerce(values, "seed", int, cls.seed),
        )

    @classmethod
    def from_file(cls, path):
        return cls.from_kv(read_kv(path))


class _Vehicle:
    __slots__ = ("vid", "lane", "lane_from", "lane_to", "change_tick",
                 "y", "speed", "desired")

    def __init__(self, vid, lane, y, speed, desired):
        self.vid = vid
        self.lane = lane
        self.lane_from = lane
        self.lane_to = lane
        self.change_tick = -1
        self.y = y
        self.speed = speed
        self.desired = desired


def _simulate(lanes, vehicles, n_ticks, mean_speed, lc_rate, noise_std,
              road_len, rng):
    dt = 1.0 / FRAME_HZ
    fleet = []
    next_id = 1
    for i in range(vehicles):
        lane = i % lanes
        y = (i // lanes) * (road_len / max(1, (vehicles + lanes - 1) // lanes))
        desired = max(1.0, mean_speed + rng.normal(0.0, 1.0))
        fleet.append(_Vehicle(next_id, lane, y + rng.uniform(0, 5), desired, desired))
        next_id += 1

    records = []
    for tick in range(n_ticks):
        # current integer lane of each vehicle (midpoint switch during a change)
        def lane_id(v):
            if v.change_tick < 0:
                return v.lane_to
            progress = (tick - v.change_tick) / LANE_CHANGE_TICKS
            return v.lane_to if progress >= 0.5 else v.lane_from

        # car following against the nearest leader in the same lane (ring gap)
        by_lane = {}
        for v in fleet:
            by_lane.setdefault(lane_id(v), []).append(v)
        leader_speed = {}
        for lane_fleet in by_lane.values():
            lane_fleet.sort(key=lambda v: v.y)
            for i, v in enumerate(lane_fleet):
                if len(lane_fleet) == 1:
                    continue
                lead = lane_fleet[(i + 1) % len(lane_fleet)]
                gap = (lead.y - v.y) % road_len
                if 0 < gap < FOLLOW_GAP_M:
                    leader_speed[v.vid] = lead.speed * gap / FOLLOW_GAP_M

        for v in fleet:
            # Ornstein-Uhlenbeck pull toward desired speed, plus follow limit
            v.speed += 0.5 * (v.desired - v.speed) * dt + noise_std * np.sqrt(dt) * rng.normal()
            v.speed = max(0.0, v.speed)
            if v.vid in leader_speed:
                v.speed = min(v.speed, leader_speed[v.vid])

            if v.change_tick >= 0:
                progress = (tick - v.change_tick) / LANE_CHANGE_TICKS
                if progress >= 1.0:
                    v.lane = float(v.lane_to)
                    v.lane_from = v.lane_to
                    v.change_tick = -1
                else:
                    v.lane = v.lane_from + (v.lane_to - v.lane_from) * progress
            elif rng.random() < lc_rate * dt:
                options = [l for l in (v.lane_to - 1, v.lane_to + 1) if 0 <= l < lanes]
                if options:
                    v.lane_from = v.lane_to
                    v.lane_to = int(rng.choice(options))
                    v.change_tick = tick

            v.y += v.speed * dt
            if v.y >= road_len:
                v.y -= road_len
                v.vid = next_id  # re-enter as a new trajectory
                next_id += 1

            records.append(TrajectoryRecord(
                vehicle_id=v.vid,
                frame_id=tick,
                local_x=round(v.lane * LANE_WIDTH_M, 6),
                local_y=round(v.y, 6),
                lane_id=int(lane_id(v)),
            ))
    records.sort(key=lambda r: (r.vehicle_id, r.frame_id))
    return records


def synth_generate(spec, seed=None):
    """Two labeled record lists (source, target), deterministic per seed."""
    seed = spec.seed if seed is None else seed
    n_ticks = int(round(spec.duration_s * FRAME_HZ))
    source = _simulate(spec.lanes, spec.vehicles, n_ticks, spec.mean_speed,
                       spec.lanechange_rate, spec.noise_std, spec.road_len,
                       stream(seed, "synth", DOMAIN_SOURCE))
    target = _simulate(spec.lanes, spec.vehicles, n_ticks,
                       spec.mean_speed + spec.speed_offset,
                       spec.lanechange_rate * spec.lanechange_mult,
                       spec.noise_std, spec.road_len,
                       stream(seed, "synth", DOMAIN_TARGET))
    return source, target


def shifted_spec(spec):
    """Spec describing the target domain after applying the shift knobs."""
    return replace(spec, mean_speed=spec.mean_speed + spec.speed_offset,
                   speed_offset=0.0, lanechange_mult=1.0,
                   lanechange_rate=spec.lanechange_rate * spec.lanechange_mult)
