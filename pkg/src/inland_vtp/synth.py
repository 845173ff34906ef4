"""Synthetic river sections and discharge-dependent vessel traffic with known ground truth."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import RiverGeometry, dir_sign
from .ingest import GaugeSeries, RawTrip

SEGMENT_RADIUS = {"straight": None, "slight": 2000.0, "sharp": 600.0}
EPOCH0 = 1_600_000_000.0
DAY_S = 86400.0


@dataclass
class BehaviorMode:
    """One traffic mode: where vessels sit laterally and how fast they go.

    ``preferred_offset(q, a) = offset_at_ref + offset_slope * (q - q_ref) + curve_gain * a``
    and ``preferred_speed(q, lane, a) = speed_at_ref + speed_slope * (q - q_ref)
    + lane_speed[lane] + speed_curve_gain * |a|``.
    """

    weight: float
    offset_at_ref: float
    speed_at_ref: float
    offset_slope: float = 0.0
    speed_slope: float = 0.0
    offset_sd: float = 5.0
    speed_sd: float = 0.01
    curve_gain: float = 0.0
    lane_speed: dict = field(default_factory=dict)
    speed_curve_gain: float = 0.0
    q_ref: float = 1000.0

    def preferred_offset(self, q, a=0.0):
        return self.offset_at_ref + self.offset_slope * (np.asarray(q) - self.q_ref) + self.curve_gain * np.asarray(a)

    def preferred_speed(self, q, lane=3, a=0.0):
        lane = np.asarray(lane)
        delta = np.zeros(lane.shape)
        for ln, dv in self.lane_speed.items():
            delta = np.where(lane == int(ln), float(dv), delta)
        return (self.speed_at_ref + self.speed_slope * (np.asarray(q) - self.q_ref) + delta
                + self.speed_curve_gain * np.abs(a))


@dataclass
class ScenarioConfig:
    k_min: float = 600.0
    # [{"kind": "straight"|"slight"|"sharp", "length_km": float, "turn": "left"|"right", "radius": m}]
    segments: list = field(default_factory=lambda: [{"kind": "straight", "length_km": 5.0}])
    half_width: float = 75.0
    vertex_spacing: float = 5.0
    discharge_levels: list = field(default_factory=lambda: [1000.0, 2000.0])
    n_trips: int = 100
    seed: int = 0
    direction: str = "up"
    days_per_level: int = 2
    margin_km: float = 0.3
    dt: float = 20.0
    offset_rate: float = 1.0 / 120.0
    speed_rate: float = 1.0 / 60.0
    gauge_jitter: float = 50.0
    m_max: float = 150.0

    def __post_init__(self):
        if len(self.discharge_levels) < 2:
            raise ValueError("need at least two discharge levels")
        if self.n_trips < 1:
            raise ValueError("n_trips must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(**d)


def gen_river(config: ScenarioConfig) -> RiverGeometry:
    """Chain straight and circular-arc segments into a labeled centerline.

    Vertices lie exactly on the arcs, ``vertex_spacing`` meters apart, and
    KM labels are cumulative chord length.
    """
    ds = config.vertex_spacing
    pts = [np.zeros(2)]
    heading = 0.0
    for seg in config.segments:
        kind = seg["kind"]
        radius = seg.get("radius", SEGMENT_RADIUS[kind])
        n = max(1, int(round(seg["length_km"] * 1000.0 / ds)))
        if radius is None:
            dtheta = 0.0
        else:
            # left turns are counter-clockwise when travelling towards increasing KM
            turn = 1.0 if seg.get("turn", "right") == "left" else -1.0
            dtheta = turn * 2.0 * np.arcsin(ds / (2.0 * radius))
        for _ in range(n):
            h = heading + 0.5 * dtheta
            pts.append(pts[-1] + ds * np.array([np.cos(h), np.sin(h)]))
            heading += dtheta
    xy = np.array(pts)
    chord = np.hypot(*np.diff(xy, axis=0).T)
    km = config.k_min + np.concatenate([[0.0], np.cumsum(chord)]) / 1000.0
    return RiverGeometry.from_centerline(xy, km, config.half_width, m_max=config.m_max)


def gen_gauges(level: float, span: float, jitter: float, rng=None, t0: float = EPOCH0) -> GaugeSeries:
    """Readings every 15 minutes, uniformly jittered around ``level``."""
    n = int(span // 900.0)
    t = t0 + 900.0 * np.arange(n)
    if jitter > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        q = level + rng.uniform(-jitter, jitter, size=n)
    else:
        q = np.full(n, float(level))
    return GaugeSeries(t, q)


def day_levels(config: ScenarioConfig) -> np.ndarray:
    n_days = len(config.discharge_levels) * config.days_per_level
    return np.array([config.discharge_levels[d % len(config.discharge_levels)] for d in range(n_days)], dtype=float)


def gen_gauge_record(config: ScenarioConfig) -> GaugeSeries:
    """Gauge series covering every simulated day, one discharge level per day."""
    rng = np.random.default_rng([config.seed, 0x6A])
    parts = [gen_gauges(q, DAY_S, config.gauge_jitter, rng, EPOCH0 + d * DAY_S)
             for d, q in enumerate(day_levels(config))]
    return GaugeSeries(np.concatenate([p.t for p in parts]), np.concatenate([p.q for p in parts]))


def gen_traffic(geom: RiverGeometry, modes: list[BehaviorMode], config: ScenarioConfig,
                trip_prefix: str = "trip"):
    """Simulate one trip per vessel through the whole section.

    Offsets and speeds follow exact discretisations of mean-reverting
    processes whose means are the mode's preferred functions. Every trip has
    its own RNG stream seeded from ``(seed, trip index)``.

    Returns ``(trips, truth)`` where ``truth`` holds one dict per trip.
    """
    weights = np.array([m.weight for m in modes], dtype=float)
    if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("mode weights must be positive and sum to 1")
    sign = dir_sign(config.direction)
    levels = day_levels(config)
    n = config.n_trips
    dt = config.dt
    lo, hi = geom.k_min + config.margin_km, geom.k_max - config.margin_km
    if hi <= lo:
        raise ValueError("river too short for the configured margins")

    rngs = [np.random.default_rng([config.seed, i]) for i in range(n)]
    mode_idx = np.array([r.choice(len(modes), p=weights) for r in rngs])
    day = np.array([r.integers(len(levels)) for r in rngs])
    q = levels[day]
    t0 = EPOCH0 + day * DAY_S + np.array([r.uniform(3600.0, DAY_S - 8 * 3600.0) for r in rngs])

    min_speed = 0.05
    max_steps = int(np.ceil((hi - lo) / (min_speed * dt / 60.0))) + 2
    noise = np.stack([r.standard_normal((max_steps + 1, 2)) for r in rngs])  # (n, steps, 2)

    mode_of = [modes[i] for i in mode_idx]
    off_sd = np.array([m.offset_sd for m in mode_of])
    spd_sd = np.array([m.speed_sd for m in mode_of])
    x_lim = geom.m_max - 1.0

    def targets(km, x):
        a = geom.curvature(km, config.direction)
        lane = geom.lanes(km, x, config.direction)
        tx = np.empty(n)
        ts = np.empty(n)
        for j, m in enumerate(modes):
            sel = mode_idx == j
            if sel.any():
                tx[sel] = m.preferred_offset(q[sel], a[sel])
                ts[sel] = m.preferred_speed(q[sel], lane[sel], a[sel])
        return tx, ts

    km = np.full(n, lo if sign > 0 else hi)
    tx, ts = targets(km, np.zeros(n))
    x = np.clip(tx + off_sd * noise[:, 0, 0], -x_lim, x_lim)
    tx, ts = targets(km, x)
    s = np.maximum(ts + spd_sd * noise[:, 0, 1], min_speed)

    ax = np.exp(-dt * config.offset_rate)
    av = np.exp(-dt * config.speed_rate)
    bx = np.sqrt(1.0 - ax * ax)
    bv = np.sqrt(1.0 - av * av)
    km_path, x_path = [km.copy()], [x.copy()]
    active = np.ones(n, dtype=bool)
    n_pts = np.ones(n, dtype=int)
    for step in range(1, max_steps + 1):
        if not active.any():
            break
        km = np.where(active, km + sign * s * dt / 60.0, km)
        done = (km >= hi) if sign > 0 else (km <= lo)
        km = np.clip(km, lo, hi)
        tx, ts = targets(km, x)
        x_new = tx + (x - tx) * ax + off_sd * bx * noise[:, step, 0]
        x = np.where(active, np.clip(x_new, -x_lim, x_lim), x)
        s = np.where(active, np.maximum(ts + (s - ts) * av + spd_sd * bv * noise[:, step, 1], min_speed), s)
        km_path.append(km.copy())
        x_path.append(x.copy())
        n_pts += active
        active &= ~done
    km_path = np.array(km_path).T
    x_path = np.array(x_path).T

    trips, truth = [], []
    for i in range(n):
        m = n_pts[i]
        xy = geom.unproject(km_path[i, :m], x_path[i, :m], config.direction)
        tid = f"{trip_prefix}{i:05d}"
        trips.append(RawTrip(tid, t0[i] + dt * np.arange(m), xy, dir=config.direction))
        truth.append({"trip_id": tid, "mode": int(mode_idx[i]), "q": float(q[i]),
                      "dir": config.direction, "mode_params": asdict(mode_of[i])})
    return trips, truth


def write_truth_json(truth: list[dict], path) -> None:
    with open(path, "w") as fh:
        json.dump(truth, fh, sort_keys=True, indent=1)


def default_modes() -> list[BehaviorMode]:
    """Upstream traffic mimicking discharge-dependent lateral shifts and a bimodal outer lane."""
    return [
        BehaviorMode(weight=0.5, offset_at_ref=-30.0, offset_slope=-0.01, offset_sd=8.0,
                     speed_at_ref=0.28, speed_slope=-4e-5, speed_sd=0.03, curve_gain=-15000.0),
        BehaviorMode(weight=0.25, offset_at_ref=35.0, offset_slope=0.006, offset_sd=8.0,
                     speed_at_ref=0.22, speed_slope=-3e-5, speed_sd=0.03, curve_gain=-15000.0),
        BehaviorMode(weight=0.125, offset_at_ref=100.0, offset_sd=5.0,
                     speed_at_ref=0.13, speed_slope=-2e-5, speed_sd=0.02),
        BehaviorMode(weight=0.125, offset_at_ref=100.0, offset_sd=5.0,
                     speed_at_ref=0.27, speed_slope=-2e-5, speed_sd=0.02),
    ]


def benchmark_scenario(n_trips: int = 4200, seed: int = 0) -> tuple[ScenarioConfig, list[BehaviorMode]]:
    """Upstream scenario where discharge and the bends ahead drive offsets and speeds.

    A 10.5 km section alternates straights with sharp and slight bends over
    five discharge levels. Inner-lane modes shift laterally and slow down with
    rising discharge and in bends; the outer lane carries a slow and a fast mode.
    """
    segments = [
        {"kind": "straight", "length_km": 1.5},
        {"kind": "sharp", "length_km": 1.5, "turn": "right"},
        {"kind": "straight", "length_km": 1.5},
        {"kind": "slight", "length_km": 2.5, "turn": "left"},
        {"kind": "sharp", "length_km": 1.5, "turn": "left"},
        {"kind": "straight", "length_km": 2.0},
    ]
    config = ScenarioConfig(segments=segments, discharge_levels=[1000.0, 1500.0, 2000.0, 2500.0, 3000.0],
                            n_trips=n_trips, seed=seed, days_per_level=4, speed_rate=1.0 / 30.0)
    sd = 0.04
    modes = [
        BehaviorMode(0.5, -30.0, 0.32, offset_slope=-0.015, speed_slope=-8e-5, offset_sd=8.0, speed_sd=sd,
                     curve_gain=-15000.0, speed_curve_gain=-60.0),
        BehaviorMode(0.25, 35.0, 0.26, offset_slope=0.01, speed_slope=-6e-5, offset_sd=8.0, speed_sd=sd,
                     curve_gain=-15000.0, speed_curve_gain=-60.0),
        BehaviorMode(0.125, 100.0, 0.13, speed_slope=-2e-5, offset_sd=5.0, speed_sd=0.7 * sd),
        BehaviorMode(0.125, 100.0, 0.27, speed_slope=-4e-5, offset_sd=5.0, speed_sd=0.7 * sd),
    ]
    return config, modes
