"""Trip parsing, 1-minute resampling, annotation and sequence sampling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import GaugeGap, TooShort
from .geometry import RiverGeometry, dir_sign

STEP_S = 60.0
Q_BIN = 250.0
GAUGE_MAX_AGE_S = 24 * 3600.0


@dataclass
class RawTrip:
    trip_id: str
    t: np.ndarray  # (n,) seconds, strictly increasing
    xy: np.ndarray  # (n, 2) meters
    dir: str | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if len(self.t) != len(self.xy):
            raise ValueError("timestamps and points differ in length")
        if len(self.t) < 2 or np.any(np.diff(self.t) <= 0):
            raise ValueError(f"trip {self.trip_id}: need >= 2 strictly increasing timestamps")


@dataclass
class LabeledTrip:
    """Time-ordered states in river coordinates, one row per minute.

    The final resampled point has no successor and is dropped, so every
    stored step carries a defined ``y``.
    """

    trip_id: str
    dir: str
    t: np.ndarray
    km: np.ndarray
    offset: np.ndarray
    y: np.ndarray
    a: np.ndarray
    q_raw: np.ndarray
    q_bin: np.ndarray
    lane: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def hecto(self) -> np.ndarray:
        return hecto_index(self.km)

    def to_json(self) -> dict:
        steps = [
            {"t": float(t), "km": float(k), "offset": float(x), "y": float(y), "a": float(a),
             "q_raw": float(qr), "q_bin": float(qb), "lane": int(ln)}
            for t, k, x, y, a, qr, qb, ln in zip(self.t, self.km, self.offset, self.y, self.a,
                                                  self.q_raw, self.q_bin, self.lane)
        ]
        return {"trip_id": self.trip_id, "dir": self.dir, "steps": steps}

    @classmethod
    def from_json(cls, d: dict) -> "LabeledTrip":
        cols = {k: np.array([s[k] for s in d["steps"]], dtype=float)
                for k in ("t", "km", "offset", "y", "a", "q_raw", "q_bin")}
        lane = np.array([s["lane"] for s in d["steps"]], dtype=int)
        return cls(trip_id=d["trip_id"], dir=d["dir"], lane=lane, **cols)


@dataclass
class Window:
    """``n_steps`` consecutive steps cut from one labeled trip."""

    trip_id: str
    dir: str
    start: int
    km: np.ndarray
    offset: np.ndarray
    y: np.ndarray
    a: np.ndarray
    q_bin: np.ndarray
    lane: np.ndarray
    t: np.ndarray = field(repr=False, default=None)


def hecto_index(km) -> np.ndarray:
    """Integer hectometer id (KM rounded to 0.1, times ten)."""
    return np.floor(np.asarray(km, dtype=float) * 10.0 + 0.5).astype(int)


def bin_discharge(q) -> np.ndarray:
    """Nearest multiple of 250 m^3/s; exact ties round up."""
    return np.floor(np.asarray(q, dtype=float) / Q_BIN + 0.5) * Q_BIN


# -- splitting --------------------------------------------------------------------


def split_trips(stream: Iterable[tuple[str, np.ndarray, np.ndarray]], gap: float = 900.0,
                geom: RiverGeometry | None = None, reversal_km: float = 0.05) -> list[RawTrip]:
    """Cut per-vessel position streams into trips.

    A new trip starts after a time gap larger than ``gap`` seconds and, when
    ``geom`` is given, after the vessel has moved back by more than
    ``reversal_km`` against its established direction. Segments with a single
    point are discarded.
    """
    trips = []
    for vessel, t, xy in stream:
        t = np.asarray(t, dtype=float)
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if len(t) == 0:
            continue
        cuts = set((np.flatnonzero(np.diff(t) > gap) + 1).tolist())
        if geom is not None and len(t) > 1:
            km, _ = geom.project(xy)
            cuts |= set(_reversal_cuts(km, cuts, reversal_km))
        bounds = [0, *sorted(cuts), len(t)]
        n = 0
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if hi - lo < 2:
                continue
            trips.append(RawTrip(f"{vessel}-{n}", t[lo:hi], xy[lo:hi]))
            n += 1
    return trips


def _reversal_cuts(km: np.ndarray, cuts: set, tol: float) -> list[int]:
    out = []
    start, sign, extreme = 0, 0, km[0]
    for i in range(1, len(km)):
        if i in cuts:
            start, sign, extreme = i, 0, km[i]
            continue
        if sign == 0:
            if abs(km[i] - km[start]) > tol:
                sign = 1 if km[i] > km[start] else -1
                extreme = km[i]
            continue
        if sign * (km[i] - extreme) > 0:
            extreme = km[i]
        elif sign * (extreme - km[i]) > tol:
            # cut at the turning point
            j = start + int(np.argmax(sign * km[start:i]))
            out.append(j + 1 if j + 1 < i else i)
            start, sign, extreme = out[-1], 0, km[out[-1]]
    return out


# -- resampling ---------------------------------------------------------------------


def _three_point_slopes(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Derivative of the local interpolating quadratic at every sample.

    Interior points use the centered stencil, endpoints a one-sided one.
    Both are exact for quadratics, also on non-uniform grids.
    """
    n = len(t)
    if n == 2:
        s = (f[1] - f[0]) / (t[1] - t[0])
        return np.stack([s, s])
    d = np.empty_like(f)
    h1 = (t[1:-1] - t[:-2])[:, None]
    h2 = (t[2:] - t[1:-1])[:, None]
    d[1:-1] = (-h2 / (h1 * (h1 + h2)) * f[:-2] + (h2 - h1) / (h1 * h2) * f[1:-1]
               + h1 / (h2 * (h1 + h2)) * f[2:])
    a, b = t[1] - t[0], t[2] - t[1]
    d[0] = -(2 * a + b) / (a * (a + b)) * f[0] + (a + b) / (a * b) * f[1] - a / (b * (a + b)) * f[2]
    a, b = t[-2] - t[-3], t[-1] - t[-2]
    d[-1] = b / (a * (a + b)) * f[-3] - (a + b) / (a * b) * f[-2] + (2 * b + a) / (b * (a + b)) * f[-1]
    return d


def resample_1min(trip: RawTrip, step: float = STEP_S) -> RawTrip:
    """Cubic Hermite resampling onto a grid starting at the first timestamp."""
    span = trip.t[-1] - trip.t[0]
    if span < 2 * step:
        raise TooShort(f"trip {trip.trip_id} spans {span:.0f} s, need >= {2 * step:.0f} s")
    grid = trip.t[0] + step * np.arange(int(np.floor(span / step + 1e-9)) + 1)
    slopes = _three_point_slopes(trip.t, trip.xy)
    xy = CubicHermiteSpline(trip.t, trip.xy, slopes, axis=0)(grid)
    xy[0] = trip.xy[0]
    return RawTrip(trip.trip_id, grid, xy, dir=trip.dir)


# -- gauges & annotation --------------------------------------------------------------


@dataclass
class GaugeSeries:
    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        order = np.argsort(np.asarray(self.t, dtype=float), kind="stable")
        self.t = np.asarray(self.t, dtype=float)[order]
        self.q = np.asarray(self.q, dtype=float)[order]

    def reading_at(self, ts) -> np.ndarray:
        """Latest reading at or before each timestamp."""
        ts = np.asarray(ts, dtype=float)
        idx = np.searchsorted(self.t, ts, side="right") - 1
        if len(self.t) == 0 or np.any(idx < 0) or np.any(ts - self.t[np.maximum(idx, 0)] > GAUGE_MAX_AGE_S):
            raise GaugeGap("no discharge reading within 24 h before a trip timestamp")
        return self.q[idx]


def annotate(trip: RawTrip, geom: RiverGeometry, gauges: GaugeSeries,
             direction: str | None = None) -> LabeledTrip:
    """Label a resampled trip with river coordinates, speeds, curvature, lane and discharge."""
    km, off = geom.project(trip.xy, "up")
    if direction is None:
        direction = trip.dir or ("up" if km[-1] >= km[0] else "down")
    sign = dir_sign(direction)
    off = sign * off
    y = sign * np.diff(km)
    km, off, t = km[:-1], off[:-1], trip.t[:-1]
    q_raw = gauges.reading_at(t)
    return LabeledTrip(
        trip_id=trip.trip_id, dir=direction, t=t, km=km, offset=off, y=y,
        a=geom.curvature(km, direction), q_raw=q_raw, q_bin=bin_discharge(q_raw),
        lane=geom.lanes(km, off, direction),
    )


# -- sequence sampling ------------------------------------------------------------------


def split_ratio_counts(n: int, ratio=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    n_train = int(np.floor(ratio[0] * n + 0.5))
    n_val = min(int(np.floor(ratio[1] * n + 0.5)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_trip_ids(trip_ids: list[str], ratio=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, list[str]]:
    ids = sorted(trip_ids)
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train, n_val, _ = split_ratio_counts(len(ids), ratio)
    shuffled = [ids[i] for i in perm]
    return {"train": shuffled[:n_train], "val": shuffled[n_train:n_train + n_val],
            "test": shuffled[n_train + n_val:]}


def windows_of(trip: LabeledTrip, n_steps: int) -> list[Window]:
    """Consecutive non-overlapping windows; those touching non-finite steps are dropped."""
    good = (np.isfinite(trip.km) & np.isfinite(trip.offset) & np.isfinite(trip.y)
            & np.isfinite(trip.a) & np.isfinite(trip.q_bin))
    out = []
    for s in range(0, len(trip) - n_steps + 1, n_steps):
        sl = slice(s, s + n_steps)
        if not good[sl].all():
            continue
        out.append(Window(trip.trip_id, trip.dir, s, trip.km[sl], trip.offset[sl], trip.y[sl],
                          trip.a[sl], trip.q_bin[sl], trip.lane[sl], trip.t[sl]))
    return out


def sample_sequences(trips: list[LabeledTrip], n_steps: int = 11, split=(0.8, 0.1, 0.1),
                     seed: int = 0) -> dict[str, list[Window]]:
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    by_id = {t.trip_id: t for t in trips}
    parts = split_trip_ids(list(by_id), split, seed)
    return {name: [w for tid in ids for w in windows_of(by_id[tid], n_steps)]
            for name, ids in parts.items()}


# -- file formats -------------------------------------------------------------------------


def read_trips_jsonl(path) -> list[RawTrip]:
    trips = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            pts = d["points"]
            trips.append(RawTrip(d["trip_id"], [p["t"] for p in pts],
                                 [[p["x"], p["y"]] for p in pts], dir=d.get("dir")))
    return trips


def write_trips_jsonl(trips: list[RawTrip], path) -> None:
    with open(path, "w") as fh:
        for tr in trips:
            pts = [{"t": float(t), "x": float(x), "y": float(y)} for t, (x, y) in zip(tr.t, tr.xy)]
            fh.write(json.dumps({"trip_id": tr.trip_id, "dir": tr.dir, "points": pts}, sort_keys=True))
            fh.write("\n")


def read_gauges_csv(path) -> GaugeSeries:
    path = Path(path)
    if not path.exists():
        raise GaugeGap(f"gauge file {path} not found")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return GaugeSeries([float(r["timestamp"]) for r in rows], [float(r["q_m3s"]) for r in rows])


def write_gauges_csv(series: GaugeSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "q_m3s"])
        for t, q in zip(series.t, series.q):
            w.writerow([repr(float(t)), repr(float(q))])


def read_labeled_jsonl(path) -> list[LabeledTrip]:
    with open(path) as fh:
        return [LabeledTrip.from_json(json.loads(line)) for line in fh if line.strip()]


def write_labeled_jsonl(trips: list[LabeledTrip], path) -> None:
    with open(path, "w") as fh:
        for tr in trips:
            fh.write(json.dumps(tr.to_json(), sort_keys=True))
            fh.write("\n")
