"""Lookup dictionaries of spline-interpolated GMM density fields.

Each field covers one ``(dir, q)`` (lateral) or ``(dir, q, lane)``
(longitudinal) key. Rows of the sampled density array are GMM pdfs on the
hectometer grid; an interpolating bicubic spline turns the array into a
surface over ``(km, offset)`` or ``(km, speed)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import BSpline, RectBivariateSpline, bisplev

from .errors import EmptyKey, LookupFailure
from .geometry import dir_sign
from .gmm import GmmGrid
from .ingest import hecto_index

MAGIC = b"VTPLOOK1"
Q_SHIFTS = (0, -250, 250, -500, 500)
HECTO_KM = 0.1


@dataclass(frozen=True)
class LookupParams:
    m_max: int = 150
    m_prime: float = 100.0
    r_d: float = 1.0
    s_max: float = 0.6
    r_v: float = 100.0
    H: int = 20
    s_step: float = 0.01  # knot spacing of the speed axis

    def __post_init__(self):
        if self.m_prime > self.m_max:
            raise ValueError("m_prime must not exceed m_max")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        for name, val in (("D", 2 * self.m_prime * self.r_d + 1), ("V", self.s_max * self.r_v + 1)):
            if abs(val - round(val)) > 1e-9:
                raise ValueError(f"{name} = {val} is not an integer")

    @property
    def D(self) -> int:
        return int(round(2 * self.m_prime * self.r_d + 1))

    @property
    def V(self) -> int:
        return int(round(self.s_max * self.r_v + 1))

    @property
    def offsets(self) -> np.ndarray:
        return -self.m_prime + np.arange(self.D) / self.r_d

    @property
    def speeds(self) -> np.ndarray:
        return np.arange(self.V) / self.r_v

    def offset_knots(self) -> np.ndarray:
        return np.arange(-self.m_max, self.m_max + 1, dtype=float)

    def speed_knots(self) -> np.ndarray:
        n = int(round(self.s_max / self.s_step))
        return np.arange(n + 1) * self.s_step


class DensityField:
    """Interpolating bicubic surface over a hectometer grid and a value grid.

    Evaluation clamps queries to the knot box and clips negative spline
    undershoot to zero.
    """

    def __init__(self, key: tuple, k_knots, v_knots, tx, ty, coeffs, filled: tuple = ()):
        self.key = tuple(key)
        self.k_knots = np.array(k_knots, dtype=float)
        self.v_knots = np.array(v_knots, dtype=float)
        self.tx = np.array(tx, dtype=float)
        self.ty = np.array(ty, dtype=float)
        self.kx = len(self.tx) - len(self.k_knots) - 1
        self.ky = len(self.ty) - len(self.v_knots) - 1
        self.coeffs = np.array(coeffs, dtype=float).reshape(len(self.tx) - self.kx - 1, -1)
        self.filled = tuple(filled)
        for a in (self.k_knots, self.v_knots, self.tx, self.ty, self.coeffs):
            a.setflags(write=False)
        self._grid_cache: dict = {}

    @classmethod
    def fit(cls, key, k_knots, v_knots, values, filled=()) -> "DensityField":
        k_knots = np.asarray(k_knots, dtype=float)
        v_knots = np.asarray(v_knots, dtype=float)
        kx = min(3, len(k_knots) - 1)
        ky = min(3, len(v_knots) - 1)
        spl = RectBivariateSpline(k_knots, v_knots, np.asarray(values, dtype=float), kx=kx, ky=ky, s=0)
        tx, ty, c = spl.tck
        return cls(key, k_knots, v_knots, tx, ty, c, filled)

    @property
    def k_range(self) -> tuple[float, float]:
        return float(self.k_knots[0]), float(self.k_knots[-1])

    def __call__(self, k, v) -> np.ndarray:
        """Pointwise evaluation at matching arrays ``k`` and ``v``."""
        k = np.clip(np.atleast_1d(np.asarray(k, dtype=float)), *self.k_range)
        v = np.clip(np.atleast_1d(np.asarray(v, dtype=float)), self.v_knots[0], self.v_knots[-1])
        tck = (self.tx, self.ty, self.coeffs.ravel(), self.kx, self.ky)
        out = np.array([bisplev(a, b, tck) for a, b in zip(k, v)])
        return np.maximum(out, 0.0)

    def _grid_factor(self, grid: np.ndarray) -> np.ndarray:
        key = (len(grid), float(grid[0]), float(grid[-1]))
        g = self._grid_cache.get(key)
        if g is None:
            gv = np.clip(grid, self.v_knots[0], self.v_knots[-1])
            by = BSpline.design_matrix(gv, self.ty, self.ky).toarray()
            g = self.coeffs @ by.T
            g.setflags(write=False)
            self._grid_cache[key] = g
        return g

    def rows(self, ks, grid) -> np.ndarray:
        """Evaluate the surface at every ``k`` in ``ks`` on a fixed value grid: ``(len(ks), len(grid))``."""
        ks = np.clip(np.asarray(ks, dtype=float).ravel(), *self.k_range)
        bx = BSpline.design_matrix(ks, self.tx, self.kx)
        return np.maximum(bx @ self._grid_factor(np.asarray(grid, dtype=float)), 0.0)


def _fill_rows(hectos: np.ndarray, fitted: dict, sampler):
    """Sampled rows per hectometer, borrowing the nearest fitted hectometer where missing."""
    have = np.array(sorted(fitted))
    rows, filled = [], []
    for h in hectos:
        if h in fitted:
            rows.append(sampler(fitted[h]))
            continue
        dist = np.abs(have - h)
        src = int(have[np.flatnonzero(dist == dist.min())[0]])  # ties -> lower hectometer
        rows.append(sampler(fitted[src]))
        filled.append(int(h))
    return np.array(rows), tuple(filled)


def hecto_knots(k_min: float, k_max: float) -> np.ndarray:
    """Hectometer ids covering the KM range."""
    return np.arange(hecto_index(k_min), hecto_index(k_max) + 1)


class LookupDict:
    """Lateral and longitudinal density fields plus sampling parameters."""

    def __init__(self, lat: dict, lon: dict, params: LookupParams, k_range: tuple[float, float]):
        self.lat = dict(lat)
        self.lon = dict(lon)
        self.params = params
        self.k_range = (float(k_range[0]), float(k_range[1]))
        self._offsets = params.offsets
        self._speeds = params.speeds

    @property
    def D(self) -> int:
        return self.params.D

    @property
    def V(self) -> int:
        return self.params.V

    @property
    def H(self) -> int:
        return self.params.H

    # -- fallback -------------------------------------------------------------------

    def resolve_lat(self, direction: str, q_bin: float):
        """``((dir, q'), shifted)`` for the first available discharge shift."""
        q = int(round(q_bin))
        for dq in Q_SHIFTS:
            key = (direction, q + dq)
            if key in self.lat:
                return key, dq != 0
        raise LookupFailure(f"no lateral field for {direction} q={q} within +/-500")

    def resolve_lon(self, direction: str, q_bin: float, lane: int):
        """Discharge shifts in the own lane first, then in the neighbouring lanes."""
        q = int(round(q_bin))
        lane = int(lane)
        for ln in (lane, lane - 1, lane + 1):
            if not 1 <= ln <= 4:
                continue
            for dq in Q_SHIFTS:
                key = (direction, q + dq, ln)
                if key in self.lon:
                    return key, (dq != 0 or ln != lane)
        raise LookupFailure(f"no longitudinal field for {direction} q={q} lane={lane} within +/-500, +/-1 lane")

    # -- sampling ---------------------------------------------------------------------

    def sample_p_lat(self, direction: str, q_bin: float, k: float, with_flag: bool = False):
        key, shifted = self.resolve_lat(direction, q_bin)
        vec = self.lat[key].rows([k], self._offsets)[0]
        return (vec, shifted) if with_flag else vec

    def sample_p_lon(self, direction: str, q_bin: float, lane: int, k: float, with_flag: bool = False):
        key, shifted = self.resolve_lon(direction, q_bin, lane)
        vec = self.lon[key].rows([k], self._speeds)[0]
        return (vec, shifted) if with_flag else vec

    def ahead_kms(self, direction: str, k):
        """KMs of the next ``H`` hectometers, clamped to the river; also returns the edge flags."""
        k = np.asarray(k, dtype=float)
        steps = dir_sign(direction) * HECTO_KM * np.arange(1, self.H + 1)
        raw = k[..., None] + steps
        clamped = np.clip(raw, *self.k_range)
        return clamped, np.any(raw != clamped, axis=-1)

    def ahead_matrices(self, direction: str, q_bin: float, lane: int, k: float, with_flag: bool = False):
        kms, edge = self.ahead_kms(direction, k)
        lat_key, _ = self.resolve_lat(direction, q_bin)
        lon_key, _ = self.resolve_lon(direction, q_bin, lane)
        m_lat = self.lat[lat_key].rows(kms, self._offsets)
        m_lon = self.lon[lon_key].rows(kms, self._speeds)
        return (m_lat, m_lon, bool(edge)) if with_flag else (m_lat, m_lon)

    def lat_rows(self, direction: str, q_bins, ks) -> np.ndarray:
        """Batched ``p_lat``: ``q_bins`` has shape ``(n,)``, ``ks`` shape ``(n, ...)``."""
        q_bins = np.asarray(q_bins)
        ks = np.asarray(ks, dtype=float)
        out = np.empty(ks.shape + (self.D,))
        for q in np.unique(q_bins):
            sel = q_bins == q
            key, _ = self.resolve_lat(direction, q)
            out[sel] = self.lat[key].rows(ks[sel], self._offsets).reshape(ks[sel].shape + (self.D,))
        return out

    def lon_rows(self, direction: str, q_bins, lanes, ks) -> np.ndarray:
        """Batched ``p_lon``; ``lanes`` broadcasts against ``q_bins``."""
        q_bins = np.asarray(q_bins)
        lanes = np.broadcast_to(np.asarray(lanes), q_bins.shape)
        ks = np.asarray(ks, dtype=float)
        out = np.empty(ks.shape + (self.V,))
        pairs = np.stack([q_bins.astype(float), lanes.astype(float)], axis=-1)
        for q, ln in np.unique(pairs.reshape(-1, 2), axis=0):
            sel = (q_bins == q) & (lanes == ln)
            key, _ = self.resolve_lon(direction, q, int(ln))
            out[sel] = self.lon[key].rows(ks[sel], self._speeds).reshape(ks[sel].shape + (self.V,))
        return out

    # -- persistence ------------------------------------------------------------------

    def save(self, path) -> None:
        blobs = []
        entries = []
        offset = 0
        for kind, fields in (("lat", self.lat), ("lon", self.lon)):
            for key in sorted(fields):
                f = fields[key]
                arrs = {}
                for name in ("k_knots", "v_knots", "tx", "ty", "coeffs"):
                    a = np.ascontiguousarray(getattr(f, name), dtype="<f8")
                    arrs[name] = {"offset": offset, "shape": list(a.shape)}
                    blobs.append(a.tobytes())
                    offset += a.nbytes
                entries.append({"kind": kind, "key": list(key), "arrays": arrs, "filled": list(f.filled)})
        header = json.dumps({"version": 1, "params": asdict(self.params), "k_range": list(self.k_range),
                             "fields": entries}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for b in blobs:
                fh.write(b)

    @classmethod
    def load(cls, path) -> "LookupDict":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:8] != MAGIC:
            raise ValueError(f"{path} is not a lookup store")
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + hlen])
        body = memoryview(raw)[16 + hlen:]
        lat, lon = {}, {}
        for e in header["fields"]:
            arrs = {}
            for name, spec in e["arrays"].items():
                n = int(np.prod(spec["shape"]))
                arrs[name] = np.frombuffer(body, dtype="<f8", count=n, offset=spec["offset"]).reshape(spec["shape"])
            key = tuple(e["key"])
            key = (key[0],) + tuple(int(v) for v in key[1:])
            field = DensityField(key, arrs["k_knots"], arrs["v_knots"], arrs["tx"], arrs["ty"],
                                 arrs["coeffs"], tuple(e["filled"]))
            (lat if e["kind"] == "lat" else lon)[key] = field
        return cls(lat, lon, LookupParams(**header["params"]), tuple(header["k_range"]))


def _group_by_key(grid: GmmGrid):
    """``{(dir, q[, lane]): {hecto: model}}``."""
    out: dict = {}
    for key, model in grid.models.items():
        field_key = (key[0], key[1]) + tuple(key[3:])
        out.setdefault(field_key, {})[key[2]] = model
    return out


def build_field(key, models_by_hecto: dict, hectos: np.ndarray, v_knots: np.ndarray) -> DensityField:
    if not models_by_hecto:
        raise EmptyKey(f"no fitted cell for key {key}")
    values, filled = _fill_rows(hectos, models_by_hecto, lambda m: m.pdf(v_knots))
    return DensityField.fit(key, hectos * HECTO_KM, v_knots, values, filled)


def build_lookup(lat_grid: GmmGrid, lon_grid: GmmGrid, k_range: tuple[float, float],
                 params: LookupParams = LookupParams(), keys: list | None = None) -> LookupDict:
    """Assemble sampled density arrays per key and fit interpolating splines over them.

    ``keys`` optionally lists field keys that must exist; a listed key with no
    fitted cell raises :class:`EmptyKey`.
    """
    hectos = hecto_knots(*k_range)
    lat_groups = _group_by_key(lat_grid)
    lon_groups = _group_by_key(lon_grid)
    for key in keys or ():
        groups = lat_groups if len(key) == 2 else lon_groups
        if key not in groups:
            raise EmptyKey(f"no fitted cell for key {key}")
    if not lat_groups or not lon_groups:
        raise EmptyKey("GMM grids must not be empty")
    lat = {key: build_field(key, g, hectos, params.offset_knots()) for key, g in sorted(lat_groups.items())}
    lon = {key: build_field(key, g, hectos, params.speed_knots()) for key, g in sorted(lon_groups.items())}
    return LookupDict(lat, lon, params, (hectos[0] * HECTO_KM, hectos[-1] * HECTO_KM))
