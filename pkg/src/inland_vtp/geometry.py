"""River-adapted coordinate system.

Plane points are mapped to ``(km, offset)`` where ``km`` is the waterway
kilometer of the centerline foot point and ``offset`` the signed distance
from the fairway center, negative to the left in navigation direction.

KM labels increase in the ``"up"`` direction. The mapping uses per-vertex
normals interpolated linearly along each centerline segment, which makes
``project`` and ``unproject`` exact inverses inside the corridor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import OutOfCorridor, OutOfRange

DIRECTIONS = ("up", "down")
DEFAULT_CORRIDOR = 150.0


def dir_sign(direction: str) -> int:
    """+1 when navigating towards increasing KM, -1 otherwise."""
    if direction == "up":
        return 1
    if direction == "down":
        return -1
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class RiverCoord:
    km: float
    offset: float


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class RiverGeometry:
    """Centerline polyline with monotone KM labels and fairway boundaries.

    Parameters
    ----------
    centerline : (n, 2) array
        Plane coordinates of the fairway center in meters.
    km : (n,) array
        Strictly increasing KM labels of the centerline vertices.
    left, right : (m, 2) arrays
        Fairway boundaries, left/right when facing increasing KM.
    m_max : float
        Corridor half-width; offsets beyond it are rejected.
    """

    def __init__(self, centerline, km, left, right, m_max: float = DEFAULT_CORRIDOR):
        self.centerline = _readonly(centerline)
        self.km = _readonly(km)
        self.left = _readonly(left)
        self.right = _readonly(right)
        self.m_max = float(m_max)
        if self.centerline.ndim != 2 or self.centerline.shape[1] != 2 or len(self.centerline) < 2:
            raise ValueError("centerline must be an (n >= 2, 2) array")
        if self.km.shape != (len(self.centerline),):
            raise ValueError("km labels must match centerline vertices")
        if np.any(np.diff(self.km) <= 0):
            raise ValueError("KM labels must be strictly increasing")

        seg = np.diff(self.centerline, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise ValueError("centerline has repeated vertices")
        tangent = seg / seg_len[:, None]
        seg_normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])  # right of +KM travel

        normals = np.empty_like(self.centerline)
        normals[0] = seg_normal[0]
        normals[-1] = seg_normal[-1]
        avg = seg_normal[:-1] + seg_normal[1:]
        normals[1:-1] = avg / np.hypot(avg[:, 0], avg[:, 1])[:, None]

        # signed turning angle (counter-clockwise positive) per interior vertex
        cross = tangent[:-1, 0] * tangent[1:, 1] - tangent[:-1, 1] * tangent[1:, 0]
        dot = np.einsum("ij,ij->i", tangent[:-1], tangent[1:])
        turn = np.arctan2(cross, dot)
        kappa = np.zeros(len(self.centerline))
        kappa[1:-1] = turn / (0.5 * (seg_len[:-1] + seg_len[1:]))
        if len(kappa) > 2:
            kappa[0], kappa[-1] = kappa[1], kappa[-2]

        self._seg = _readonly(seg)
        self._seg_len = _readonly(seg_len)
        self._normals = _readonly(normals)
        self._dnormals = _readonly(np.diff(normals, axis=0))
        self._kappa_ccw = _readonly(kappa)
        self._tree = cKDTree(self.centerline)

        self._left_hw = self._boundary_profile(self.left)
        self._right_hw = self._boundary_profile(self.right)

    def _boundary_profile(self, boundary):
        km, off, found = self._locate(boundary, limit=None)
        km, off = km[found], np.abs(off[found])
        if len(km) == 0 or np.any(off <= 0):
            raise ValueError("fairway half-width must be positive everywhere")
        order = np.argsort(km, kind="stable")
        return _readonly(km[order]), _readonly(off[order])

    @classmethod
    def from_centerline(cls, centerline, km, half_width: float, m_max: float = DEFAULT_CORRIDOR):
        """Build a geometry whose boundaries sit at a constant distance from the center."""
        centerline = np.asarray(centerline, dtype=float)
        seg = np.diff(centerline, axis=0)
        t = seg / np.hypot(seg[:, 0], seg[:, 1])[:, None]
        nrm = np.column_stack([t[:, 1], -t[:, 0]])
        normals = np.vstack([nrm[:1], nrm[:-1] + nrm[1:], nrm[-1:]])
        normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
        return cls(centerline, km, centerline - half_width * normals,
                   centerline + half_width * normals, m_max=m_max)

    # -- basic properties -------------------------------------------------

    @property
    def k_min(self) -> float:
        return float(self.km[0])

    @property
    def k_max(self) -> float:
        return float(self.km[-1])

    @property
    def km_range(self) -> tuple[float, float]:
        return self.k_min, self.k_max

    @property
    def length_m(self) -> float:
        return float(self._seg_len.sum())

    def half_width(self, km, direction: str = "up"):
        """Fairway half-widths ``(left, right)`` in navigation direction at ``km``."""
        km = np.asarray(km, dtype=float)
        left = np.interp(km, *self._left_hw)
        right = np.interp(km, *self._right_hw)
        if dir_sign(direction) > 0:
            return left, right
        return right, left

    # -- projection ---------------------------------------------------------

    def _solve_segment(self, pts: np.ndarray, seg_idx: np.ndarray):
        """Invert ``p = P0 + u E + d (N0 + u dN)`` for each point/segment pair."""
        p0 = self.centerline[seg_idx]
        e = self._seg[seg_idx]
        n0 = self._normals[seg_idx]
        dn = self._dnormals[seg_idx]
        w = pts - p0

        def cross(a, b):
            return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]

        qa = -cross(e, dn)
        qb = cross(w, dn) - cross(e, n0)
        qc = cross(w, n0)
        disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
        denom = qb + np.where(qb >= 0, 1.0, -1.0) * np.sqrt(disc)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(np.abs(denom) > 0, -2.0 * qc / denom, 0.0)
        n = n0 + u[..., None] * dn
        r = w - u[..., None] * e
        d = np.einsum("...i,...i->...", r, n) / np.einsum("...i,...i->...", n, n)
        return u, d

    def _locate(self, pts, limit: float | None):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        nseg = len(self._seg)
        k = min(4, len(self.centerline))
        _, vidx = self._tree.query(pts, k=k)
        vidx = np.asarray(vidx).reshape(len(pts), k)
        cand = np.concatenate([vidx - 1, vidx], axis=1).clip(0, nseg - 1)
        u, d = self._solve_segment(pts[:, None, :], cand)
        eps = 1e-9
        ok = (u >= -eps) & (u <= 1 + eps) & np.isfinite(d)
        score = np.where(ok, np.abs(d), np.inf)
        best = np.argmin(score, axis=1)
        rows = np.arange(len(pts))
        found = np.isfinite(score[rows, best])
        seg = cand[rows, best]
        u_best = np.clip(u[rows, best], 0.0, 1.0)
        km = self.km[seg] + u_best * (self.km[seg + 1] - self.km[seg])
        off = d[rows, best]
        if limit is not None:
            bad = ~found | (np.abs(off) > limit)
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                raise OutOfCorridor(f"point {pts[i].tolist()} is outside the corridor (m_max={limit})")
        return km, off, found

    def project(self, points, direction: str = "up"):
        """Vectorized projection of ``(n, 2)`` plane points to ``(km, offset)`` arrays."""
        km, d, _ = self._locate(points, limit=self.m_max)
        return km, dir_sign(direction) * d

    def unproject(self, km, offset, direction: str = "up", limit_offset: bool = True) -> np.ndarray:
        """Vectorized inverse of :meth:`project`; returns ``(n, 2)`` plane points.

        With ``limit_offset=False`` offsets beyond the corridor are extrapolated
        along the interpolated normal instead of raising.
        """
        km = np.atleast_1d(np.asarray(km, dtype=float))
        offset = np.broadcast_to(np.asarray(offset, dtype=float), km.shape)
        tol = 1e-9
        if np.any((km < self.k_min - tol) | (km > self.k_max + tol)) or not np.all(np.isfinite(km)):
            raise OutOfRange(f"KM outside [{self.k_min}, {self.k_max}]")
        if not np.all(np.isfinite(offset)) or (limit_offset and np.any(np.abs(offset) > self.m_max)):
            raise OutOfRange(f"offset beyond corridor half-width {self.m_max}")
        seg = np.clip(np.searchsorted(self.km, km, side="right") - 1, 0, len(self._seg) - 1)
        u = (km - self.km[seg]) / (self.km[seg + 1] - self.km[seg])
        d = dir_sign(direction) * offset
        n = self._normals[seg] + u[:, None] * self._dnormals[seg]
        return self.centerline[seg] + u[:, None] * self._seg[seg] + d[:, None] * n

    def curvature(self, km, direction: str = "up"):
        """Signed inverse radius, positive for right-hand curves in navigation direction."""
        km = np.asarray(km, dtype=float)
        if np.any((km < self.k_min - 1e-9) | (km > self.k_max + 1e-9)):
            raise OutOfRange(f"KM outside [{self.k_min}, {self.k_max}]")
        return -dir_sign(direction) * np.interp(km, self.km, self._kappa_ccw)

    def lanes(self, km, offset, direction: str = "up") -> np.ndarray:
        """Vectorized lane index (1..4) for river coordinates."""
        offset = np.asarray(offset, dtype=float)
        hw_left, hw_right = self.half_width(km, direction)
        return np.where(
            offset < 0,
            np.where(-offset <= hw_left, 2, 1),
            np.where(offset <= hw_right, 3, 4),
        ).astype(int)

    # -- IO -------------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "centerline": [{"km": float(k), "x": float(x), "y": float(y)}
                           for k, (x, y) in zip(self.km, self.centerline)],
            "left": [{"x": float(x), "y": float(y)} for x, y in self.left],
            "right": [{"x": float(x), "y": float(y)} for x, y in self.right],
            "m_max": self.m_max,
        }

    @classmethod
    def from_json(cls, data: dict, m_max: float | None = None) -> "RiverGeometry":
        c = data["centerline"]
        return cls(
            centerline=[[p["x"], p["y"]] for p in c],
            km=[p["km"] for p in c],
            left=[[p["x"], p["y"]] for p in data["left"]],
            right=[[p["x"], p["y"]] for p in data["right"]],
            m_max=m_max if m_max is not None else data.get("m_max", DEFAULT_CORRIDOR),
        )


def load_geometry(path, m_max: float | None = None) -> RiverGeometry:
    with open(path) as fh:
        return RiverGeometry.from_json(json.load(fh), m_max=m_max)


def save_geometry(geom: RiverGeometry, path) -> None:
    Path(path).write_text(json.dumps(geom.to_json(), sort_keys=True))


def project_to_river(point, geom: RiverGeometry, direction: str = "up") -> RiverCoord:
    km, off = geom.project(np.asarray(point, dtype=float)[None, :], direction)
    return RiverCoord(float(km[0]), float(off[0]))


def unproject(coord: RiverCoord, geom: RiverGeometry, direction: str = "up") -> np.ndarray:
    return geom.unproject([coord.km], [coord.offset], direction)[0]


def curvature_at(km: float, geom: RiverGeometry, direction: str = "up") -> float:
    return float(geom.curvature(km, direction))


def lane_of(coord: RiverCoord, geom: RiverGeometry, direction: str = "up") -> int:
    return int(geom.lanes(coord.km, coord.offset, direction))
