"""Non-learned 5-step predictors sharing the forward-difference KM rollout."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .context import LookupDict
from .errors import LookupFailure, ProfileGap
from .geometry import dir_sign
from .ingest import LabeledTrip, hecto_index
from .predictor.inference import rollout_km

N_PRED = 5
MIN_PROFILE_SAMPLES = 20
BASELINES = ("const-vel", "const-acc", "tp", "gmm")


def const_vel(x_obs, y_obs, n_pred: int = N_PRED) -> np.ndarray:
    """Hold the last observed offset and speed. Inputs ``(..., T)``; output ``(..., n_pred, 2)``."""
    x6 = np.asarray(x_obs, dtype=float)[..., -1]
    y6 = np.asarray(y_obs, dtype=float)[..., -1]
    out = np.empty(x6.shape + (n_pred, 2))
    out[..., 0] = x6[..., None]
    out[..., 1] = y6[..., None]
    return out


def const_acc(x_obs, y_obs, n_pred: int = N_PRED) -> np.ndarray:
    """Hold the last speed change; predicted speeds are clamped at zero."""
    y = np.asarray(y_obs, dtype=float)
    delta = y[..., -1] - y[..., -2]
    out = const_vel(x_obs, y_obs, n_pred)
    steps = np.arange(1, n_pred + 1)
    out[..., 1] = np.maximum(y[..., -1, None] + steps * delta[..., None], 0.0)
    return out


# -- typical profile -----------------------------------------------------------------


@dataclass
class TypicalProfile:
    """Per ``(dir, hecto)`` mean offset and speed, kept where enough samples exist."""

    table: dict  # (dir, hecto) -> (typ_offset_m, typ_speed_kmmin, n)

    @classmethod
    def fit(cls, trips: list[LabeledTrip], min_samples: int = MIN_PROFILE_SAMPLES) -> "TypicalProfile":
        acc: dict = {}
        for tr in trips:
            for h, x, y in zip(hecto_index(tr.km), tr.offset, tr.y):
                s = acc.setdefault((tr.dir, int(h)), [0.0, 0.0, 0])
                s[0] += x
                s[1] += y
                s[2] += 1
        return cls({k: (s[0] / s[2], s[1] / s[2], s[2]) for k, s in sorted(acc.items()) if s[2] >= min_samples})

    def lookup(self, direction: str, km) -> tuple[np.ndarray, np.ndarray]:
        """Typical offset and speed at each KM; raises ProfileGap where undefined."""
        hs = hecto_index(km)
        off = np.empty(hs.shape)
        spd = np.empty(hs.shape)
        for i, h in np.ndenumerate(hs):
            row = self.table.get((direction, int(h)))
            if row is None:
                raise ProfileGap(f"no typical profile at {direction} hecto {int(h)}")
            off[i], spd[i] = row[0], row[1]
        return off, spd

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dir", "hecto", "typ_offset_m", "typ_speed_kmmin", "n"])
            for (d, h), (o, s, n) in sorted(self.table.items()):
                w.writerow([d, h, repr(float(o)), repr(float(s)), int(n)])

    @classmethod
    def load(cls, path) -> "TypicalProfile":
        with open(path, newline="") as fh:
            return cls({(r["dir"], int(r["hecto"])): (float(r["typ_offset_m"]), float(r["typ_speed_kmmin"]), int(r["n"]))
                        for r in csv.DictReader(fh)})


def tp_baseline(km_obs, x_obs, y_obs, direction: str, profile: TypicalProfile,
                signed: bool = True, n_pred: int = N_PRED) -> np.ndarray:
    """Hold the mean observed deviation from the typical profile along the rollout.

    With ``signed=False`` the lateral deviation is the mean absolute distance
    from the typical route, placed on the side of the last observation.
    """
    km_obs = np.asarray(km_obs, dtype=float)
    x_obs = np.asarray(x_obs, dtype=float)
    y_obs = np.asarray(y_obs, dtype=float)
    typ_x, typ_y = profile.lookup(direction, km_obs)
    dx = x_obs - typ_x
    dev_x = dx.mean() if signed else np.abs(dx).mean() * (1.0 if dx[-1] >= 0 else -1.0)
    dev_y = (y_obs - typ_y).mean()
    s = dir_sign(direction)
    out = np.empty((n_pred, 2))
    km = km_obs[-1] + s * y_obs[-1]
    for t in range(n_pred):
        tx, ty = profile.lookup(direction, np.array([km]))
        out[t] = (tx[0] + dev_x, ty[0] + dev_y)
        km = km + s * out[t, 1]
    return out


# -- GMM mode baseline -------------------------------------------------------------------


def closest_argmax(values: np.ndarray, grid: np.ndarray, ref) -> np.ndarray:
    """Grid value of the row maximum; ties go to the one nearest ``ref``, then the smaller."""
    values = np.atleast_2d(values)
    ref = np.broadcast_to(np.asarray(ref, dtype=float), values.shape[:1])
    top = values >= values.max(axis=1, keepdims=True) * (1 - 1e-12)
    dist = np.where(top, np.abs(grid[None, :] - ref[:, None]), np.inf)
    # ascending grid: argmin picks the smaller value among equidistant candidates
    return grid[np.argmin(dist, axis=1)]


def gmm_baseline_batch(km_obs, x_obs, y_obs, direction: str, q_bin, lane, lookup: LookupDict,
                       n_pred: int = N_PRED) -> np.ndarray:
    """Vectorized mode-tracking baseline for samples sharing one direction.

    ``km_obs``, ``x_obs``, ``y_obs`` are ``(B, T)``; ``q_bin`` and ``lane`` hold
    the last observed state ``(B,)``. Raises LookupFailure if any sample
    cannot be resolved.
    """
    km_obs, x_obs, y_obs = (np.asarray(a, dtype=float) for a in (km_obs, x_obs, y_obs))
    q_bin = np.asarray(q_bin, dtype=float)
    lane = np.asarray(lane, dtype=int)
    offs, spds = lookup.params.offsets, lookup.params.speeds
    x6, y6, k6 = x_obs[:, -1], y_obs[:, -1], km_obs[:, -1]
    clamp = lookup.k_range

    def modes(k):
        k = np.clip(k, *clamp)
        lat = lookup.lat_rows(direction, q_bin, k)
        lon = lookup.lon_rows(direction, q_bin, lane, k)
        return closest_argmax(lat, offs, x6), closest_argmax(lon, spds, y6)

    mx0, my0 = modes(k6)
    dx, dy = x6 - mx0, y6 - my0
    s = dir_sign(direction)
    out = np.empty((len(k6), n_pred, 2))
    km = k6 + s * y6
    for t in range(n_pred):
        mx, my = modes(km)
        out[:, t, 0] = mx + dx
        out[:, t, 1] = my + dy
        km = km + s * out[:, t, 1]
    return out


def gmm_baseline(km_obs, x_obs, y_obs, direction: str, q_bin: float, lane: int, lookup: LookupDict,
                 n_pred: int = N_PRED) -> np.ndarray:
    """Single-sample form of :func:`gmm_baseline_batch`; returns ``(n_pred, 2)``."""
    return gmm_baseline_batch(np.atleast_2d(km_obs), np.atleast_2d(x_obs), np.atleast_2d(y_obs), direction,
                              [q_bin], [lane], lookup, n_pred)[0]


def lookup_ok(lookup: LookupDict, direction: str, q_bin: float, lane: int) -> bool:
    try:
        lookup.resolve_lat(direction, q_bin)
        lookup.resolve_lon(direction, q_bin, lane)
    except LookupFailure:
        return False
    return True


def baseline_kms(km_obs_last, y_obs_last, preds, direction: str) -> np.ndarray:
    return rollout_km(km_obs_last, y_obs_last, preds[..., 1], direction)
