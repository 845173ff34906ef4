"""Sequence samples: stacked windows plus on-demand context features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..context import LookupDict
from ..errors import LookupFailure
from ..ingest import Window

N_STEPS = 11
T_OBS = 6


@dataclass
class SequenceSample:
    """One instance with its full context, mostly for inspection and tests."""

    vessel: np.ndarray  # (N, 3) offset m, speed km/min, curvature 1/m
    p_lat: np.ndarray  # (N, D)
    p_lon: np.ndarray  # (N, V)
    m_lat: np.ndarray  # (N, H, D)
    m_lon: np.ndarray  # (N, H, V)
    k_obs: float
    dir: str
    q_bin: float
    trip_id: str

    @property
    def targets(self) -> np.ndarray:
        return self.vessel[T_OBS:, :2]


def context_features(lookup: LookupDict, direction: str, q_bin, lane, km, branches=("p_lat", "p_lon", "m_lat", "m_lon")):
    """Context arrays for states given as ``(n, T)`` arrays of discharge, lane and KM.

    Ahead matrices assume constant discharge and lane.
    """
    km = np.clip(np.asarray(km, dtype=float), *lookup.k_range)
    q_bin = np.asarray(q_bin, dtype=float)
    lane = np.asarray(lane)
    out = {}
    if "p_lat" in branches:
        out["p_lat"] = lookup.lat_rows(direction, q_bin, km)
    if "p_lon" in branches:
        out["p_lon"] = lookup.lon_rows(direction, q_bin, lane, km)
    if "m_lat" in branches or "m_lon" in branches:
        ahead, _ = lookup.ahead_kms(direction, km)  # (n, T, H)
        qh = np.broadcast_to(q_bin[..., None], ahead.shape)
        lh = np.broadcast_to(lane[..., None], ahead.shape)
        if "m_lat" in branches:
            out["m_lat"] = lookup.lat_rows(direction, qh, ahead)
        if "m_lon" in branches:
            out["m_lon"] = lookup.lon_rows(direction, qh, lh, ahead)
    return out


@dataclass
class SampleSet:
    trip_id: np.ndarray
    dir: np.ndarray
    km: np.ndarray
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    q_bin: np.ndarray
    lane: np.ndarray
    n_discarded: int = 0

    def __len__(self) -> int:
        return len(self.trip_id)

    @property
    def n_steps(self) -> int:
        return self.km.shape[1]

    @classmethod
    def from_windows(cls, windows: list[Window], lookup: LookupDict | None = None) -> "SampleSet":
        """Stack windows; with a lookup, windows whose context cannot be resolved are discarded."""
        keep, dropped = [], 0
        for w in windows:
            if lookup is not None and not _resolvable(lookup, w):
                dropped += 1
                continue
            keep.append(w)
        n = len(keep[0].km) if keep else N_STEPS

        def stack(attr, dtype=float):
            return np.array([getattr(w, attr) for w in keep], dtype=dtype).reshape(len(keep), n)

        return cls(
            trip_id=np.array([w.trip_id for w in keep], dtype=object),
            dir=np.array([w.dir for w in keep], dtype=object),
            km=stack("km"), x=stack("offset"), y=stack("y"), a=stack("a"),
            q_bin=stack("q_bin"), lane=stack("lane", int), n_discarded=dropped,
        )

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(self.trip_id[idx], self.dir[idx], self.km[idx], self.x[idx], self.y[idx],
                         self.a[idx], self.q_bin[idx], self.lane[idx], 0)

    def vessel(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.a], axis=-1)

    def context(self, lookup: LookupDict, steps: slice, branches) -> dict:
        """Context arrays for the given step slice; groups samples by direction."""
        T = len(range(*steps.indices(self.n_steps)))
        n = len(self)
        shapes = {"p_lat": (lookup.D,), "p_lon": (lookup.V,), "m_lat": (lookup.H, lookup.D),
                  "m_lon": (lookup.H, lookup.V)}
        out = {b: np.empty((n, T) + shapes[b]) for b in branches if b in shapes}
        for d in np.unique(self.dir):
            sel = self.dir == d
            part = context_features(lookup, d, self.q_bin[sel, steps], self.lane[sel, steps],
                                    self.km[sel, steps], branches)
            for b, arr in part.items():
                out[b][sel] = arr
        return out

    def sample(self, i: int, lookup: LookupDict) -> SequenceSample:
        one = self.subset([i])
        ctx = one.context(lookup, slice(0, self.n_steps), BRANCH_ALL)
        return SequenceSample(one.vessel()[0], ctx["p_lat"][0], ctx["p_lon"][0], ctx["m_lat"][0],
                              ctx["m_lon"][0], float(self.km[i, T_OBS - 1]), str(self.dir[i]),
                              float(self.q_bin[i, T_OBS - 1]), str(self.trip_id[i]))


BRANCH_ALL = ("p_lat", "p_lon", "m_lat", "m_lon")


def _resolvable(lookup: LookupDict, w: Window) -> bool:
    try:
        for q, ln in zip(w.q_bin[:-1], w.lane[:-1]):
            lookup.resolve_lat(w.dir, q)
            lookup.resolve_lon(w.dir, q, int(ln))
    except LookupFailure:
        return False
    return True


def to_inputs(vessel: np.ndarray, ctx: dict, branches, dtype=torch.float32) -> dict:
    out = {"vessel": torch.as_tensor(vessel, dtype=dtype)}
    for b in branches:
        if b != "vessel":
            out[b] = torch.as_tensor(ctx[b], dtype=dtype)
    return out


def batch_inputs(samples: SampleSet, lookup: LookupDict | None, branches, t_obs: int = T_OBS,
                 dtype=torch.float32):
    """Encoder inputs (steps ``1..t_obs-1``), teacher-forced decoder inputs and targets."""
    n_ctx = samples.n_steps - 1
    vessel = samples.vessel()
    ctx_branches = [b for b in branches if b != "vessel"]
    ctx = samples.context(lookup, slice(0, n_ctx), ctx_branches) if ctx_branches else {}
    src = to_inputs(vessel[:, : t_obs - 1], {b: v[:, : t_obs - 1] for b, v in ctx.items()}, branches, dtype)
    tgt = to_inputs(vessel[:, t_obs - 1: n_ctx], {b: v[:, t_obs - 1:] for b, v in ctx.items()}, branches, dtype)
    target = torch.as_tensor(vessel[:, t_obs:, :2], dtype=dtype)
    return src, tgt, target
