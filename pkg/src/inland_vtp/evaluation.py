"""Displacement metrics and the shared comparison harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .baselines import TypicalProfile, const_acc, const_vel, gmm_baseline_batch, lookup_ok, tp_baseline
from .context import LookupDict
from .errors import LookupFailure, ProfileGap
from .geometry import RiverGeometry
from .predictor.inference import predict_point, rollout_km
from .predictor.samples import T_OBS, SampleSet



def displacement_errors(pred, truth, geom: RiverGeometry, direction: str, limit_offset: bool = True) -> np.ndarray:
    """Plane distances in metres between ``(km, offset)`` sequences of shape ``(..., 2)``."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    shape = pred.shape[:-1]
    p = geom.unproject(pred[..., 0].ravel(), pred[..., 1].ravel(), direction, limit_offset)
    t = geom.unproject(truth[..., 0].ravel(), truth[..., 1].ravel(), direction, limit_offset)
    return np.hypot(*(p - t).T).reshape(shape)


def ade_fde(errors) -> tuple[float, float]:
    e = np.asarray(errors, dtype=float)
    return float(e.mean()), float(e[-1])


# -- predictors -----------------------------------------------------------------------
# Each predictor maps a SampleSet to (offsets (B, 5), kms (B, 5), ok (B,)).


class Predictor:
    learned = False

    def __call__(self, samples: SampleSet):
        raise NotImplementedError


def _obs(samples: SampleSet):
    return samples.km[:, :T_OBS], samples.x[:, :T_OBS], samples.y[:, :T_OBS]


def _by_direction(samples: SampleSet, fn):
    n = len(samples)
    xs, ks, ok = np.full((n, 5), np.nan), np.full((n, 5), np.nan), np.zeros(n, bool)
    for d in np.unique(samples.dir):
        sel = np.flatnonzero(samples.dir == d)
        x, k, good = fn(samples.subset(sel), d)
        xs[sel], ks[sel], ok[sel] = x, k, good
    return xs, ks, ok


class TruthPredictor(Predictor):
    def __call__(self, samples):
        return samples.x[:, T_OBS:], samples.km[:, T_OBS:], np.ones(len(samples), bool)


class ConstVel(Predictor):
    def __call__(self, samples):
        return _by_direction(samples, lambda s, d: _kinematic(s, d, const_vel))


class ConstAcc(Predictor):
    def __call__(self, samples):
        return _by_direction(samples, lambda s, d: _kinematic(s, d, const_acc))


def _kinematic(s: SampleSet, d: str, fn):
    km, x, y = _obs(s)
    p = fn(x, y)
    return p[..., 0], rollout_km(km[:, -1], y[:, -1], p[..., 1], d), np.ones(len(s), bool)


class TypicalProfilePredictor(Predictor):
    def __init__(self, profile: TypicalProfile, signed: bool = True):
        self.profile = profile
        self.signed = signed

    def __call__(self, samples):
        def run(s, d):
            km, x, y = _obs(s)
            xs, ks, ok = np.full((len(s), 5), np.nan), np.full((len(s), 5), np.nan), np.zeros(len(s), bool)
            for i in range(len(s)):
                try:
                    p = tp_baseline(km[i], x[i], y[i], d, self.profile, self.signed)
                except ProfileGap:
                    continue
                xs[i], ks[i], ok[i] = p[:, 0], rollout_km(km[i, -1], y[i, -1], p[:, 1], d), True
            return xs, ks, ok
        return _by_direction(samples, run)


class GmmPredictor(Predictor):
    def __init__(self, lookup: LookupDict):
        self.lookup = lookup

    def __call__(self, samples):
        def run(s, d):
            q, ln = s.q_bin[:, T_OBS - 1], s.lane[:, T_OBS - 1]
            ok = np.array([lookup_ok(self.lookup, d, qi, li) for qi, li in zip(q, ln)], bool)
            xs, ks = np.full((len(s), 5), np.nan), np.full((len(s), 5), np.nan)
            if ok.any():
                km, x, y = _obs(s.subset(np.flatnonzero(ok)))
                p = gmm_baseline_batch(km, x, y, d, q[ok], ln[ok], self.lookup)
                xs[ok] = p[..., 0]
                ks[ok] = rollout_km(km[:, -1], y[:, -1], p[..., 1], d)
            return xs, ks, ok
        return _by_direction(samples, run)


class ModelPredictor(Predictor):
    learned = True

    def __init__(self, model, lookup: LookupDict | None, geom: RiverGeometry, n: int = 40, seed: int = 0,
                 freeze_context: bool = False):
        self.model, self.lookup, self.geom = model, lookup, geom
        self.n, self.seed, self.freeze = n, seed, freeze_context

    def __call__(self, samples):
        try:
            preds, kms = predict_point(self.model, samples, self.lookup, self.geom, self.n, self.seed, self.freeze)
        except LookupFailure:
            return np.full((len(samples), 5), np.nan), np.full((len(samples), 5), np.nan), np.zeros(len(samples), bool)
        return preds[..., 0], kms, np.ones(len(samples), bool)


# -- comparison -------------------------------------------------------------------------


@dataclass
class ModelResult:
    name: str
    errors: np.ndarray  # (n, 5) over evaluated samples
    skipped: int
    skip_reasons: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.errors)

    @property
    def ade(self) -> np.ndarray:
        return self.errors.mean(axis=1)

    @property
    def fde(self) -> np.ndarray:
        return self.errors[:, -1]

    def summary(self) -> dict:
        ade, fde = self.ade, self.fde
        sd = (lambda a: float(a.std(ddof=1)) if len(a) > 1 else 0.0)
        return {"model": self.name, "ade_mean": float(ade.mean()) if self.n else float("nan"),
                "ade_sd": sd(ade), "fde_mean": float(fde.mean()) if self.n else float("nan"),
                "fde_sd": sd(fde), "n": self.n, "skipped": self.skipped}

    def per_step(self) -> list[dict]:
        rows = []
        for j in range(self.errors.shape[1]):
            rows.append({"model": self.name, "step": j + 1, **box_stats(self.errors[:, j])})
        return rows


def box_stats(values) -> dict:
    """Quartiles and Tukey whiskers (furthest data within 1.5 IQR of the box)."""
    v = np.sort(np.asarray(values, dtype=float))
    if not len(v):
        return {k: float("nan") for k in ("q1", "median", "q3", "lo", "hi")}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return {"q1": float(q1), "median": float(med), "q3": float(q3), "lo": float(lo), "hi": float(hi)}


@dataclass
class EvalReport:
    results: list  # [ModelResult]

    def table(self) -> list[dict]:
        return [r.summary() for r in self.results]

    def by_name(self, name: str) -> ModelResult:
        return next(r for r in self.results if r.name == name)

    def write(self, report_path, per_step_path) -> None:
        _write_csv(report_path, ["model", "ade_mean", "ade_sd", "fde_mean", "fde_sd", "n", "skipped"], self.table())
        rows = [row for r in self.results for row in r.per_step()]
        _write_csv(per_step_path, ["model", "step", "q1", "median", "q3", "lo", "hi"], rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def compare(models: dict, samples: SampleSet, geom: RiverGeometry) -> EvalReport:
    """Evaluate each predictor on the same samples.

    Baselines get their first predicted KM replaced by the true one. Samples a
    predictor cannot handle, or whose predicted KM leaves the river, are
    counted as skipped for that predictor.
    """
    true_km = samples.km[:, T_OBS:]
    true_x = samples.x[:, T_OBS:]
    results = []
    for name, pred in models.items():
        xs, ks, ok = pred(samples)
        ks = np.array(ks, dtype=float)
        if not getattr(pred, "learned", False):
            ks[:, 0] = true_km[:, 0]
        errs = np.full(xs.shape, np.nan)
        out_of_range = 0
        for d in np.unique(samples.dir):
            sel = np.flatnonzero((samples.dir == d) & ok)
            if not len(sel):
                continue
            inside = np.all((ks[sel] >= geom.k_min) & (ks[sel] <= geom.k_max) & np.isfinite(xs[sel]), axis=1)
            out_of_range += int((~inside).sum())
            sel = sel[inside]
            errs[sel] = displacement_errors(np.stack([ks[sel], xs[sel]], -1), np.stack([true_km[sel], true_x[sel]], -1),
                                            geom, d, limit_offset=False)
        good = np.all(np.isfinite(errs), axis=1)
        results.append(ModelResult(name, errs[good], int((~good).sum()),
                                   {"unsupported": int((~ok).sum()), "out_of_range": out_of_range}))
    return EvalReport(results)


def default_predictors(lookup: LookupDict | None, profile: TypicalProfile | None) -> dict:
    out = {"Const-Vel": ConstVel(), "Const-Acc": ConstAcc()}
    if profile is not None:
        out["TP"] = TypicalProfilePredictor(profile)
    if lookup is not None:
        out["GMM"] = GmmPredictor(lookup)
    return out


def ablation_suite(trained: dict, samples: SampleSet, lookup: LookupDict, geom: RiverGeometry,
                   profile: TypicalProfile | None = None, seed: int = 0, n: int = 40,
                   with_baselines: bool = True) -> EvalReport:
    """Compare trained variants (``{label: model}``) and optionally the baselines on one split."""
    models = default_predictors(lookup, profile) if with_baselines else {}
    for label, model in trained.items():
        models[label] = ModelPredictor(model, lookup if model.cfg.variant != "trans" else None, geom, n, seed)
    return compare(models, samples, geom)

