"""Univariate Gaussian mixtures: EM fitting, BIC scoring and grid-search selection."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import logsumexp

from .errors import InsufficientData
from .ingest import LabeledTrip, hecto_index

VAR_FLOOR = 1e-6
WEIGHT_FLOOR = 1e-12
CONSTRAINTS = ("distinct", "tied")
MIN_CELL_SAMPLES = 20
# per-kind floors for fitted cells: sd 1 m laterally, 0.005 km/min longitudinally,
# so no component is narrower than the lookup grids can sample
KIND_VAR_FLOOR = {"lateral": 1.0, "longitudinal": 2.5e-5}
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Gmm1D:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    constraint: str = "distinct"
    loglik: float = float("nan")
    bic: float = float("nan")
    n: int = 0
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)

    @property
    def C(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return param_count(self.C, self.constraint)

    def log_pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return logsumexp(_component_logpdf(x[..., None], self.means, self.variances)
                         + np.log(self.weights), axis=-1)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.log_pdf(x))

    def pooled_sd(self) -> float:
        """Standard deviation of the whole mixture."""
        m = float(self.weights @ self.means)
        return math.sqrt(float(self.weights @ (self.variances + (self.means - m) ** 2)))

    def to_json(self) -> dict:
        return {"C": self.C, "weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist(), "constraint": self.constraint,
                "loglik": self.loglik, "bic": self.bic, "n": self.n}

    @classmethod
    def from_json(cls, d: dict) -> "Gmm1D":
        return cls(d["weights"], d["means"], d["variances"], d["constraint"],
                   d["loglik"], d["bic"], d["n"])


def _component_logpdf(x, means, variances):
    return -0.5 * (_LOG_2PI + np.log(variances) + (x - means) ** 2 / variances)


def pdf(model: Gmm1D, x):
    """Weighted sum of component densities."""
    return model.pdf(x)


def param_count(C: int, constraint: str) -> int:
    if C < 1:
        raise ValueError("C must be >= 1")
    if constraint == "distinct":
        return 3 * C - 1
    if constraint == "tied":
        return 2 * C
    raise ValueError(f"unknown constraint {constraint!r}")


def bic(model: Gmm1D, S: int) -> float:
    return model.n_params * math.log(S) - 2.0 * model.loglik


def bic_value(b: int, S: int, loglik: float) -> float:
    return b * math.log(S) - 2.0 * loglik


# -- EM ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _em_kernel(x, means, variances, weights, tied, tol, max_iter, history, var_floor):
    n = x.shape[0]
    C = means.shape[0]
    logp = np.empty(C)
    const = np.empty(C)
    half_prec = np.empty(C)
    nk = np.empty(C)
    sx = np.empty(C)
    sxx = np.empty(C)
    prev = -np.inf
    it = 0
    while True:
        for c in range(C):
            nk[c] = 0.0
            sx[c] = 0.0
            sxx[c] = 0.0
            const[c] = np.log(weights[c]) - 0.5 * (_LOG_2PI + np.log(variances[c]))
            half_prec[c] = 0.5 / variances[c]
        ll = 0.0
        for i in range(n):
            mx = -np.inf
            for c in range(C):
                d = x[i] - means[c]
                logp[c] = const[c] - half_prec[c] * d * d
                if logp[c] > mx:
                    mx = logp[c]
            tot = 0.0
            for c in range(C):
                logp[c] = np.exp(logp[c] - mx)
                tot += logp[c]
            ll += np.log(tot) + mx
            for c in range(C):
                r = logp[c] / tot
                nk[c] += r
                sx[c] += r * x[i]
                sxx[c] += r * x[i] * x[i]
        history[it] = ll
        it += 1
        if abs(ll - prev) < tol or it > max_iter:
            return it
        prev = ll
        wsum = 0.0
        for c in range(C):
            wsum += max(nk[c], WEIGHT_FLOOR)
        pooled = 0.0
        for c in range(C):
            weights[c] = max(nk[c], WEIGHT_FLOOR) / wsum
            if nk[c] > WEIGHT_FLOOR:
                means[c] = sx[c] / nk[c]
            # centered second moment from the same pass
            sq = sxx[c] - 2.0 * means[c] * sx[c] + means[c] * means[c] * nk[c]
            sq = max(sq, 0.0)
            pooled += sq
            if nk[c] > WEIGHT_FLOOR:
                variances[c] = max(sq / nk[c], var_floor)
        if tied:
            v = max(pooled / n, var_floor)
            for c in range(C):
                variances[c] = v


def _em_run(x, means, variances, weights, tied, tol, max_iter, var_floor=VAR_FLOOR):
    means = np.array(means, dtype=float)
    variances = np.array(variances, dtype=float)
    weights = np.array(weights, dtype=float)
    history = np.empty(max_iter + 1)
    k = _em_kernel(x, means, variances, weights, tied, tol, max_iter, history, float(var_floor))
    return weights, means, variances, history[:k].tolist()


def fit_em(data, C: int, constraint: str = "distinct", seed: int = 0, restarts: int = 3,
           tol: float = 1e-6, max_iter: int = 200, var_floor: float = VAR_FLOOR) -> Gmm1D:
    """Fit a ``C``-component mixture by EM, keeping the best of ``restarts`` runs.

    Means start at evenly spread quantiles; restarts after the first jitter
    them by a fraction of the data spread. Variances never drop below
    ``var_floor``.
    """
    x = np.asarray(data, dtype=float).ravel()
    if len(x) < 5 * C:
        raise InsufficientData(f"{len(x)} samples for C={C}, need {5 * C}")
    tied = constraint == "tied"
    if constraint not in CONSTRAINTS:
        raise ValueError(f"unknown constraint {constraint!r}")
    rng = np.random.default_rng(seed)
    q_means = np.quantile(x, (np.arange(C) + 0.5) / C)
    spread = max(float(x.std()), math.sqrt(var_floor))
    var0 = max(float(x.var()) / C, var_floor)
    best = None
    for r in range(restarts):
        means = q_means + (rng.normal(0.0, 0.25 * spread / C, size=C) if r > 0 else 0.0)
        w, mu, var, hist = _em_run(x, means, np.full(C, var0), np.full(C, 1.0 / C), tied, tol, max_iter, var_floor)
        if best is None or hist[-1] > best[3][-1]:
            best = (w, mu, var, hist)
    w, mu, var, hist = best
    model = Gmm1D(w, mu, var, constraint, loglik=hist[-1], n=len(x), history=hist)
    model.bic = bic(model, len(x))
    return model


def grid_search(data, C_max: int = 4, constraints=CONSTRAINTS, seed: int = 0,
                var_floor: float = VAR_FLOOR) -> Gmm1D:
    """Return the lowest-BIC model over component counts and covariance constraints.

    Ties go to the smaller parameter count, then to the tied constraint.
    """
    x = np.asarray(data, dtype=float).ravel()
    if len(x) < 5:
        raise InsufficientData(f"{len(x)} samples, need >= 5")
    fitted = []
    for C in range(1, C_max + 1):
        if len(x) < 5 * C:
            break
        for cons in constraints:
            m = fit_em(x, C, cons, seed=seed + 7919 * C + (1 if cons == "tied" else 0), var_floor=var_floor)
            fitted.append(m)
    return min(fitted, key=lambda m: (m.bic, m.n_params, 0 if m.constraint == "tied" else 1))


# -- per-cell fitting -------------------------------------------------------------------


def grid_key(direction: str, q_bin: float, hecto: int, lane: int | None = None) -> tuple:
    return (direction, int(round(q_bin)), int(hecto)) if lane is None else \
        (direction, int(round(q_bin)), int(hecto), int(lane))


def key_to_str(key: tuple) -> str:
    parts = [key[0], str(key[1]), f"{key[2] / 10:.1f}"]
    if len(key) > 3:
        parts.append(str(key[3]))
    return "|".join(parts)


def key_from_str(s: str) -> tuple:
    parts = s.split("|")
    base = (parts[0], int(parts[1]), int(round(float(parts[2]) * 10)))
    return base + ((int(parts[3]),) if len(parts) > 3 else ())


def _cell_seed(seed: int, key: tuple) -> int:
    return (seed * 1_000_003 + zlib.crc32(key_to_str(key).encode())) % (2**32)


@dataclass
class GmmGrid:
    kind: str
    models: dict  # key tuple -> Gmm1D
    skipped: dict  # key tuple -> sample count

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "models": {key_to_str(k): {**m.to_json()} for k, m in sorted(self.models.items())},
            "skipped": {key_to_str(k): n for k, n in sorted(self.skipped.items())},
        }

    @classmethod
    def from_json(cls, d: dict) -> "GmmGrid":
        return cls(d["kind"], {key_from_str(k): Gmm1D.from_json(v) for k, v in d["models"].items()},
                   {key_from_str(k): n for k, n in d["skipped"].items()})

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GmmGrid":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def group_cells(trips: list[LabeledTrip], kind: str) -> dict:
    if kind not in ("lateral", "longitudinal"):
        raise ValueError(f"unknown kind {kind!r}")
    cells: dict = {}
    for tr in trips:
        hec = hecto_index(tr.km)
        vals = tr.offset if kind == "lateral" else tr.y
        for i in range(len(tr)):
            if not np.isfinite(vals[i]):
                continue
            lane = int(tr.lane[i]) if kind == "longitudinal" else None
            cells.setdefault(grid_key(tr.dir, tr.q_bin[i], hec[i], lane), []).append(vals[i])
    return cells


def fit_grid(trips: list[LabeledTrip], kind: str, seed: int = 0, C_max: int = 4,
             min_samples: int = MIN_CELL_SAMPLES, var_floor: float | None = None) -> GmmGrid:
    """Grid-search a mixture per (direction, discharge, hectometer[, lane]) cell.

    ``var_floor`` defaults to the per-kind floor in ``KIND_VAR_FLOOR``.
    """
    models, skipped = {}, {}
    floor = KIND_VAR_FLOOR.get(kind, VAR_FLOOR) if var_floor is None else var_floor
    for key, vals in sorted(group_cells(trips, kind).items()):
        if len(vals) < min_samples:
            skipped[key] = len(vals)
            continue
        models[key] = grid_search(np.array(vals), C_max=C_max, seed=_cell_seed(seed, key), var_floor=floor)
    return GmmGrid(kind, models, skipped)
